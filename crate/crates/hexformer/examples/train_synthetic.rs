//! Train a small hyperbolic transformer on the synthetic hierarchical image
//! dataset and print per-epoch metrics. A nearest-prototype oracle gives the
//! ceiling for comparison.
//!
//! Run with: cargo run --release --example train_synthetic

use hexformer::data::synthetic::{nearest_prototype_accuracy, prototypes};
use hexformer::harness::{load_datasets, train, DatasetSpec, TrainConfig};
use hexformer::model::{ModelConfig, Variant};
use hexformer::attention::Aggregation;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> hexformer::Result<()> {
    let model = ModelConfig::desk(Variant::Hexformer, Aggregation::ExpAgg);
    let mut cfg = TrainConfig::desk(model);
    cfg.epochs = 10;
    cfg.seed = 3;

    // How separable is the data at all? The nearest-prototype oracle knows
    // the generating templates and upper-bounds what a classifier can do.
    let (train_ds, test_ds) = load_datasets(&cfg.dataset, cfg.seed)?;
    if let DatasetSpec::Synthetic { spec, .. } = &cfg.dataset {
        let protos = {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5337_AB1E);
            prototypes(spec, &mut rng)?
        };
        println!(
            "dataset: {} train / {} test samples, {} classes; oracle accuracy {:.4}",
            train_ds.len(),
            test_ds.len(),
            train_ds.classes,
            nearest_prototype_accuracy(&test_ds, &protos, spec.pixel_scale)
        );
    }

    let out = train::<f64>(&cfg)?;
    for m in &out.metrics {
        println!(
            "epoch {:>2}: train loss {:.4}, test accuracy {:.4}, lr {:.3e}",
            m.epoch, m.train_loss, m.test_accuracy, m.lr
        );
    }
    println!(
        "final test accuracy after {} epochs: {:.4} ({} watchdog events)",
        out.summary.epochs_run, out.summary.final_test_accuracy, out.summary.watchdog_events
    );
    Ok(())
}
