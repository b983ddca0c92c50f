//! Record log-spaced gradient-magnitude histograms over a few optimization
//! steps and render them as sparklines, f64 on the left and f32 on the right.
//!
//! Run with: cargo run --example gradient_histograms

use hexformer::attention::Aggregation;
use hexformer::model::{forward, init_model, ModelConfig, Variant};
use hexformer::optim::{label_smoothing_ce, riemannian_adamw_step, OptimState};
use hexformer::params::ParamStore;
use hexformer::scalar::Scalar;
use hexformer::stability::{record_grad_histogram, GradHistogramRecord, HIST_BINS};
use hexformer::tensor::{Tape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn run<T: Scalar>(steps: usize) -> hexformer::Result<Vec<GradHistogramRecord>> {
    let mut cfg = ModelConfig::desk(Variant::Hexformer, Aggregation::ExpAgg);
    cfg.classes = 4;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut store: ParamStore<T> = ParamStore::new();
    init_model(&mut store, &cfg, &mut rng)?;
    let mut opt: OptimState<T> = OptimState::new(0.05);

    let mut records = Vec::new();
    for step in 0..steps {
        let pixels: Vec<T> = (0..cfg.image_size * cfg.image_size)
            .map(|_| T::from_f64(rng.gen_range(-1.0..1.0)))
            .collect();
        let image = Tensor::from_vec(pixels, &[1, cfg.image_size, cfg.image_size])?;
        let mut tape = Tape::new();
        store.zero_grads();
        let (logits, _) = forward(&mut tape, &mut store, &cfg, &image, true)?;
        let loss = label_smoothing_ce(&mut tape, &logits, step % cfg.classes, 0.1)?;
        tape.backward(&loss)?;
        store.accumulate_grads(&tape, T::one())?;
        records.push(record_grad_histogram(&store, step));
        riemannian_adamw_step(&mut store, &mut opt, 1e-3, cfg.curv())?;
    }
    Ok(records)
}

fn sparkline(rec: &GradHistogramRecord) -> String {
    const GLYPHS: [char; 8] = [' ', '▁', '▂', '▃', '▄', '▅', '▆', '▇'];
    let max = rec.bins.iter().copied().max().unwrap_or(0).max(1);
    rec.bins
        .iter()
        .map(|&b| GLYPHS[(b as usize * (GLYPHS.len() - 1)).div_ceil(max as usize).min(7)])
        .collect()
}

fn main() -> hexformer::Result<()> {
    let steps = 5;
    let f64_recs = run::<f64>(steps)?;
    let f32_recs = run::<f32>(steps)?;
    println!("|gradient| binned into {HIST_BINS} log10 bins over [1e-12, 1e4)");
    println!("{:>4}  {:<66} {:<66}", "step", "f64", "f32");
    for (a, b) in f64_recs.iter().zip(&f32_recs) {
        assert!(a.is_conserved() && b.is_conserved());
        println!("{:>4}  |{}| |{}|", a.iteration, sparkline(a), sparkline(b));
    }
    let (a, b) = (f64_recs.last().unwrap(), f32_recs.last().unwrap());
    println!(
        "\nfinal step: f64 zeros/underflow/nonfinite = {}/{}/{} of {}; \
         f32 = {}/{}/{} of {}",
        a.zeros, a.underflow, a.nonfinite, a.total, b.zeros, b.underflow, b.nonfinite, b.total
    );
    Ok(())
}
