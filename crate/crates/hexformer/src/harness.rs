//! Training and evaluation harness: the epoch loop, per-batch gradient
//! accumulation, schedule-driven optimizer steps, watchdog checks, and
//! line-delimited run artifacts (metrics, gradient histograms, watchdog
//! events, checkpoint).
//!
//! Metrics records are deterministic functions of (config, seed, precision):
//! wall-clock timing is deliberately kept out of the logged records so two
//! identical runs produce byte-identical logs.

use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::synthetic::{synth_hierarchical, SyntheticSpec};
use crate::data::Dataset;
use crate::error::{HexError, Result};
use crate::model::{forward, init_model, ModelConfig};
use crate::optim::{
    adamw_step, label_smoothing_ce, riemannian_adamw_step, Optimizer, OptimState, Schedule,
};
use crate::params::ParamStore;
use crate::scalar::{Precision, Scalar};
use crate::stability::{record_grad_histogram, Watchdog, WatchdogPolicy};
use crate::tensor::Tape;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DatasetSpec {
    Synthetic {
        spec: SyntheticSpec,
        test_per_class: usize,
    },
    IdxImages {
        train_images: PathBuf,
        train_labels: PathBuf,
        test_images: PathBuf,
        test_labels: PathBuf,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub optimizer: Optimizer,
    pub lr: f64,
    pub weight_decay: f64,
    pub label_smoothing: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub warmup_epochs: usize,
    pub min_lr_factor: f64,
    pub seed: u64,
    pub precision: Precision,
    pub dataset: DatasetSpec,
    pub out_dir: Option<PathBuf>,
    pub log_histograms: bool,
    /// Halt the run on the first watchdog event instead of recording it and
    /// continuing.
    pub watchdog_halt: bool,
    /// Stop early once the test accuracy reaches this value. `epochs`
    /// remains the hard upper bound.
    #[serde(default)]
    pub stop_at_accuracy: Option<f64>,
}

impl TrainConfig {
    pub fn desk(model: ModelConfig) -> Self {
        TrainConfig {
            model,
            optimizer: Optimizer::RiemannianAdamw,
            lr: crate::optim::DEFAULT_LR,
            weight_decay: crate::optim::DEFAULT_WEIGHT_DECAY,
            label_smoothing: crate::optim::DEFAULT_LABEL_SMOOTHING,
            batch_size: 128,
            epochs: 30,
            warmup_epochs: 0,
            min_lr_factor: 0.0,
            seed: 0,
            precision: Precision::F64,
            dataset: DatasetSpec::Synthetic {
                spec: SyntheticSpec::desk(),
                test_per_class: 50,
            },
            out_dir: None,
            log_histograms: false,
            watchdog_halt: false,
            stop_at_accuracy: None,
        }
    }
}

/// One metrics record per epoch (line-delimited JSON in metrics.jsonl).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub test_accuracy: f64,
    pub lr: f64,
    pub watchdog_events: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub epochs_run: usize,
    pub final_train_loss: f64,
    pub final_test_accuracy: f64,
    pub watchdog_events: usize,
    pub halted: bool,
}

pub struct RunOutput<T> {
    pub summary: RunSummary,
    pub store: ParamStore<T>,
    pub metrics: Vec<MetricsRecord>,
    pub watchdog: Watchdog,
}

/// Build (train, test) datasets from a spec. The synthetic test split uses
/// an offset seed so it never overlaps the training samples.
pub fn load_datasets(spec: &DatasetSpec, seed: u64) -> Result<(Dataset, Dataset)> {
    match spec {
        DatasetSpec::Synthetic {
            spec,
            test_per_class,
        } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5337_AB1E);
            let train = synth_hierarchical(spec, &mut rng)?;
            // same prototypes, fresh noise for the held-out split
            let protos = {
                let mut prng = ChaCha8Rng::seed_from_u64(seed ^ 0x5337_AB1E);
                crate::data::synthetic::prototypes(spec, &mut prng)?
            };
            let test_spec = SyntheticSpec {
                samples_per_class: *test_per_class,
                ..spec.clone()
            };
            let mut test_rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7E57_0000);
            let test = synth_from_protos(&test_spec, &protos, &mut test_rng)?;
            Ok((train, test))
        }
        DatasetSpec::IdxImages {
            train_images,
            train_labels,
            test_images,
            test_labels,
        } => Ok((
            crate::data::idx::load_idx(train_images, train_labels)?,
            crate::data::idx::load_idx(test_images, test_labels)?,
        )),
    }
}

fn synth_from_protos(
    spec: &SyntheticSpec,
    protos: &[Vec<f64>],
    rng: &mut ChaCha8Rng,
) -> Result<Dataset> {
    use rand_distr::{Distribution, Normal};
    let noise = Normal::new(0.0, spec.noise.max(0.0)).unwrap();
    let mut images = Vec::new();
    let mut labels = Vec::new();
    for _ in 0..spec.samples_per_class {
        for (label, proto) in protos.iter().enumerate() {
            let img: Vec<f64> = proto
                .iter()
                .map(|&p| {
                    let v = if spec.noise > 0.0 { p + noise.sample(rng) } else { p };
                    v * spec.pixel_scale
                })
                .collect();
            images.push(img);
            labels.push(label);
        }
    }
    Ok(Dataset {
        images,
        labels,
        channels: 1,
        height: spec.image_size,
        width: spec.image_size,
        classes: protos.len(),
    })
}

struct ArtifactWriter {
    metrics: Option<std::io::BufWriter<std::fs::File>>,
    histograms: Option<std::io::BufWriter<std::fs::File>>,
    events: Option<std::io::BufWriter<std::fs::File>>,
}

impl ArtifactWriter {
    fn new(out_dir: Option<&Path>, cfg: &TrainConfig) -> Result<Self> {
        let Some(dir) = out_dir else {
            return Ok(ArtifactWriter {
                metrics: None,
                histograms: None,
                events: None,
            });
        };
        std::fs::create_dir_all(dir)?;
        let config_json = serde_json::to_string_pretty(cfg)?;
        std::fs::write(dir.join("config.json"), config_json)?;
        let open = |name: &str| -> Result<std::io::BufWriter<std::fs::File>> {
            Ok(std::io::BufWriter::new(std::fs::File::create(
                dir.join(name),
            )?))
        };
        Ok(ArtifactWriter {
            metrics: Some(open("metrics.jsonl")?),
            histograms: Some(open("histograms.jsonl")?),
            events: Some(open("events.jsonl")?),
        })
    }

    fn write_line<S: Serialize>(
        sink: &mut Option<std::io::BufWriter<std::fs::File>>,
        record: &S,
    ) -> Result<()> {
        if let Some(w) = sink {
            serde_json::to_writer(&mut *w, record)?;
            writeln!(w)?;
        }
        Ok(())
    }

    fn flush(&mut self) -> Result<()> {
        for w in [&mut self.metrics, &mut self.histograms, &mut self.events] {
            if let Some(w) = w {
                w.flush()?;
            }
        }
        Ok(())
    }
}

/// Run the full training loop per the config. Generic over precision;
/// `T` must match `cfg.precision` (the CLI dispatches accordingly).
pub fn train<T: Scalar>(cfg: &TrainConfig) -> Result<RunOutput<T>> {
    cfg.model.validate()?;
    if cfg.batch_size == 0 || cfg.epochs == 0 {
        return Err(HexError::Config("batch size and epochs must be >= 1".into()));
    }
    let (train_ds, test_ds) = load_datasets(&cfg.dataset, cfg.seed)?;
    train_ds.check_classes(cfg.model.classes)?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut store: ParamStore<T> = ParamStore::new();
    init_model(&mut store, &cfg.model, &mut rng)?;

    let steps_per_epoch = train_ds.len().div_ceil(cfg.batch_size);
    let schedule = Schedule {
        base_lr: cfg.lr,
        warmup_steps: cfg.warmup_epochs * steps_per_epoch,
        total_steps: cfg.epochs * steps_per_epoch,
        min_factor: cfg.min_lr_factor,
        restart_period: None,
    };
    let mut opt_state: OptimState<T> = OptimState::new(cfg.weight_decay);
    let mut watchdog = Watchdog::new(if cfg.watchdog_halt {
        WatchdogPolicy::Halt
    } else {
        WatchdogPolicy::Continue
    });

    let mut writer = ArtifactWriter::new(cfg.out_dir.as_deref(), cfg)?;
    let mut metrics = Vec::new();
    let mut indices: Vec<usize> = (0..train_ds.len()).collect();
    let mut step = 0usize;
    let mut halted = false;
    let mut last_loss = f64::NAN;
    let mut last_acc = 0.0;

    'epochs: for epoch in 0..cfg.epochs {
        indices.shuffle(&mut rng);
        let mut epoch_loss = 0.0f64;
        let mut epoch_count = 0usize;
        for batch in indices.chunks(cfg.batch_size) {
            store.zero_grads();
            let scale = T::one() / T::from_usize(batch.len());
            for &i in batch {
                let image = train_ds.image_tensor::<T>(i)?;
                let mut tape = Tape::new();
                // A numerical failure inside one sample (domain violation,
                // non-finite intermediate) is a stability incident to record,
                // not a reason to abort the whole run.
                let sample = (|| -> crate::error::Result<f64> {
                    let (logits, stats) =
                        forward(&mut tape, &mut store, &cfg.model, &image, true)?;
                    if stats.centroid_floor_hits > 0 {
                        watchdog.record_degenerate(
                            step,
                            "centroid_agg",
                            "denominator floor",
                            stats.centroid_floor_hits,
                        );
                    }
                    if stats.manifold_violations > 0 {
                        watchdog.record_degenerate(
                            step,
                            "attention",
                            "aggregate off manifold",
                            stats.manifold_violations,
                        );
                    }
                    if watchdog.check(step, "forward", "logits", logits.data()) {
                        return Ok(f64::NAN);
                    }
                    let loss = label_smoothing_ce(
                        &mut tape,
                        &logits,
                        train_ds.labels[i],
                        cfg.label_smoothing,
                    )?;
                    let lv = loss.item().as_f64();
                    if !lv.is_finite() {
                        watchdog.check(step, "loss", "value", loss.data());
                        return Ok(lv);
                    }
                    tape.backward(&loss)?;
                    store.accumulate_grads(&tape, scale)?;
                    Ok(lv)
                })();
                match sample {
                    Ok(lv) if lv.is_finite() => {
                        epoch_loss += lv;
                        epoch_count += 1;
                    }
                    Ok(_) => {}
                    Err(e) => watchdog.record_degenerate(step, "forward", &e.to_string(), 1),
                }
            }
            for p in store.trainable() {
                watchdog.check(step, "backward", &p.name, &p.grad);
            }
            if cfg.log_histograms {
                let record = record_grad_histogram(&store, step);
                ArtifactWriter::write_line(&mut writer.histograms, &record)?;
            }
            let lr = schedule.lr(step);
            let report = match cfg.optimizer {
                Optimizer::Adamw => adamw_step(&mut store, &mut opt_state, lr)?,
                Optimizer::RiemannianAdamw => {
                    riemannian_adamw_step(&mut store, &mut opt_state, lr, cfg.model.curv())?
                }
            };
            if report.skipped_nonfinite > 0 {
                watchdog.record_degenerate(step, "optimizer", "skipped params", report.skipped_nonfinite);
            }
            step += 1;
            if watchdog.should_halt() {
                halted = true;
            }
            if halted {
                break;
            }
        }

        last_loss = if epoch_count > 0 {
            epoch_loss / epoch_count as f64
        } else {
            f64::NAN
        };
        last_acc = evaluate(&mut store, &cfg.model, &test_ds)?.accuracy;
        let record = MetricsRecord {
            epoch,
            train_loss: last_loss,
            test_accuracy: last_acc,
            lr: schedule.lr(step.saturating_sub(1)),
            watchdog_events: watchdog.events().len(),
        };
        ArtifactWriter::write_line(&mut writer.metrics, &record)?;
        writer.flush()?;
        metrics.push(record);
        if halted {
            break 'epochs;
        }
        if cfg.stop_at_accuracy.is_some_and(|t| last_acc >= t) {
            break 'epochs;
        }
    }

    for event in watchdog.events() {
        ArtifactWriter::write_line(&mut writer.events, event)?;
    }
    if let Some(dir) = cfg.out_dir.as_deref() {
        crate::checkpoint::save(&dir.join("checkpoint.json"), &store, serde_json::to_value(cfg)?)?;
    }
    writer.flush()?;

    Ok(RunOutput {
        summary: RunSummary {
            epochs_run: metrics.len(),
            final_train_loss: last_loss,
            final_test_accuracy: last_acc,
            watchdog_events: watchdog.events().len(),
            halted,
        },
        store,
        metrics,
        watchdog,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct EvalReport {
    pub accuracy: f64,
    pub per_class_accuracy: Vec<f64>,
    /// confusion[actual][predicted]
    pub confusion: Vec<Vec<usize>>,
}

/// Top-1 accuracy, per-class accuracy, and confusion counts.
pub fn evaluate<T: Scalar>(
    store: &mut ParamStore<T>,
    model: &ModelConfig,
    ds: &Dataset,
) -> Result<EvalReport> {
    if ds.is_empty() {
        return Err(HexError::Data("evaluation on an empty dataset".into()));
    }
    ds.check_classes(model.classes)?;
    let c = model.classes;
    let mut confusion = vec![vec![0usize; c]; c];
    for i in 0..ds.len() {
        let image = ds.image_tensor::<T>(i)?;
        let mut tape = Tape::new();
        let (logits, _) = forward(&mut tape, store, model, &image, false)?;
        let pred = logits
            .data()
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap_or(std::cmp::Ordering::Equal))
            .map(|(i, _)| i)
            .unwrap_or(0);
        confusion[ds.labels[i]][pred] += 1;
    }
    let mut correct = 0usize;
    let mut per_class = Vec::with_capacity(c);
    for (actual, row) in confusion.iter().enumerate() {
        let total: usize = row.iter().sum();
        correct += row[actual];
        per_class.push(if total > 0 {
            row[actual] as f64 / total as f64
        } else {
            0.0
        });
    }
    Ok(EvalReport {
        accuracy: correct as f64 / ds.len() as f64,
        per_class_accuracy: per_class,
        confusion,
    })
}
