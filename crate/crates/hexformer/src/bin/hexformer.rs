//! Command-line entry point.
//!
//! Exit codes: 0 = success, 1 = a check or assertion failed, 2 = usage or
//! configuration error.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use hexformer::attention::Aggregation;
use hexformer::config::{load_config, Overrides};
use hexformer::error::HexError;
use hexformer::harness::{evaluate, load_datasets, train, TrainConfig};
use hexformer::model::Variant;
use hexformer::scalar::{Precision, Scalar};
use hexformer::stability::{centroid_collapse_repro, stability_compare};

#[derive(Parser)]
#[command(
    name = "hexformer",
    about = "Hyperbolic transformer on the Lorentz manifold: training, evaluation, and numerical-stability tooling"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct ConfigArgs {
    /// TOML run config; defaults apply for any key not present.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override the RNG seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the number of warmup epochs.
    #[arg(long)]
    warmup: Option<usize>,
    /// Override the attention aggregation (exp_agg | centroid).
    #[arg(long)]
    agg: Option<Aggregation>,
    /// Override the arithmetic precision (f32 | f64).
    #[arg(long)]
    precision: Option<Precision>,
    /// Override the model variant (euclidean | hexformer | hexformer_hybrid).
    #[arg(long)]
    variant: Option<Variant>,
    /// Override the number of training epochs.
    #[arg(long)]
    epochs: Option<usize>,
    /// Override the artifact output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl ConfigArgs {
    fn resolve(&self) -> hexformer::Result<TrainConfig> {
        let overrides = Overrides {
            seed: self.seed,
            warmup_epochs: self.warmup,
            aggregation: self.agg,
            precision: self.precision,
            variant: self.variant,
            epochs: self.epochs,
            out_dir: self.out.clone(),
        };
        load_config(self.config.as_deref(), &overrides)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write run artifacts.
    Train(ConfigArgs),
    /// Evaluate a saved checkpoint on the configured test split.
    Eval {
        /// Checkpoint produced by `train` (carries its own run config).
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Verify a checkpoint: finite parameters, and manifold-valued
    /// parameters actually on the hyperboloid.
    Check {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Relative tolerance for the manifold constraint.
        #[arg(long, default_value_t = 1e-6)]
        tol: f64,
    },
    /// Train the same config with both aggregators across several seeds and
    /// compare watchdog event counts.
    Stability {
        #[command(flatten)]
        config: ConfigArgs,
        /// Comma-separated seed list.
        #[arg(long, value_delimiter = ',', default_value = "0,1,2,3,4")]
        seeds: Vec<u64>,
    },
    /// Reproduce, step by step in f32, the centroid aggregator's
    /// precision collapse on large-magnitude points.
    AppendixC,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                HexError::Config(_) | HexError::Io(_) | HexError::Data(_) => ExitCode::from(2),
                _ => ExitCode::from(1),
            }
        }
    }
}

fn run(command: Command) -> hexformer::Result<ExitCode> {
    match command {
        Command::Train(args) => {
            let cfg = args.resolve()?;
            match cfg.precision {
                Precision::F32 => run_train::<f32>(&cfg),
                Precision::F64 => run_train::<f64>(&cfg),
            }
        }
        Command::Eval { checkpoint } => {
            let raw = hexformer::checkpoint::peek(&checkpoint)?;
            match raw.precision {
                Precision::F32 => run_eval::<f32>(&checkpoint),
                Precision::F64 => run_eval::<f64>(&checkpoint),
            }
        }
        Command::Check { checkpoint, tol } => {
            let raw = hexformer::checkpoint::peek(&checkpoint)?;
            match raw.precision {
                Precision::F32 => run_check::<f32>(&checkpoint, tol),
                Precision::F64 => run_check::<f64>(&checkpoint, tol),
            }
        }
        Command::Stability { config, seeds } => {
            let cfg = config.resolve()?;
            let report = stability_compare(&cfg, &seeds)?;
            for s in &report.per_seed {
                println!(
                    "seed {:>3}: exp_agg events = {:>4}, centroid events = {:>4}",
                    s.seed, s.exp_agg_events, s.centroid_events
                );
            }
            if report.passes() {
                println!("PASS: exponential-map aggregation produced no watchdog events");
                Ok(ExitCode::SUCCESS)
            } else {
                println!("FAIL: exponential-map aggregation produced watchdog events");
                Ok(ExitCode::from(1))
            }
        }
        Command::AppendixC => {
            let report = centroid_collapse_repro();
            for s in &report.steps {
                println!("[{}] {}: {}", if s.pass { "PASS" } else { "FAIL" }, s.name, s.detail);
            }
            println!(
                "for contrast, the same quadratic form in f64 = {:e}",
                report.f64_quad_form
            );
            Ok(if report.passes() {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            })
        }
    }
}

fn run_train<T: Scalar>(cfg: &TrainConfig) -> hexformer::Result<ExitCode> {
    let out = train::<T>(cfg)?;
    for m in &out.metrics {
        println!(
            "epoch {:>3}: train loss {:.4}, test accuracy {:.4}, lr {:.3e}, watchdog events {}",
            m.epoch, m.train_loss, m.test_accuracy, m.lr, m.watchdog_events
        );
    }
    if out.summary.halted {
        println!("halted early by the watchdog");
        return Ok(ExitCode::from(1));
    }
    println!(
        "done: {} epochs, final test accuracy {:.4}",
        out.summary.epochs_run, out.summary.final_test_accuracy
    );
    Ok(ExitCode::SUCCESS)
}

fn run_eval<T: Scalar>(path: &std::path::Path) -> hexformer::Result<ExitCode> {
    let (mut store, ckpt) = hexformer::checkpoint::load::<T>(path)?;
    let cfg: TrainConfig = serde_json::from_value(ckpt.config)?;
    let (_, test) = load_datasets(&cfg.dataset, cfg.seed)?;
    let report = evaluate(&mut store, &cfg.model, &test)?;
    println!("test accuracy: {:.4} ({} samples)", report.accuracy, test.len());
    for (c, acc) in report.per_class_accuracy.iter().enumerate() {
        println!("  class {c:>2}: {acc:.4}");
    }
    Ok(ExitCode::SUCCESS)
}

fn run_check<T: Scalar>(path: &std::path::Path, tol: f64) -> hexformer::Result<ExitCode> {
    use hexformer::lorentz::{validate_rows, Curvature};
    use hexformer::params::ParamKind;
    use hexformer::tensor::Tensor;

    let (store, ckpt) = hexformer::checkpoint::load::<T>(path)?;
    let cfg: TrainConfig = serde_json::from_value(ckpt.config)?;
    let curv = Curvature::new(cfg.model.curvature)?;
    let mut failures = 0usize;
    for p in store.iter() {
        let nonfinite = p.data.iter().filter(|v| !v.is_finite()).count();
        if nonfinite > 0 {
            println!("[FAIL] {}: {} non-finite values", p.name, nonfinite);
            failures += 1;
            continue;
        }
        if p.kind == ParamKind::Manifold {
            let t = Tensor::from_vec(p.data.clone(), &p.shape)?;
            let reports = validate_rows(&t, curv, tol);
            let bad = reports.iter().filter(|r| !r.pass).count();
            if bad > 0 {
                println!("[FAIL] {}: {} of {} rows off the manifold", p.name, bad, reports.len());
                failures += 1;
                continue;
            }
            println!("[PASS] {}: {} rows on the manifold", p.name, reports.len());
        } else {
            println!("[PASS] {}: finite", p.name);
        }
    }
    if failures == 0 {
        println!("all {} parameters check out", store.len());
        Ok(ExitCode::SUCCESS)
    } else {
        println!("{failures} parameters failed");
        Ok(ExitCode::from(1))
    }
}
