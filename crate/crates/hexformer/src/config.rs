//! Flat TOML run configuration. Every key is optional and falls back to the
//! desk-scale defaults, so a minimal config file (or none at all) still
//! yields a runnable setup. Command-line overrides are applied after the
//! file is parsed.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::attention::Aggregation;
use crate::data::synthetic::SyntheticSpec;
use crate::error::{HexError, Result};
use crate::harness::{DatasetSpec, TrainConfig};
use crate::model::{ModelConfig, Variant};
use crate::optim::Optimizer;
use crate::scalar::Precision;

/// The flat key set accepted in a TOML run config.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    // model
    pub variant: Option<String>,
    pub aggregation: Option<String>,
    /// Named size preset ("tiny", "small", "base"); flat model keys below
    /// override individual preset values.
    pub preset: Option<String>,
    pub patch: Option<usize>,
    pub embed: Option<usize>,
    pub mlp: Option<usize>,
    pub depth: Option<usize>,
    pub heads: Option<usize>,
    pub classes: Option<usize>,
    pub curvature: Option<f64>,
    pub activation: Option<String>,
    pub channels: Option<usize>,
    pub image_size: Option<usize>,
    pub lambda_v: Option<f64>,
    // optimization
    pub optimizer: Option<String>,
    pub lr: Option<f64>,
    pub weight_decay: Option<f64>,
    pub label_smoothing: Option<f64>,
    pub batch_size: Option<usize>,
    pub epochs: Option<usize>,
    pub warmup_epochs: Option<usize>,
    pub min_lr_factor: Option<f64>,
    pub seed: Option<u64>,
    pub precision: Option<String>,
    // dataset: "synthetic" (default) or "idx"
    pub dataset: Option<String>,
    pub tree_depth: Option<usize>,
    pub branching: Option<usize>,
    pub noise: Option<f64>,
    pub samples_per_class: Option<usize>,
    pub test_per_class: Option<usize>,
    pub pixel_scale: Option<f64>,
    pub train_images: Option<PathBuf>,
    pub train_labels: Option<PathBuf>,
    pub test_images: Option<PathBuf>,
    pub test_labels: Option<PathBuf>,
    // run artifacts
    pub stop_at_accuracy: Option<f64>,
    pub out_dir: Option<PathBuf>,
    pub log_histograms: Option<bool>,
    pub watchdog_halt: Option<bool>,
}

/// Command-line overrides, applied on top of the file config.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub warmup_epochs: Option<usize>,
    pub aggregation: Option<Aggregation>,
    pub precision: Option<Precision>,
    pub variant: Option<Variant>,
    pub epochs: Option<usize>,
    pub out_dir: Option<PathBuf>,
}

impl FileConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| HexError::Config(format!("bad config file: {e}")))
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml(&text)
    }

    /// Resolve the file config plus overrides into a full [`TrainConfig`].
    pub fn resolve(&self, overrides: &Overrides) -> Result<TrainConfig> {
        let variant: Variant = match overrides.variant {
            Some(v) => v,
            None => self
                .variant
                .as_deref()
                .unwrap_or("hexformer")
                .parse()?,
        };
        let aggregation: Aggregation = match overrides.aggregation {
            Some(a) => a,
            None => self
                .aggregation
                .as_deref()
                .unwrap_or("exp_agg")
                .parse()?,
        };

        let mut model = match &self.preset {
            Some(name) => ModelConfig::preset(name, variant, aggregation)?,
            None => ModelConfig::desk(variant, aggregation),
        };
        if let Some(v) = self.patch {
            model.patch = v;
        }
        if let Some(v) = self.embed {
            model.embed = v;
        }
        if let Some(v) = self.mlp {
            model.mlp = v;
        }
        if let Some(v) = self.depth {
            model.depth = v;
        }
        if let Some(v) = self.heads {
            model.heads = v;
        }
        if let Some(v) = self.classes {
            model.classes = v;
        }
        if let Some(v) = self.curvature {
            model.curvature = v;
        }
        if let Some(a) = &self.activation {
            model.activation = a.parse()?;
        }
        if let Some(v) = self.channels {
            model.channels = v;
        }
        if let Some(v) = self.image_size {
            model.image_size = v;
        }
        if let Some(v) = self.lambda_v {
            model.lambda_v = v;
        }
        model.validate()?;

        let dataset = match self.dataset.as_deref().unwrap_or("synthetic") {
            "synthetic" => {
                let desk = SyntheticSpec::desk();
                let spec = SyntheticSpec {
                    depth: self.tree_depth.unwrap_or(desk.depth),
                    branching: self.branching.unwrap_or(desk.branching),
                    noise: self.noise.unwrap_or(desk.noise),
                    samples_per_class: self.samples_per_class.unwrap_or(desk.samples_per_class),
                    image_size: self.image_size.unwrap_or(model.image_size),
                    pixel_scale: self.pixel_scale.unwrap_or(desk.pixel_scale),
                };
                spec.validate()?;
                if spec.classes() != model.classes {
                    return Err(HexError::Config(format!(
                        "synthetic dataset has {} classes but the model head has {}",
                        spec.classes(),
                        model.classes
                    )));
                }
                DatasetSpec::Synthetic {
                    spec,
                    test_per_class: self.test_per_class.unwrap_or(50),
                }
            }
            "idx" => {
                let need = |v: &Option<PathBuf>, key: &str| -> Result<PathBuf> {
                    v.clone()
                        .ok_or_else(|| HexError::Config(format!("dataset = \"idx\" requires {key}")))
                };
                DatasetSpec::IdxImages {
                    train_images: need(&self.train_images, "train_images")?,
                    train_labels: need(&self.train_labels, "train_labels")?,
                    test_images: need(&self.test_images, "test_images")?,
                    test_labels: need(&self.test_labels, "test_labels")?,
                }
            }
            other => {
                return Err(HexError::Config(format!(
                    "unknown dataset kind {other:?} (expected \"synthetic\" or \"idx\")"
                )))
            }
        };

        let defaults = TrainConfig::desk(model.clone());
        Ok(TrainConfig {
            model,
            optimizer: match &self.optimizer {
                Some(o) => o.parse()?,
                None => Optimizer::RiemannianAdamw,
            },
            lr: self.lr.unwrap_or(defaults.lr),
            weight_decay: self.weight_decay.unwrap_or(defaults.weight_decay),
            label_smoothing: self.label_smoothing.unwrap_or(defaults.label_smoothing),
            batch_size: self.batch_size.unwrap_or(defaults.batch_size),
            epochs: overrides
                .epochs
                .or(self.epochs)
                .unwrap_or(defaults.epochs),
            warmup_epochs: overrides
                .warmup_epochs
                .or(self.warmup_epochs)
                .unwrap_or(defaults.warmup_epochs),
            min_lr_factor: self.min_lr_factor.unwrap_or(defaults.min_lr_factor),
            seed: overrides.seed.or(self.seed).unwrap_or(defaults.seed),
            precision: match overrides.precision {
                Some(p) => p,
                None => match &self.precision {
                    Some(p) => p.parse()?,
                    None => defaults.precision,
                },
            },
            dataset,
            out_dir: overrides.out_dir.clone().or_else(|| self.out_dir.clone()),
            log_histograms: self.log_histograms.unwrap_or(false),
            watchdog_halt: self.watchdog_halt.unwrap_or(false),
            stop_at_accuracy: self.stop_at_accuracy,
        })
    }
}

/// Load a TOML config file (or defaults when `path` is `None`) and apply
/// overrides.
pub fn load_config(path: Option<&Path>, overrides: &Overrides) -> Result<TrainConfig> {
    let file = match path {
        Some(p) => FileConfig::from_path(p)?,
        None => FileConfig::default(),
    };
    file.resolve(overrides)
}
