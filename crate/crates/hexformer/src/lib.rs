//! HexFormer: a hyperbolic vision transformer on the Lorentz manifold.
//!
//! The crate provides, bottom-up:
//!
//! - [`tensor`]: dense tensors with reverse-mode autodiff in a selectable
//!   precision (f32 or f64), plus a finite-difference gradient oracle;
//! - [`lorentz`]: Lorentz-model primitives (inner product, lift, exp/log
//!   maps, squared Lorentzian distance, constraint validation);
//! - [`layers`]: Lorentz fully-connected layers, multi-head split/merge,
//!   Lorentz batch normalization, space-only residuals, patch embedding;
//! - [`attention`]: distance-based attention scores with a learnable
//!   temperature and two aggregation modes (exponential-map and centroid);
//! - [`model`]: the HexFormer, HexFormer-Hybrid, and Euclidean ViT variants;
//! - [`optim`]: AdamW, Riemannian AdamW, the cosine warmup schedule,
//!   label-smoothing cross-entropy, Xavier initialization;
//! - [`stability`]: gradient histograms, the NaN/Inf watchdog, the float32
//!   centroid-collapse walkthrough, and A/B stability comparisons;
//! - [`data`], [`harness`]: IDX and synthetic hierarchical datasets plus the
//!   training/evaluation loop behind the CLI.
//!
//! See the `examples/` directory for a runnable tour of each capability.

pub mod attention;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod error;
pub mod harness;
pub mod layers;
pub mod lorentz;
pub mod model;
pub mod optim;
pub mod params;
pub mod scalar;
pub mod stability;
pub mod tensor;

pub use error::{HexError, Result};
pub use scalar::{Precision, Scalar};
pub use tensor::{finite_diff_grad, Tape, Tensor};
