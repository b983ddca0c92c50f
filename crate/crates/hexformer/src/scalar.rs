//! Element type abstraction: every computation runs end-to-end in one
//! precision (f32 or f64), selected once per run.

use serde::{Deserialize, Serialize};

/// Run-wide precision tag. Checkpoints and logs carry this so artifacts
/// from different precisions are never mixed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    F32,
    F64,
}

impl std::fmt::Display for Precision {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Precision::F32 => write!(f, "f32"),
            Precision::F64 => write!(f, "f64"),
        }
    }
}

impl std::str::FromStr for Precision {
    type Err = crate::error::HexError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "f32" => Ok(Precision::F32),
            "f64" => Ok(Precision::F64),
            other => Err(crate::error::HexError::Config(format!(
                "unknown precision '{other}' (expected f32 or f64)"
            ))),
        }
    }
}

/// Floating-point element type for tensors, geometry, and models.
pub trait Scalar:
    num_traits::Float
    + num_traits::NumAssign
    + std::fmt::Debug
    + std::fmt::Display
    + std::iter::Sum
    + Default
    + Copy
    + Send
    + Sync
    + 'static
{
    const PRECISION: Precision;

    fn from_f64(v: f64) -> Self;
    fn as_f64(self) -> f64;

    fn from_usize(v: usize) -> Self {
        Self::from_f64(v as f64)
    }
}

impl Scalar for f32 {
    const PRECISION: Precision = Precision::F32;

    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    const PRECISION: Precision = Precision::F64;

    fn from_f64(v: f64) -> Self {
        v
    }
    fn as_f64(self) -> f64 {
        self
    }
}
