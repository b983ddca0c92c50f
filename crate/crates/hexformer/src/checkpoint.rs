//! Versioned parameter checkpoints: a self-describing JSON container with
//! the run configuration echoed alongside named parameter blobs and the
//! precision tag.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{HexError, Result};
use crate::params::{ParamKind, ParamStore};
use crate::scalar::{Precision, Scalar};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub precision: Precision,
    /// Echo of the training configuration that produced the parameters.
    pub config: serde_json::Value,
    pub params: Vec<ParamBlob>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ParamBlob {
    pub name: String,
    pub shape: Vec<usize>,
    pub kind: ParamKind,
    pub data: Vec<f64>,
}

pub fn save<T: Scalar>(
    path: &Path,
    store: &ParamStore<T>,
    config: serde_json::Value,
) -> Result<()> {
    let ckpt = Checkpoint {
        version: CHECKPOINT_VERSION,
        precision: T::PRECISION,
        config,
        params: store
            .iter()
            .map(|p| ParamBlob {
                name: p.name.clone(),
                shape: p.shape.clone(),
                kind: p.kind,
                data: p.data.iter().map(|v| v.as_f64()).collect(),
            })
            .collect(),
    };
    let file = std::fs::File::create(path)?;
    serde_json::to_writer(std::io::BufWriter::new(file), &ckpt)?;
    Ok(())
}

/// Read a checkpoint's metadata (version, precision, config) without
/// binding the parameters to a concrete element type.
pub fn peek(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path)?;
    let ckpt: Checkpoint = serde_json::from_slice(&bytes)?;
    if ckpt.version != CHECKPOINT_VERSION {
        return Err(HexError::Checkpoint(format!(
            "unsupported checkpoint version {} (expected {CHECKPOINT_VERSION})",
            ckpt.version
        )));
    }
    Ok(ckpt)
}

pub fn load<T: Scalar>(path: &Path) -> Result<(ParamStore<T>, Checkpoint)> {
    let bytes = std::fs::read(path)?;
    let ckpt: Checkpoint = serde_json::from_slice(&bytes)?;
    if ckpt.version != CHECKPOINT_VERSION {
        return Err(HexError::Checkpoint(format!(
            "unsupported checkpoint version {} (expected {CHECKPOINT_VERSION})",
            ckpt.version
        )));
    }
    let mut store = ParamStore::new();
    for blob in &ckpt.params {
        store.insert(
            &blob.name,
            blob.data.iter().map(|&v| T::from_f64(v)).collect(),
            &blob.shape,
            blob.kind,
        );
    }
    Ok((store, ckpt))
}
