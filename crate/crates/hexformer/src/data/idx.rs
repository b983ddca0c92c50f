//! IDX image/label file format (big-endian magic, dimension sizes, raw u8
//! payload). Parsing retains the raw bytes so a parsed file can be written
//! back byte-exactly.

use std::path::Path;

use crate::data::Dataset;
use crate::error::{HexError, Result};

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

/// A parsed IDX image file: dimensions plus the untouched pixel payload.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxImages {
    pub count: usize,
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<u8>,
}

/// A parsed IDX label file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxLabels {
    pub labels: Vec<u8>,
}

fn read_u32(bytes: &[u8], offset: usize) -> Result<u32> {
    let end = offset + 4;
    if bytes.len() < end {
        return Err(HexError::IdxTruncated {
            expected: end,
            found: bytes.len(),
        });
    }
    Ok(u32::from_be_bytes(bytes[offset..end].try_into().unwrap()))
}

pub fn parse_images(bytes: &[u8]) -> Result<IdxImages> {
    let magic = read_u32(bytes, 0)?;
    if magic != IMAGES_MAGIC {
        return Err(HexError::IdxBadMagic {
            expected: IMAGES_MAGIC,
            found: magic,
        });
    }
    let count = read_u32(bytes, 4)? as usize;
    let rows = read_u32(bytes, 8)? as usize;
    let cols = read_u32(bytes, 12)? as usize;
    let expected = 16 + count * rows * cols;
    if bytes.len() < expected {
        return Err(HexError::IdxTruncated {
            expected,
            found: bytes.len(),
        });
    }
    Ok(IdxImages {
        count,
        rows,
        cols,
        pixels: bytes[16..expected].to_vec(),
    })
}

pub fn parse_labels(bytes: &[u8]) -> Result<IdxLabels> {
    let magic = read_u32(bytes, 0)?;
    if magic != LABELS_MAGIC {
        return Err(HexError::IdxBadMagic {
            expected: LABELS_MAGIC,
            found: magic,
        });
    }
    let count = read_u32(bytes, 4)? as usize;
    let expected = 8 + count;
    if bytes.len() < expected {
        return Err(HexError::IdxTruncated {
            expected,
            found: bytes.len(),
        });
    }
    Ok(IdxLabels {
        labels: bytes[8..expected].to_vec(),
    })
}

pub fn write_images(images: &IdxImages) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + images.pixels.len());
    out.extend_from_slice(&IMAGES_MAGIC.to_be_bytes());
    out.extend_from_slice(&(images.count as u32).to_be_bytes());
    out.extend_from_slice(&(images.rows as u32).to_be_bytes());
    out.extend_from_slice(&(images.cols as u32).to_be_bytes());
    out.extend_from_slice(&images.pixels);
    out
}

pub fn write_labels(labels: &IdxLabels) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.labels.len());
    out.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.labels.len() as u32).to_be_bytes());
    out.extend_from_slice(&labels.labels);
    out
}

/// Load an image/label file pair into a [`Dataset`]. Pixels are scaled to
/// [0, 1] and standardized by the dataset mean and standard deviation.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<Dataset> {
    let images = parse_images(&std::fs::read(images_path)?)?;
    let labels = parse_labels(&std::fs::read(labels_path)?)?;
    if images.count != labels.labels.len() {
        return Err(HexError::IdxCountMismatch {
            images: images.count,
            labels: labels.labels.len(),
        });
    }
    let scaled: Vec<f64> = images.pixels.iter().map(|&p| p as f64 / 255.0).collect();
    let mean = scaled.iter().sum::<f64>() / scaled.len().max(1) as f64;
    let var =
        scaled.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / scaled.len().max(1) as f64;
    let std = var.sqrt().max(1e-8);
    let per_image = images.rows * images.cols;
    let data: Vec<Vec<f64>> = scaled
        .chunks(per_image)
        .map(|c| c.iter().map(|v| (v - mean) / std).collect())
        .collect();
    let classes = labels.labels.iter().map(|&l| l as usize + 1).max().unwrap_or(0);
    Ok(Dataset {
        images: data,
        labels: labels.labels.iter().map(|&l| l as usize).collect(),
        channels: 1,
        height: images.rows,
        width: images.cols,
        classes,
    })
}
