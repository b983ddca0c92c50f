//! Datasets: IDX image/label files and a synthetic hierarchical image set
//! whose classes live at the leaves of a prototype tree.

pub mod idx;
pub mod synthetic;

use crate::error::{HexError, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// An in-memory image-classification dataset. Pixel values are stored in
/// f64 and converted to the run precision when tensors are built.
#[derive(Debug, Clone)]
pub struct Dataset {
    /// One flat [channels · height · width] buffer per image.
    pub images: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub classes: usize,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn image_tensor<T: Scalar>(&self, i: usize) -> Result<Tensor<T>> {
        let img = self
            .images
            .get(i)
            .ok_or_else(|| HexError::Data(format!("image index {i} out of range")))?;
        Tensor::from_vec(
            img.iter().map(|&v| T::from_f64(v)).collect(),
            &[self.channels, self.height, self.width],
        )
    }

    /// Consistency check between labels and an expected class count.
    pub fn check_classes(&self, classes: usize) -> Result<()> {
        if self.classes != classes {
            return Err(HexError::Data(format!(
                "dataset has {} classes, model expects {classes}",
                self.classes
            )));
        }
        if let Some(&bad) = self.labels.iter().find(|&&l| l >= classes) {
            return Err(HexError::Data(format!(
                "label {bad} out of range for {classes} classes"
            )));
        }
        Ok(())
    }
}
