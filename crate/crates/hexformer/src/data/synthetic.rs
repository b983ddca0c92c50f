//! Synthetic hierarchical image dataset. Class prototypes sit at the
//! leaves of a random tree: every internal node contributes a coarse
//! pattern shared by all of its descendants, and each leaf adds a fine
//! pattern of its own. Samples are prototypes plus Gaussian pixel noise.
//! Sibling classes therefore share most of their structure and lie closer
//! together than non-siblings.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::data::Dataset;
use crate::error::{HexError, Result};

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SyntheticSpec {
    /// Tree depth (levels of internal nodes above the leaves).
    pub depth: usize,
    /// Children per internal node; the class count is branching^depth.
    pub branching: usize,
    /// Standard deviation of per-pixel sample noise.
    pub noise: f64,
    pub samples_per_class: usize,
    pub image_size: usize,
    /// Multiplies every pixel; 1.0 is the standard setting. Large values
    /// are used by the stability lab to stress f32 runs.
    pub pixel_scale: f64,
}

impl SyntheticSpec {
    pub fn desk() -> Self {
        SyntheticSpec {
            depth: 2,
            branching: 4,
            noise: 0.3,
            samples_per_class: 200,
            image_size: 16,
            pixel_scale: 1.0,
        }
    }

    pub fn classes(&self) -> usize {
        self.branching.pow(self.depth as u32)
    }

    pub fn validate(&self) -> Result<()> {
        if self.depth < 1 || self.branching < 2 {
            return Err(HexError::Data(format!(
                "invalid tree: depth {} (need >= 1), branching {} (need >= 2)",
                self.depth, self.branching
            )));
        }
        if self.image_size == 0 || self.samples_per_class == 0 {
            return Err(HexError::Data("empty image or sample count".into()));
        }
        Ok(())
    }
}

/// Class prototypes, one flat [H·W] image per leaf, in class order.
pub fn prototypes<R: Rng>(spec: &SyntheticSpec, rng: &mut R) -> Result<Vec<Vec<f64>>> {
    spec.validate()?;
    let pixels = spec.image_size * spec.image_size;
    let mut protos = vec![vec![0.0f64; pixels]; 1];
    // grow the tree level by level; amplitude halves with depth so coarse
    // structure dominates
    for level in 0..spec.depth {
        let amplitude = 1.0 / (1 << level) as f64;
        let dist = Normal::new(0.0, amplitude).unwrap();
        let mut next = Vec::with_capacity(protos.len() * spec.branching);
        for parent in &protos {
            for _ in 0..spec.branching {
                let mut child = parent.clone();
                for p in child.iter_mut() {
                    *p += dist.sample(rng);
                }
                next.push(child);
            }
        }
        protos = next;
    }
    Ok(protos)
}

/// Generate the dataset: `samples_per_class` noisy copies of each leaf
/// prototype, interleaved by class, deterministic under the RNG seed.
pub fn synth_hierarchical<R: Rng>(spec: &SyntheticSpec, rng: &mut R) -> Result<Dataset> {
    let protos = prototypes(spec, rng)?;
    let noise = Normal::new(0.0, spec.noise.max(0.0)).unwrap();
    let mut images = Vec::with_capacity(protos.len() * spec.samples_per_class);
    let mut labels = Vec::with_capacity(images.capacity());
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
        classes: spec.classes(),
    })
}

/// Accuracy of a nearest-prototype classifier on `ds` — the separability
/// oracle for acceptance thresholds.
pub fn nearest_prototype_accuracy(ds: &Dataset, protos: &[Vec<f64>], pixel_scale: f64) -> f64 {
    let mut correct = 0usize;
    for (img, &label) in ds.images.iter().zip(&ds.labels) {
        let mut best = (f64::INFINITY, 0usize);
        for (c, proto) in protos.iter().enumerate() {
            let d: f64 = img
                .iter()
                .zip(proto)
                .map(|(a, b)| {
                    let diff = a - b * pixel_scale;
                    diff * diff
                })
                .sum();
            if d < best.0 {
                best = (d, c);
            }
        }
        if best.1 == label {
            correct += 1;
        }
    }
    correct as f64 / ds.len().max(1) as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn class_count_is_branching_to_the_depth() {
        let spec = SyntheticSpec {
            depth: 2,
            branching: 4,
            ..SyntheticSpec::desk()
        };
        assert_eq!(spec.classes(), 16);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let protos = prototypes(&spec, &mut rng).unwrap();
        assert_eq!(protos.len(), 16);
    }

    #[test]
    fn noiseless_samples_classify_perfectly() {
        let spec = SyntheticSpec {
            noise: 0.0,
            samples_per_class: 3,
            ..SyntheticSpec::desk()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let protos = prototypes(&spec, &mut rng).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let ds = synth_hierarchical(&spec, &mut rng).unwrap();
        assert_eq!(nearest_prototype_accuracy(&ds, &protos, 1.0), 1.0);
    }

    #[test]
    fn siblings_are_closer_than_non_siblings() {
        let spec = SyntheticSpec::desk();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let protos = prototypes(&spec, &mut rng).unwrap();
        let dist = |a: &[f64], b: &[f64]| -> f64 {
            a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
        };
        let b = spec.branching;
        let (mut sib, mut nsib) = ((0.0, 0usize), (0.0, 0usize));
        for i in 0..protos.len() {
            for j in i + 1..protos.len() {
                let d = dist(&protos[i], &protos[j]);
                if i / b == j / b {
                    sib = (sib.0 + d, sib.1 + 1);
                } else {
                    nsib = (nsib.0 + d, nsib.1 + 1);
                }
            }
        }
        let (sib_avg, nsib_avg) = (sib.0 / sib.1 as f64, nsib.0 / nsib.1 as f64);
        assert!(
            sib_avg < nsib_avg,
            "sibling avg {sib_avg} >= non-sibling avg {nsib_avg}"
        );
    }

    #[test]
    fn deterministic_under_seed() {
        let spec = SyntheticSpec {
            samples_per_class: 2,
            ..SyntheticSpec::desk()
        };
        let a = synth_hierarchical(&spec, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        let b = synth_hierarchical(&spec, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        assert_eq!(a.images, b.images);
        assert_eq!(a.labels, b.labels);
    }

    #[test]
    fn invalid_tree_rejected() {
        let spec = SyntheticSpec {
            branching: 1,
            ..SyntheticSpec::desk()
        };
        assert!(prototypes(&spec, &mut ChaCha8Rng::seed_from_u64(5)).is_err());
    }
}
