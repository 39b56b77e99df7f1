//! In-memory datasets and the synthetic cluster generator.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::rng::seeded_stream;

/// Features (one row per example) with integer class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub features: Matrix,
    pub labels: Vec<usize>,
    pub classes: usize,
}

impl Dataset {
    pub fn validate(&self) -> Result<()> {
        if self.labels.len() != self.features.rows() {
            return Err(Error::Shape(format!(
                "{} labels for {} rows",
                self.labels.len(),
                self.features.rows()
            )));
        }
        if self.classes < 2 {
            return Err(Error::Domain("need at least 2 classes".into()));
        }
        if let Some(&bad) = self.labels.iter().find(|&&c| c >= self.classes) {
            return Err(Error::Domain(format!(
                "label {bad} out of range for {} classes",
                self.classes
            )));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// A train/test pair drawn from the same source.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainTestSplit {
    pub train: Dataset,
    pub test: Dataset,
}

/// Gaussian class-conditional clusters: class `c` has a fixed random center of
/// norm ~`separation` (stream 0 of `seed`) and unit-variance isotropic noise.
/// Labels cycle round-robin, so classes are balanced. Fully determined by
/// `(n, dim, classes, separation, seed)`.
pub fn synth_dataset(
    n: usize,
    dim: usize,
    classes: usize,
    separation: f64,
    seed: u64,
) -> Result<Dataset> {
    synth_part(n, dim, classes, separation, seed, 1)
}

/// Train and test sets sharing class centers but with independent sample
/// noise (streams 1 and 2 of `seed`).
pub fn synth_split(
    n_train: usize,
    n_test: usize,
    dim: usize,
    classes: usize,
    separation: f64,
    seed: u64,
) -> Result<TrainTestSplit> {
    Ok(TrainTestSplit {
        train: synth_part(n_train, dim, classes, separation, seed, 1)?,
        test: synth_part(n_test, dim, classes, separation, seed, 2)?,
    })
}

fn synth_part(
    n: usize,
    dim: usize,
    classes: usize,
    separation: f64,
    seed: u64,
    sample_stream: u64,
) -> Result<Dataset> {
    if classes < 2 {
        return Err(Error::Domain(format!(
            "need at least 2 classes, got {classes}"
        )));
    }
    if n == 0 || dim == 0 {
        return Err(Error::Domain("need positive sample count and dimension".into()));
    }
    if !(separation >= 0.0) {
        return Err(Error::Domain(format!(
            "separation must be nonnegative, got {separation}"
        )));
    }
    // Class centers on a scaled random direction; separation 0 collapses all
    // classes onto the same distribution.
    let mut center_rng = seeded_stream(seed, 0);
    let scale = separation / crate::fmath::sqrt(dim as f64);
    let centers: Vec<Vec<f64>> = (0..classes)
        .map(|_| {
            (0..dim)
                .map(|_| scale * center_rng.standard_normal())
                .collect()
        })
        .collect();

    let mut sample_rng = seeded_stream(seed, sample_stream);
    let mut labels = Vec::with_capacity(n);
    let mut values = Vec::with_capacity(n * dim);
    for i in 0..n {
        let class = i % classes;
        labels.push(class);
        for d in 0..dim {
            values.push(centers[class][d] + sample_rng.standard_normal());
        }
    }
    Ok(Dataset {
        features: Matrix::from_vec(n, dim, values)?,
        labels,
        classes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_reproduces_dataset() {
        let a = synth_dataset(64, 8, 3, 2.0, 9).unwrap();
        let b = synth_dataset(64, 8, 3, 2.0, 9).unwrap();
        assert_eq!(a, b);
        assert!(a.features.bit_eq(&b.features));
    }

    #[test]
    fn labels_are_balanced_and_valid() {
        let d = synth_dataset(90, 4, 3, 1.0, 1).unwrap();
        d.validate().unwrap();
        for c in 0..3 {
            assert_eq!(d.labels.iter().filter(|&&l| l == c).count(), 30);
        }
    }

    #[test]
    fn zero_separation_collapses_class_means() {
        let d = synth_dataset(3000, 6, 3, 0.0, 4).unwrap();
        // with no separation the per-class feature means all sit near zero
        for c in 0..3 {
            for dim in 0..6 {
                let (mut sum, mut count) = (0.0, 0);
                for (i, &l) in d.labels.iter().enumerate() {
                    if l == c {
                        sum += d.features.get(i, dim);
                        count += 1;
                    }
                }
                let mean = sum / count as f64;
                assert!(mean.abs() < 0.15, "class {c} dim {dim}: mean {mean}");
            }
        }
    }

    #[test]
    fn split_shares_centers_but_not_noise() {
        let split = synth_split(60, 60, 8, 3, 3.0, 11).unwrap();
        assert_ne!(split.train.features, split.test.features);
        // same class geometry: per-class means agree between the halves
        for c in 0..3 {
            let mean_of = |d: &Dataset| {
                let (mut sum, mut count) = (0.0, 0);
                for (i, &l) in d.labels.iter().enumerate() {
                    if l == c {
                        sum += d.features.get(i, 0);
                        count += 1;
                    }
                }
                sum / count as f64
            };
            let gap = (mean_of(&split.train) - mean_of(&split.test)).abs();
            assert!(gap < 0.8, "class {c}: train/test center gap {gap}");
        }
    }

    #[test]
    fn rejects_degenerate_requests() {
        assert!(matches!(
            synth_dataset(10, 4, 1, 1.0, 0),
            Err(Error::Domain(_))
        ));
        assert!(matches!(
            synth_dataset(0, 4, 3, 1.0, 0),
            Err(Error::Domain(_))
        ));
        assert!(matches!(
            synth_dataset(10, 4, 3, -1.0, 0),
            Err(Error::Domain(_))
        ));
    }
}
