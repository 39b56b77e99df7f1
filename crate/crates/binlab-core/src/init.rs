//! Weight initialization families.
//!
//! All families are symmetric about zero. The uniform and gaussian families
//! are parameterized directly by variance; the two fan-scaled families derive
//! it from layer dimensions. Sampling draws an underlying unit-scale value
//! first and then scales it, so two schemes differing only in variance are
//! coupled draw-for-draw under the same stream: the sign pattern is identical.

use alloc::format;

use crate::error::{Error, Result};
use crate::fmath;
use crate::matrix::Matrix;
use crate::rng::RngStream;
use crate::tape::sign_forward;

/// Symmetric zero-mean initialization families.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InitFamily {
    /// Uniform on [-sqrt(3 s2), +sqrt(3 s2)), variance `s2`.
    UniformSymmetric,
    /// Normal with variance `s2`.
    GaussianSymmetric,
    /// Uniform with the fan-averaged variance `2 / (k_in + k_out)`.
    GlorotUniform,
    /// Uniform with the fan-in variance `1 / k_in`.
    FanInUniform,
}

/// An initialization family plus its target variance (ignored by the
/// fan-scaled families, which derive it from the dimensions).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InitScheme {
    pub family: InitFamily,
    pub sigma_sq: f64,
}

impl InitScheme {
    pub fn uniform(sigma_sq: f64) -> Self {
        Self {
            family: InitFamily::UniformSymmetric,
            sigma_sq,
        }
    }

    pub fn gaussian(sigma_sq: f64) -> Self {
        Self {
            family: InitFamily::GaussianSymmetric,
            sigma_sq,
        }
    }

    pub fn glorot() -> Self {
        Self {
            family: InitFamily::GlorotUniform,
            sigma_sq: 1.0,
        }
    }

    pub fn fan_in() -> Self {
        Self {
            family: InitFamily::FanInUniform,
            sigma_sq: 1.0,
        }
    }

    /// The scheme with its variance replaced (families that derive variance
    /// from dimensions are unaffected).
    pub fn with_sigma_sq(self, sigma_sq: f64) -> Self {
        Self { sigma_sq, ..self }
    }

    /// The variance actually realized for a `k_in x k_out` weight matrix.
    pub fn effective_sigma_sq(&self, k_in: usize, k_out: usize) -> f64 {
        match self.family {
            InitFamily::UniformSymmetric | InitFamily::GaussianSymmetric => self.sigma_sq,
            InitFamily::GlorotUniform => glorot_variance(k_in, k_out).fan_avg,
            InitFamily::FanInUniform => glorot_variance(k_in, k_out).fan_in,
        }
    }
}

/// Both fan conventions for variance-scaled initialization.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GlorotVariance {
    /// `1 / k_in`.
    pub fan_in: f64,
    /// `2 / (k_in + k_out)`.
    pub fan_avg: f64,
}

/// Variance targets for a `k_in x k_out` layer under both conventions; the
/// caller picks one.
pub fn glorot_variance(k_in: usize, k_out: usize) -> GlorotVariance {
    GlorotVariance {
        fan_in: 1.0 / k_in as f64,
        fan_avg: 2.0 / (k_in + k_out) as f64,
    }
}

/// Sample a `k_in x k_out` weight matrix, i.i.d. entries in row-major order.
pub fn sample_weights(
    scheme: &InitScheme,
    k_in: usize,
    k_out: usize,
    rng: &mut RngStream,
) -> Result<Matrix> {
    if k_in == 0 || k_out == 0 {
        return Err(Error::Shape(format!(
            "weight dimensions must be positive, got {k_in}x{k_out}"
        )));
    }
    if matches!(
        scheme.family,
        InitFamily::UniformSymmetric | InitFamily::GaussianSymmetric
    ) && !(scheme.sigma_sq > 0.0)
    {
        return Err(Error::Domain(format!(
            "initialization variance must be positive, got {}",
            scheme.sigma_sq
        )));
    }
    let sigma_sq = scheme.effective_sigma_sq(k_in, k_out);
    let m = match scheme.family {
        InitFamily::GaussianSymmetric => {
            let sigma = fmath::sqrt(sigma_sq);
            Matrix::from_fn(k_in, k_out, |_, _| sigma * rng.standard_normal())
        }
        _ => {
            // uniform variance = half_range^2 / 3
            let half_range = fmath::sqrt(3.0 * sigma_sq);
            Matrix::from_fn(k_in, k_out, |_, _| half_range * rng.uniform_symmetric())
        }
    };
    Ok(m)
}

/// Elementwise sign of latent weights, `sign(0) = +1`. Idempotent, and the
/// result has unit variance for any family symmetric about zero.
pub fn binarize(w: &Matrix) -> Matrix {
    sign_forward(w)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded_stream;

    fn population_stats(m: &Matrix) -> (f64, f64) {
        let n = m.values().len() as f64;
        let mean = m.values().iter().sum::<f64>() / n;
        let var = m.values().iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        (mean, var)
    }

    #[test]
    fn uniform_support_matches_variance() {
        // sigma^2 = 1/12 gives the unit-width uniform on [-0.5, 0.5).
        let mut rng = seeded_stream(1, 0);
        let w = sample_weights(&InitScheme::uniform(1.0 / 12.0), 100, 100, &mut rng).unwrap();
        let max = w.values().iter().fold(0.0f64, |a, &v| a.max(v.abs()));
        assert!(max < 0.5);
        assert!(max > 0.49, "support should be exercised, max {max}");
    }

    #[test]
    fn sample_mean_is_near_zero() {
        let mut rng = seeded_stream(2, 0);
        let w = sample_weights(&InitScheme::uniform(0.04), 400, 250, &mut rng).unwrap();
        let (mean, _) = population_stats(&w);
        // 100k draws: |mean| within 0.01 sigma is a ~3 sigma bound.
        assert!(mean.abs() <= 0.01 * 0.2, "mean {mean}");
    }

    #[test]
    fn realized_variance_tracks_target() {
        for scheme in [
            InitScheme::uniform(0.01),
            InitScheme::uniform(1.0),
            InitScheme::gaussian(0.25),
            InitScheme::glorot(),
            InitScheme::fan_in(),
        ] {
            let mut rng = seeded_stream(3, 7);
            let w = sample_weights(&scheme, 100, 100, &mut rng).unwrap();
            let target = scheme.effective_sigma_sq(100, 100);
            let (_, var) = population_stats(&w);
            assert!(
                (var - target).abs() <= 0.05 * target,
                "{scheme:?}: realized {var} vs target {target}"
            );
        }
    }

    #[test]
    fn coupled_draws_share_signs_across_variances() {
        let signs = |s2: f64| {
            let mut rng = seeded_stream(9, 4);
            binarize(&sample_weights(&InitScheme::uniform(s2), 32, 16, &mut rng).unwrap())
        };
        let base = signs(1e-1);
        for s2 in [1e-2, 1e-3, 1e-4] {
            assert!(signs(s2).bit_eq(&base), "sigma^2 {s2}");
        }
    }

    #[test]
    fn rejects_nonpositive_variance() {
        let mut rng = seeded_stream(1, 1);
        assert!(matches!(
            sample_weights(&InitScheme::uniform(0.0), 4, 4, &mut rng),
            Err(Error::Domain(_))
        ));
        assert!(matches!(
            sample_weights(&InitScheme::gaussian(-1.0), 4, 4, &mut rng),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn glorot_conventions() {
        assert_eq!(glorot_variance(100, 60).fan_in, 0.01);
        let same = glorot_variance(64, 64);
        assert_eq!(same.fan_in, same.fan_avg);
        assert_eq!(glorot_variance(64, 16).fan_avg, 0.025);
    }

    #[test]
    fn binarized_weights_have_unit_variance() {
        for scheme in [InitScheme::uniform(0.37), InitScheme::gaussian(2.0)] {
            let mut rng = seeded_stream(10, 2);
            let w = sample_weights(&scheme, 100, 100, &mut rng).unwrap();
            let wb = binarize(&w);
            let (_, var) = population_stats(&wb);
            assert!((0.97..=1.0).contains(&var), "{scheme:?}: var {var}");
        }
    }

    #[test]
    fn binarize_is_idempotent_and_scale_invariant() {
        let mut rng = seeded_stream(11, 0);
        let w = sample_weights(&InitScheme::gaussian(1.0), 16, 16, &mut rng).unwrap();
        let wb = binarize(&w);
        assert!(binarize(&wb).bit_eq(&wb));
        assert!(binarize(&w.scale(1e-3)).bit_eq(&wb));
    }
}
