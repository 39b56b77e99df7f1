//! Moments of the transformed Bernoulli (±1-valued) variable.

use alloc::format;

use crate::error::{Error, Result};

/// Mean and variance of a ±1 variable that is `+1` with probability `p`:
/// `(2p - 1, 4p(1 - p))`.
pub fn rademacher_moments(p: f64) -> Result<(f64, f64)> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::Domain(format!(
            "probability must lie in [0, 1], got {p}"
        )));
    }
    Ok((2.0 * p - 1.0, 4.0 * p * (1.0 - p)))
}
