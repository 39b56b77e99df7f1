//! Float math routed through `libm`.
//!
//! The system math library differs between platforms for `exp`/`log`; routing
//! everything through `libm` keeps sequences of f64 operations bit-reproducible
//! everywhere, which the regression tests rely on.

#[inline]
pub fn sqrt(x: f64) -> f64 {
    libm::sqrt(x)
}

#[inline]
pub fn exp(x: f64) -> f64 {
    libm::exp(x)
}

#[inline]
pub fn ln(x: f64) -> f64 {
    libm::log(x)
}

/// Round half away from zero, the `[.]` used when folding thresholds.
#[inline]
pub fn round(x: f64) -> f64 {
    libm::round(x)
}

#[inline]
pub fn cos(x: f64) -> f64 {
    libm::cos(x)
}

#[inline]
pub fn powi(x: f64, n: i32) -> f64 {
    libm::pow(x, n as f64)
}
