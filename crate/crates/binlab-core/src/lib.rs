//! Core numerics for a binary-dense-network gradient laboratory.
//!
//! The crate provides the pieces needed to train sign-activated networks and
//! to study how normalization shapes their gradient statistics:
//!
//! - [`matrix`] / [`rng`] / [`moments`]: deterministic matrices, splittable
//!   seeded streams, and ±1 (transformed-Bernoulli) moment formulas;
//! - [`tape`]: a small reverse-mode tape over linear, sign-with-STE,
//!   normalization, ReLU, and softmax-cross-entropy ops, plus a
//!   finite-difference gradient checker;
//! - [`normalizer`]: batch normalization with a closed-form input gradient,
//!   the fixed-scale/center-only/identity ablation variants, and folding of
//!   normalize-then-sign into a per-neuron threshold;
//! - [`init`] / [`theory`]: weight initialization families and analytic
//!   per-layer gradient-variance predictions with and without normalization;
//! - [`harness`]: seeded Monte-Carlo measurement of those variances at
//!   initialization;
//! - [`net`] / [`optim`] / [`data`] / [`train`]: dense network state, Adam
//!   with a stepped learning-rate schedule, synthetic datasets, and the
//!   training loop.
//!
//! Everything is `f64` and fully deterministic: reductions use fixed
//! accumulation orders and all transcendentals go through `libm`, so a given
//! seed reproduces results bit-for-bit across platforms. The crate is
//! `no_std` (with `alloc`); anything that needs a clock, files, or threads
//! lives in the companion CLI crate.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod data;
pub mod error;
pub mod fmath;
pub mod harness;
pub mod init;
pub mod matrix;
pub mod moments;
pub mod net;
pub mod normalizer;
pub mod optim;
pub mod rng;
pub mod tape;
pub mod theory;
pub mod train;

pub use error::{Error, Result};
pub use matrix::{matmul, Matrix};
pub use rng::{seeded_stream, RngStream};
