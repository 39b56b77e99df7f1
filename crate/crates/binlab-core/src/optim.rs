//! Adam with bias correction and a stepped learning-rate schedule.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::fmath;
use crate::matrix::Matrix;

/// Adam hyperparameters. `lr` is the base rate; the effective rate comes from
/// the schedule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamHyper {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamHyper {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) {
            return Err(Error::Domain(format!(
                "learning rate must be positive, got {}",
                self.lr
            )));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Domain("betas must lie in [0, 1)".into()));
        }
        if !(self.eps > 0.0) {
            return Err(Error::Domain("adam eps must be positive".into()));
        }
        Ok(())
    }
}

/// First/second moment estimates for one parameter tensor.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub m: Matrix,
    pub v: Matrix,
}

impl AdamState {
    pub fn new(rows: usize, cols: usize) -> Self {
        Self {
            m: Matrix::zeros(rows, cols),
            v: Matrix::zeros(rows, cols),
        }
    }
}

/// One bias-corrected Adam update in place. `step` is the 1-based update
/// count shared by all parameters of the optimizer.
pub fn adam_step(
    param: &mut Matrix,
    grad: &Matrix,
    state: &mut AdamState,
    hyper: &AdamHyper,
    lr: f64,
    step: u64,
) -> Result<()> {
    if !param.same_shape(grad) || !param.same_shape(&state.m) {
        return Err(Error::Shape(format!(
            "adam: param {}x{}, grad {}x{}, state {}x{}",
            param.rows(),
            param.cols(),
            grad.rows(),
            grad.cols(),
            state.m.rows(),
            state.m.cols()
        )));
    }
    if step == 0 {
        return Err(Error::Contract("adam step count starts at 1".into()));
    }
    let b1 = hyper.beta1;
    let b2 = hyper.beta2;
    let bc1 = 1.0 - fmath::powi(b1, step as i32);
    let bc2 = 1.0 - fmath::powi(b2, step as i32);
    let (pv, gv) = (param.values_mut(), grad.values());
    let (mv, vv) = (state.m.values_mut(), state.v.values_mut());
    for i in 0..pv.len() {
        let g = gv[i];
        mv[i] = b1 * mv[i] + (1.0 - b1) * g;
        vv[i] = b2 * vv[i] + (1.0 - b2) * g * g;
        let mhat = mv[i] / bc1;
        let vhat = vv[i] / bc2;
        pv[i] -= lr * mhat / (fmath::sqrt(vhat) + hyper.eps);
    }
    Ok(())
}

/// Clamp every entry to [-1, 1] (latent weights of binary layers).
pub fn clip_unit_interval(m: &mut Matrix) {
    for v in m.values_mut() {
        *v = v.clamp(-1.0, 1.0);
    }
}

/// Base rate divided by `decay_div` at each milestone, inclusive: the decay
/// applies from the milestone epoch onward.
#[derive(Debug, Clone, PartialEq)]
pub struct LrSchedule {
    pub base_lr: f64,
    pub milestones: Vec<usize>,
    pub decay_div: f64,
}

impl LrSchedule {
    pub fn validate(&self, epochs: usize) -> Result<()> {
        if !(self.base_lr > 0.0) {
            return Err(Error::Domain("base learning rate must be positive".into()));
        }
        if !(self.decay_div > 1.0) {
            return Err(Error::Domain(format!(
                "decay divisor must exceed 1, got {}",
                self.decay_div
            )));
        }
        if !self.milestones.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::Domain("milestones must be strictly increasing".into()));
        }
        if let Some(&last) = self.milestones.last() {
            if last >= epochs {
                return Err(Error::Domain(format!(
                    "milestone {last} not below epoch count {epochs}"
                )));
            }
        }
        Ok(())
    }

    /// The rate in force at `epoch`.
    pub fn lr_at_epoch(&self, epoch: usize) -> f64 {
        let passed = self.milestones.iter().filter(|&&m| epoch >= m).count();
        self.base_lr / fmath::powi(self.decay_div, passed as i32)
    }
}
