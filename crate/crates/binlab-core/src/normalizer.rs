//! Normalization variants for the ablation family, the closed-form batch-norm
//! input gradient, and folding of normalize-then-sign into a threshold test.
//!
//! Batch statistics use the biased (divide-by-B) variance; that is the
//! convention under which the three-term closed-form input gradient is exact.
//! `BatchStats::sigma` stores the effective standard deviation actually used
//! by the forward pass, `sqrt(var + epsilon)`, so backward and threshold
//! folding are consistent with the forward arithmetic to the last bit.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::fmath;
use crate::matrix::Matrix;

pub const DEFAULT_EPSILON: f64 = 1e-5;
pub const DEFAULT_MOMENTUM: f64 = 0.1;

/// Which normalization a layer applies to its pre-activations.
#[derive(Debug, Clone, PartialEq)]
pub enum NormalizerKind {
    /// Batch standardization followed by the learned affine pair.
    FullBn,
    /// Batch centering followed by a fixed positive scale.
    CenterScale { scale: f64 },
    /// Batch centering only (a fixed scale of 1).
    CenterOnly,
    /// Pass-through.
    Identity,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NormalizerConfig {
    pub kind: NormalizerKind,
    /// Added inside the square root of the batch standard deviation (FullBn).
    pub epsilon: f64,
    /// Exponential-moving-average weight of the current batch in running stats.
    pub momentum: f64,
}

impl NormalizerConfig {
    pub fn full_bn() -> Self {
        Self {
            kind: NormalizerKind::FullBn,
            epsilon: DEFAULT_EPSILON,
            momentum: DEFAULT_MOMENTUM,
        }
    }

    pub fn center_scale(scale: f64) -> Self {
        Self {
            kind: NormalizerKind::CenterScale { scale },
            epsilon: DEFAULT_EPSILON,
            momentum: DEFAULT_MOMENTUM,
        }
    }

    pub fn center_only() -> Self {
        Self {
            kind: NormalizerKind::CenterOnly,
            epsilon: DEFAULT_EPSILON,
            momentum: DEFAULT_MOMENTUM,
        }
    }

    pub fn identity() -> Self {
        Self {
            kind: NormalizerKind::Identity,
            epsilon: DEFAULT_EPSILON,
            momentum: DEFAULT_MOMENTUM,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let NormalizerKind::CenterScale { scale } = self.kind {
            if !(scale > 0.0) {
                return Err(Error::Domain(format!(
                    "center-scale factor must be positive, got {scale}"
                )));
            }
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::Domain(format!(
                "epsilon must be positive, got {}",
                self.epsilon
            )));
        }
        if !(self.momentum > 0.0 && self.momentum < 1.0) {
            return Err(Error::Domain(format!(
                "momentum must lie in (0, 1), got {}",
                self.momentum
            )));
        }
        Ok(())
    }
}

/// Learned per-neuron affine pair, initialized to `(1, 0)`.
#[derive(Debug, Clone, PartialEq)]
pub struct BnParams {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
}

impl BnParams {
    pub fn new(width: usize) -> Self {
        Self {
            gamma: vec![1.0; width],
            beta: vec![0.0; width],
        }
    }
}

/// Per-neuron statistics of one mini-batch.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    /// Raw biased variance (what running statistics track).
    pub var: Vec<f64>,
    /// Effective standard deviation used by the forward pass: sqrt(var + eps).
    pub sigma: Vec<f64>,
    pub batch: usize,
}

/// Exponential-moving-average statistics used in eval mode.
#[derive(Debug, Clone, PartialEq)]
pub struct RunningStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl RunningStats {
    pub fn new(width: usize) -> Self {
        Self {
            mean: vec![0.0; width],
            var: vec![1.0; width],
        }
    }
}

/// Forward mode: train computes batch statistics, eval applies running ones.
#[derive(Debug, Clone, Copy)]
pub enum Mode<'a> {
    Train,
    Eval(&'a RunningStats),
}

/// Batch-norm forward output with the context backward needs.
#[derive(Debug, Clone)]
pub struct BnForward {
    pub z: Matrix,
    pub shat: Matrix,
    pub stats: BatchStats,
}

/// Standardize per neuron and apply the affine pair.
///
/// Train mode needs a batch of at least 2 and uses biased batch variance with
/// `epsilon` inside the square root; eval mode standardizes with running
/// statistics. The standardized matrix is returned for backward.
pub fn bn_forward(s: &Matrix, params: &BnParams, epsilon: f64, mode: Mode) -> Result<BnForward> {
    let width = s.cols();
    if params.gamma.len() != width || params.beta.len() != width {
        return Err(Error::Shape(format!(
            "bn params sized {} for width {width}",
            params.gamma.len()
        )));
    }
    let stats = match mode {
        Mode::Train => {
            if s.rows() < 2 {
                return Err(Error::Contract(format!(
                    "train-mode batch norm needs a batch of at least 2, got {}",
                    s.rows()
                )));
            }
            let mean = s.col_mean();
            let var = s.col_variance_biased(&mean);
            let sigma: Vec<f64> = var.iter().map(|&v| fmath::sqrt(v + epsilon)).collect();
            BatchStats {
                mean,
                var,
                sigma,
                batch: s.rows(),
            }
        }
        Mode::Eval(running) => {
            if running.mean.len() != width {
                return Err(Error::Shape(format!(
                    "running stats sized {} for width {width}",
                    running.mean.len()
                )));
            }
            let sigma: Vec<f64> = running
                .var
                .iter()
                .map(|&v| fmath::sqrt(v + epsilon))
                .collect();
            BatchStats {
                mean: running.mean.clone(),
                var: running.var.clone(),
                sigma,
                batch: s.rows(),
            }
        }
    };
    if let Some(k) = stats.sigma.iter().position(|&sd| sd == 0.0) {
        return Err(Error::Singular(format!(
            "zero standard deviation at neuron {k} with epsilon {epsilon}"
        )));
    }
    let mut shat = Matrix::zeros(s.rows(), s.cols());
    let mut z = Matrix::zeros(s.rows(), s.cols());
    for i in 0..s.rows() {
        for j in 0..width {
            let sh = (s.get(i, j) - stats.mean[j]) / stats.sigma[j];
            shat.set(i, j, sh);
            z.set(i, j, params.gamma[j] * sh + params.beta[j]);
        }
    }
    Ok(BnForward { z, shat, stats })
}

/// Closed-form input gradient of batch norm:
///
/// `dS[b,k] = (gamma_k / sigma_k) * ( -mean_b'(dZ[.,k])
///            - shat[b,k] * mean_b'(dZ[.,k] * shat[.,k]) + dZ[b,k] )`.
///
/// `shat` and `stats` must come from the matching train-mode forward call.
pub fn bn_backward_closed(
    shat: &Matrix,
    dz: &Matrix,
    params: &BnParams,
    stats: &BatchStats,
) -> Result<Matrix> {
    if !shat.same_shape(dz) {
        return Err(Error::Shape(format!(
            "bn backward: shat {}x{} vs dz {}x{}",
            shat.rows(),
            shat.cols(),
            dz.rows(),
            dz.cols()
        )));
    }
    let (b, width) = (shat.rows(), shat.cols());
    if stats.sigma.len() != width || params.gamma.len() != width {
        return Err(Error::Shape(format!(
            "bn backward: stats/params width mismatch for {width}"
        )));
    }
    if let Some(k) = stats.sigma.iter().position(|&sd| sd == 0.0) {
        return Err(Error::Singular(format!(
            "bn backward: zero standard deviation at neuron {k}"
        )));
    }
    let bf = b as f64;
    // Per-neuron batch means of dZ and of dZ ⊙ shat, accumulated row-ascending.
    let mut mean_dz = vec![0.0; width];
    let mut mean_dz_shat = vec![0.0; width];
    for i in 0..b {
        for j in 0..width {
            mean_dz[j] += dz.get(i, j);
            mean_dz_shat[j] += dz.get(i, j) * shat.get(i, j);
        }
    }
    mean_dz.iter_mut().for_each(|v| *v /= bf);
    mean_dz_shat.iter_mut().for_each(|v| *v /= bf);

    let mut ds = Matrix::zeros(b, width);
    for i in 0..b {
        for j in 0..width {
            let g = params.gamma[j] / stats.sigma[j];
            let v = -mean_dz[j] - shat.get(i, j) * mean_dz_shat[j] + dz.get(i, j);
            ds.set(i, j, g * v);
        }
    }
    Ok(ds)
}

/// Gradients of the affine pair: `dbeta_k = sum_b dZ[b,k]`,
/// `dgamma_k = sum_b dZ[b,k] * shat[b,k]`.
pub fn bn_param_grads(shat: &Matrix, dz: &Matrix) -> Result<(Vec<f64>, Vec<f64>)> {
    if !shat.same_shape(dz) {
        return Err(Error::Shape(format!(
            "bn param grads: shat {}x{} vs dz {}x{}",
            shat.rows(),
            shat.cols(),
            dz.rows(),
            dz.cols()
        )));
    }
    let width = shat.cols();
    let mut dgamma = vec![0.0; width];
    let mut dbeta = vec![0.0; width];
    for i in 0..shat.rows() {
        for j in 0..width {
            dgamma[j] += dz.get(i, j) * shat.get(i, j);
            dbeta[j] += dz.get(i, j);
        }
    }
    Ok((dgamma, dbeta))
}

/// Center-scale forward output with the batch means backward/eval need.
#[derive(Debug, Clone)]
pub struct CenterScaleForward {
    pub z: Matrix,
    pub mean: Vec<f64>,
}

/// Subtract the per-neuron mean and multiply by a fixed positive scale.
///
/// Train mode centers with batch means; eval mode uses running means.
/// Center-only is the special case `scale = 1`.
pub fn center_scale_forward(s: &Matrix, scale: f64, mode: Mode) -> Result<CenterScaleForward> {
    if !(scale > 0.0) {
        return Err(Error::Domain(format!(
            "center-scale factor must be positive, got {scale}"
        )));
    }
    let mean = match mode {
        Mode::Train => s.col_mean(),
        Mode::Eval(running) => {
            if running.mean.len() != s.cols() {
                return Err(Error::Shape(format!(
                    "running mean sized {} for width {}",
                    running.mean.len(),
                    s.cols()
                )));
            }
            running.mean.clone()
        }
    };
    let mut z = Matrix::zeros(s.rows(), s.cols());
    for i in 0..s.rows() {
        for j in 0..s.cols() {
            z.set(i, j, (s.get(i, j) - mean[j]) * scale);
        }
    }
    Ok(CenterScaleForward { z, mean })
}

/// Input gradient of train-mode center-scale: `scale * (dZ - mean_b(dZ))`.
pub fn center_scale_backward(dz: &Matrix, scale: f64) -> Matrix {
    let mean = dz.col_mean();
    Matrix::from_fn(dz.rows(), dz.cols(), |i, j| {
        scale * (dz.get(i, j) - mean[j])
    })
}

/// A folded normalize-then-sign test for one neuron.
///
/// With positive orientation the sign output is `+1` iff `s >= tau`; with
/// negative orientation (negative gamma) the inequality flips: `+1` iff
/// `s <= tau`.
#[derive(Debug, Clone, PartialEq)]
pub struct Threshold {
    pub tau: f64,
    pub positive_when_ge: bool,
}

impl Threshold {
    /// The integer-rounded threshold (round half away from zero).
    pub fn rounded(&self) -> f64 {
        fmath::round(self.tau)
    }

    /// Evaluate the exact threshold test on a dot product.
    pub fn apply(&self, s: f64) -> f64 {
        let fired = if self.positive_when_ge {
            s >= self.tau
        } else {
            s <= self.tau
        };
        if fired {
            1.0
        } else {
            -1.0
        }
    }

    /// Evaluate the rounded-threshold test (can disagree with `apply` when
    /// the fractional part of tau matters on an integer lattice).
    pub fn apply_rounded(&self, s: f64) -> f64 {
        let r = self.rounded();
        let fired = if self.positive_when_ge { s >= r } else { s <= r };
        if fired {
            1.0
        } else {
            -1.0
        }
    }
}

/// Fold per-neuron statistics and the affine pair into threshold tests:
/// `tau_k = mean_k - (sigma_k / gamma_k) * beta_k`, oriented by sign(gamma).
pub fn fold_bn_to_threshold(stats: &BatchStats, params: &BnParams) -> Result<Vec<Threshold>> {
    let width = stats.mean.len();
    if params.gamma.len() != width || stats.sigma.len() != width {
        return Err(Error::Shape(format!(
            "threshold fold: width mismatch for {width}"
        )));
    }
    let mut out = Vec::with_capacity(width);
    for k in 0..width {
        if stats.sigma[k] == 0.0 {
            return Err(Error::Singular(format!(
                "threshold fold: zero standard deviation at neuron {k}"
            )));
        }
        if params.gamma[k] == 0.0 {
            return Err(Error::Singular(format!(
                "threshold fold: zero gamma at neuron {k}"
            )));
        }
        out.push(Threshold {
            tau: stats.mean[k] - stats.sigma[k] / params.gamma[k] * params.beta[k],
            positive_when_ge: params.gamma[k] > 0.0,
        });
    }
    Ok(out)
}

/// Exponential moving average: `new = (1 - momentum) * old + momentum * batch`.
pub fn update_running_stats(
    running: &RunningStats,
    batch: &BatchStats,
    momentum: f64,
) -> Result<RunningStats> {
    if !(momentum > 0.0 && momentum < 1.0) {
        return Err(Error::Domain(format!(
            "momentum must lie in (0, 1), got {momentum}"
        )));
    }
    if running.mean.len() != batch.mean.len() {
        return Err(Error::Shape(format!(
            "running stats width {} vs batch width {}",
            running.mean.len(),
            batch.mean.len()
        )));
    }
    let blend = |old: f64, new: f64| (1.0 - momentum) * old + momentum * new;
    Ok(RunningStats {
        mean: running
            .mean
            .iter()
            .zip(&batch.mean)
            .map(|(&o, &n)| blend(o, n))
            .collect(),
        var: running
            .var
            .iter()
            .zip(&batch.var)
            .map(|(&o, &n)| blend(o, n))
            .collect(),
    })
}
