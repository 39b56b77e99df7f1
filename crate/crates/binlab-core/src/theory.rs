//! Analytic per-layer variance predictions for dense chains at initialization.
//!
//! Forward: the linear-chain variance product
//! `Var(s^l) = Var(x) * prod_{l'<=l} K_{l'-1} Var(w^{l'})`, with binary layers
//! contributing unit weight variance.
//!
//! Backward, relative to the top-layer gradient variance:
//! - without normalization the gain per layer is the downstream width, so
//!   `Var(dL/ds^l) = var_top * prod_{l'=l+1..L} K_{l'}`;
//! - with batch normalization (unit gamma at initialization) each step
//!   contributes `K_{l'+1} / K_{l'-1}`, which telescopes to
//!   `(K_{L-1} K_L) / (K_{l-1} K_l)`; the exact model multiplies each step by
//!   `(B^2 + 2B - 1 + Var(shat^2)) / B^2`, where `Var(shat^2)` is bounded by
//!   fan-in minus one.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::net::NetworkSpec;
use crate::normalizer::NormalizerKind;

/// Which backward-variance model produced a prediction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PredictionModel {
    NoNorm,
    BnLeading,
    BnExact,
}

impl PredictionModel {
    pub fn name(&self) -> &'static str {
        match self {
            PredictionModel::NoNorm => "no-norm",
            PredictionModel::BnLeading => "bn-leading-order",
            PredictionModel::BnExact => "bn-exact-prefactor",
        }
    }
}

/// Per-layer predicted gradient variances relative to the top layer
/// (`per_layer[l-1]` is layer `l`; the last entry equals `var_top`).
#[derive(Debug, Clone, PartialEq)]
pub struct VariancePrediction {
    pub per_layer: Vec<f64>,
    pub model: PredictionModel,
}

/// Batch-norm backward model selector. The exact model needs `Var(shat^2)`
/// per step, indexed so `vshat_by_step[l'-1]` is the value at fan-in
/// `K_{l'-1}` (the measurement harness supplies these).
#[derive(Debug, Clone, PartialEq)]
pub enum BnModel {
    Leading,
    Exact { vshat_by_step: Vec<f64> },
}

/// Forward variance product per layer. `var_w` supplies one weight variance
/// per layer; binary layers override it with 1 (their binarized weights have
/// unit variance regardless of the latent scale).
pub fn predict_forward_variance(
    spec: &NetworkSpec,
    var_x: f64,
    var_w: &[f64],
) -> Result<Vec<f64>> {
    spec.validate()?;
    if var_w.len() != spec.layers.len() {
        return Err(Error::Shape(format!(
            "{} weight variances for {} layers",
            var_w.len(),
            spec.layers.len()
        )));
    }
    if !(var_x >= 0.0) {
        return Err(Error::Domain(format!(
            "input variance must be nonnegative, got {var_x}"
        )));
    }
    let widths = spec.widths();
    let mut out = Vec::with_capacity(spec.layers.len());
    let mut acc = var_x;
    for (l, layer) in spec.layers.iter().enumerate() {
        let vw = if layer.binary { 1.0 } else { var_w[l] };
        acc *= widths[l] as f64 * vw;
        out.push(acc);
    }
    Ok(out)
}

fn require_all_binary(spec: &NetworkSpec, what: &str) -> Result<()> {
    if let Some(i) = spec.layers.iter().position(|l| !l.binary) {
        return Err(Error::Contract(format!(
            "{what} assumes binary layers (unit weight variance); layer {} is full-precision",
            i + 1
        )));
    }
    Ok(())
}

/// Backward variance without normalization:
/// `per_layer[l-1] = var_top * prod_{l'=l+1..L} K_{l'}`.
pub fn predict_backward_variance_no_norm(
    spec: &NetworkSpec,
    var_top: f64,
) -> Result<VariancePrediction> {
    spec.validate()?;
    require_all_binary(spec, "the no-norm backward prediction")?;
    let widths = spec.widths();
    let depth = spec.layers.len();
    let mut per_layer = alloc::vec![var_top; depth];
    // accumulate the downstream width product from the top
    for l in (0..depth - 1).rev() {
        per_layer[l] = per_layer[l + 1] * widths[l + 2] as f64;
    }
    Ok(VariancePrediction {
        per_layer,
        model: PredictionModel::NoNorm,
    })
}

/// Backward variance with batch normalization (unit gamma, zero beta at
/// initialization). The leading model applies the width ratio
/// `K_{l'+1}/K_{l'-1}` per step; the exact model multiplies each step by
/// `(B^2 + 2B - 1 + Var(shat^2)) / B^2`.
pub fn predict_backward_variance_bn(
    spec: &NetworkSpec,
    var_top: f64,
    batch: usize,
    model: &BnModel,
) -> Result<VariancePrediction> {
    spec.validate()?;
    require_all_binary(spec, "the batch-norm backward prediction")?;
    if let Some(i) = spec
        .layers
        .iter()
        .position(|l| l.normalizer.kind != NormalizerKind::FullBn)
    {
        return Err(Error::Contract(format!(
            "the batch-norm backward prediction needs full batch norm on every layer; layer {} differs",
            i + 1
        )));
    }
    if batch == 0 {
        return Err(Error::Domain("batch must be positive".into()));
    }
    let depth = spec.layers.len();
    if let BnModel::Exact { vshat_by_step } = model {
        if vshat_by_step.len() != depth - 1 {
            return Err(Error::Shape(format!(
                "{} shat^2 variances for {} steps",
                vshat_by_step.len(),
                depth - 1
            )));
        }
    }
    let widths = spec.widths();
    let bf = batch as f64;
    let mut per_layer = alloc::vec![var_top; depth];
    // steps l' = l..L-1; build from the top down
    for l in (0..depth - 1).rev() {
        let step = l + 1; // 1-based step index l'
        let ratio = widths[step + 1] as f64 / widths[step - 1] as f64;
        let factor = match model {
            BnModel::Leading => ratio,
            BnModel::Exact { vshat_by_step } => {
                let vshat = vshat_by_step[step - 1];
                ratio * (bf * bf + 2.0 * bf - 1.0 + vshat) / (bf * bf)
            }
        };
        per_layer[l] = per_layer[l + 1] * factor;
    }
    Ok(VariancePrediction {
        per_layer,
        model: match model {
            BnModel::Leading => PredictionModel::BnLeading,
            BnModel::Exact { .. } => PredictionModel::BnExact,
        },
    })
}
