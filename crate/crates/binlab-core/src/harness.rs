//! Monte-Carlo measurement of per-layer gradient variance at initialization.
//!
//! Each trial draws fresh weights and inputs, runs one train-mode forward
//! pass, injects a unit-variance synthetic gradient at the top layer's dot
//! products, and propagates it down through binarized weights and normalizer
//! backwards. The activation derivative is treated as identity on this path:
//! the quantity under measurement is the gain of the linear-plus-normalizer
//! recursion itself, not the straight-through clip.
//!
//! Trials are independent units of work. Trial `t` owns the stream
//! `(master_seed, t)` and its partial sums are reduced in trial order, so a
//! report is bit-identical no matter how trials were scheduled.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::matrix::{matmul, Matrix};
use crate::net::{Network, NetworkSpec};
use crate::normalizer::{
    bn_backward_closed, center_scale_backward, NormalizerConfig, NormalizerKind,
};
use crate::init::InitScheme;
use crate::rng::{seeded_stream, RngStream};
use crate::theory::{
    predict_backward_variance_bn, predict_backward_variance_no_norm, BnModel, PredictionModel,
};

/// Input feature distribution for measurement trials.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InputDist {
    /// ±1 with equal probability (unit variance, matching binary dot-product
    /// assumptions). The default.
    Rademacher,
    /// Standard normal.
    Gaussian,
}

impl InputDist {
    pub fn name(&self) -> &'static str {
        match self {
            InputDist::Rademacher => "rademacher",
            InputDist::Gaussian => "gaussian",
        }
    }
}

/// Monte-Carlo configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct McConfig {
    pub trials: usize,
    pub batch_size: usize,
    pub master_seed: u64,
    pub input_dist: InputDist,
}

/// Partial sums from one trial: per layer, the (sum, sum of squares) of every
/// top-gradient entry at that layer's dot products.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialAccum {
    pub per_layer: Vec<(f64, f64)>,
}

/// One layer of a measurement report.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerReport {
    /// 1-based layer index.
    pub layer: usize,
    pub fan_in: usize,
    pub width: usize,
    /// Pooled unbiased variance over neurons, batch entries, and trials.
    pub measured: f64,
    pub pred_no_norm: f64,
    pub pred_bn_leading: f64,
    pub pred_bn_exact: f64,
}

/// Measured against predicted per-layer gradient variances, relative to a
/// unit-variance top-layer gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct GradVarianceReport {
    pub trials: usize,
    pub batch_size: usize,
    pub master_seed: u64,
    pub input_dist: InputDist,
    pub layers: Vec<LayerReport>,
    /// Methodology remark carried with every report.
    pub note: String,
}

/// Remark attached to report metadata: the exact-prefactor inputs use the
/// population standardization, while each batch realizes a slightly different
/// standardized value.
pub const SHAT_NOTE: &str = "Var(shat^2) inputs use population standardization s/sqrt(K); \
batch-realized standardization fluctuates around it";

impl GradVarianceReport {
    /// measured(layer) / measured(layer + 1), 1-based.
    pub fn measured_ratio(&self, layer: usize) -> f64 {
        self.layers[layer - 1].measured / self.layers[layer].measured
    }

    /// measured / predicted for the given model at a 1-based layer.
    pub fn ratio(&self, model: PredictionModel, layer: usize) -> f64 {
        let row = &self.layers[layer - 1];
        let pred = match model {
            PredictionModel::NoNorm => row.pred_no_norm,
            PredictionModel::BnLeading => row.pred_bn_leading,
            PredictionModel::BnExact => row.pred_bn_exact,
        };
        row.measured / pred
    }
}

fn draw_matrix(rows: usize, cols: usize, dist: InputDist, rng: &mut RngStream) -> Matrix {
    match dist {
        InputDist::Rademacher => Matrix::from_fn(rows, cols, |_, _| rng.rademacher()),
        InputDist::Gaussian => Matrix::from_fn(rows, cols, |_, _| rng.standard_normal()),
    }
}

/// Run one measurement trial on the stream `(mc.master_seed, trial)`.
///
/// Draw order within the stream is fixed: weights layer by layer, then the
/// input batch, then the synthetic top gradient.
pub fn run_trial(
    spec: &NetworkSpec,
    scheme: &InitScheme,
    mc: &McConfig,
    trial: u64,
) -> Result<TrialAccum> {
    let mut rng = seeded_stream(mc.master_seed, trial);
    let mut spec = spec.clone();
    spec.batch_size = mc.batch_size;
    let net = Network::init(spec, scheme, None, &mut rng)?;
    let x = draw_matrix(mc.batch_size, net.spec.input_dim, mc.input_dist, &mut rng);
    let trace = net.forward_trace_train(&x)?;
    let depth = net.spec.layers.len();
    let top = Matrix::from_fn(mc.batch_size, net.spec.layers[depth - 1].width, |_, _| {
        rng.standard_normal()
    });

    let mut per_layer = vec![(0.0, 0.0); depth];
    let mut accumulate = |idx: usize, m: &Matrix| {
        let (sum, sumsq) = &mut per_layer[idx];
        for &v in m.values() {
            *sum += v;
            *sumsq += v * v;
        }
    };

    let mut ds = top;
    accumulate(depth - 1, &ds);
    for l in (0..depth - 1).rev() {
        // gradient w.r.t. the input activation of layer l+1; the activation
        // derivative is identity on the measurement path
        let dz = matmul(&ds, &net.effective_weights(l + 1).transpose())?;
        ds = match &net.spec.layers[l].normalizer.kind {
            NormalizerKind::FullBn => {
                let (shat, stats) = trace.layers[l].bn.as_ref().expect("bn context saved");
                let params = net.layers[l].bn.as_ref().expect("bn params exist");
                bn_backward_closed(shat, &dz, params, stats)?
            }
            NormalizerKind::CenterScale { scale } => center_scale_backward(&dz, *scale),
            NormalizerKind::CenterOnly => center_scale_backward(&dz, 1.0),
            NormalizerKind::Identity => dz,
        };
        accumulate(l, &ds);
    }

    Ok(TrialAccum { per_layer })
}

/// Pool trial sums (in trial order) and attach analytic predictions.
///
/// The prediction columns are pure width formulas, so they are reported for
/// every spec regardless of its normalizers: the no-norm and batch-norm
/// models are evaluated on all-binary identity/full-norm chains with the same
/// widths. `Var(shat^2)` inputs for the exact model come from enumeration for
/// fan-in ≤ 30 and from a reserved sampling stream otherwise.
pub fn assemble_report(
    spec: &NetworkSpec,
    mc: &McConfig,
    accums: &[TrialAccum],
) -> Result<GradVarianceReport> {
    if accums.len() != mc.trials {
        return Err(Error::Contract(format!(
            "{} trial accumulators for {} trials",
            accums.len(),
            mc.trials
        )));
    }
    let widths = spec.widths();
    let depth = spec.layers.len();

    let mut measured = Vec::with_capacity(depth);
    for l in 0..depth {
        let mut sum = 0.0;
        let mut sumsq = 0.0;
        for acc in accums {
            sum += acc.per_layer[l].0;
            sumsq += acc.per_layer[l].1;
        }
        let n = (mc.trials * mc.batch_size * widths[l + 1]) as f64;
        measured.push((sumsq - sum * sum / n) / (n - 1.0));
    }

    let no_norm_spec =
        NetworkSpec::binary_chain(&widths, mc.batch_size, |_| NormalizerConfig::identity());
    let bn_spec =
        NetworkSpec::binary_chain(&widths, mc.batch_size, |_| NormalizerConfig::full_bn());
    let pred_no_norm = predict_backward_variance_no_norm(&no_norm_spec, 1.0)?;
    let pred_leading =
        predict_backward_variance_bn(&bn_spec, 1.0, mc.batch_size, &BnModel::Leading)?;
    let vshat_by_step: Vec<f64> = (0..depth - 1)
        .map(|i| {
            let fan_in = widths[i];
            if fan_in <= 30 {
                shat_sq_variance(
                    fan_in,
                    ShatMode::Exact,
                    &mut seeded_stream(mc.master_seed, SHAT_STREAM_BASE + i as u64),
                )
            } else {
                shat_sq_variance(
                    fan_in,
                    ShatMode::Sampled { samples: 200_000 },
                    &mut seeded_stream(mc.master_seed, SHAT_STREAM_BASE + i as u64),
                )
            }
        })
        .collect::<Result<_>>()?;
    let pred_exact = predict_backward_variance_bn(
        &bn_spec,
        1.0,
        mc.batch_size,
        &BnModel::Exact { vshat_by_step },
    )?;

    let layers = (0..depth)
        .map(|l| LayerReport {
            layer: l + 1,
            fan_in: widths[l],
            width: widths[l + 1],
            measured: measured[l],
            pred_no_norm: pred_no_norm.per_layer[l],
            pred_bn_leading: pred_leading.per_layer[l],
            pred_bn_exact: pred_exact.per_layer[l],
        })
        .collect();

    Ok(GradVarianceReport {
        trials: mc.trials,
        batch_size: mc.batch_size,
        master_seed: mc.master_seed,
        input_dist: mc.input_dist,
        layers,
        note: String::from(SHAT_NOTE),
    })
}

/// Streams reserved for `Var(shat^2)` sampling inside report assembly, far
/// above any realistic trial index.
pub const SHAT_STREAM_BASE: u64 = 1 << 62;

/// Measure per-layer gradient variance over `mc.trials` sequential trials.
///
/// At least 30 trials are required for a variance to be reported. The result
/// is bit-identical to any scheduling of [`run_trial`] reduced in trial
/// order.
pub fn measure_gradient_variance(
    spec: &NetworkSpec,
    scheme: &InitScheme,
    mc: &McConfig,
) -> Result<GradVarianceReport> {
    spec.validate()?;
    if mc.trials < 30 {
        return Err(Error::Contract(format!(
            "variance reports need at least 30 trials, got {}",
            mc.trials
        )));
    }
    let accums: Vec<TrialAccum> = (0..mc.trials as u64)
        .map(|t| run_trial(spec, scheme, mc, t))
        .collect::<Result<_>>()?;
    assemble_report(spec, mc, &accums)
}

/// How to evaluate `Var(shat^2)` at a given fan-in.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShatMode {
    /// Enumerate the lattice distribution of the ±1 sum (fan-in ≤ 30).
    Exact,
    /// Monte-Carlo with the given sample count.
    Sampled { samples: usize },
}

/// `Var(shat^2)` where `s` sums `fan_in` independent ±1 products and
/// `shat = s / sqrt(fan_in)`.
///
/// Exact mode enumerates the binomial lattice `s = K - 2j` and ignores the
/// stream; sampled mode draws ±1 sums from it.
pub fn shat_sq_variance(fan_in: usize, mode: ShatMode, rng: &mut RngStream) -> Result<f64> {
    match mode {
        ShatMode::Exact => shat_sq_variance_exact(fan_in),
        ShatMode::Sampled { samples } => {
            Ok(shat_sq_variance_sampled_se(fan_in, samples, rng)?.0)
        }
    }
}

fn shat_sq_variance_exact(fan_in: usize) -> Result<f64> {
    if fan_in == 0 {
        return Err(Error::Domain("fan-in must be positive".into()));
    }
    if fan_in > 30 {
        return Err(Error::Contract(format!(
            "exact enumeration is limited to fan-in <= 30, got {fan_in}; use sampling"
        )));
    }
    let k = fan_in;
    let kf = k as f64;
    let inv2k = 1.0 / (1u64 << k) as f64;
    let mut coeff = 1.0; // C(k, j), exact in f64 for k <= 30
    let mut e1 = 0.0;
    let mut e2 = 0.0;
    for j in 0..=k {
        let p = coeff * inv2k;
        let v = k as f64 - 2.0 * j as f64;
        let y = v * v / kf;
        e1 += p * y;
        e2 += p * y * y;
        coeff = coeff * (k - j) as f64 / (j + 1) as f64;
    }
    Ok(e2 - e1 * e1)
}

/// Sampled `Var(shat^2)` with its standard error (delta-method estimate from
/// the fourth central moment).
pub fn shat_sq_variance_sampled_se(
    fan_in: usize,
    samples: usize,
    rng: &mut RngStream,
) -> Result<(f64, f64)> {
    if fan_in == 0 {
        return Err(Error::Domain("fan-in must be positive".into()));
    }
    if samples < 2 {
        return Err(Error::Contract(format!(
            "need at least 2 samples, got {samples}"
        )));
    }
    let kf = fan_in as f64;
    let n = samples as f64;
    let (mut m1, mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0, 0.0);
    for _ in 0..samples {
        let s = rng.signed_bit_sum(fan_in) as f64;
        let y = s * s / kf;
        m1 += y;
        m2 += y * y;
        m3 += y * y * y;
        m4 += y * y * y * y;
    }
    m1 /= n;
    m2 /= n;
    m3 /= n;
    m4 /= n;
    let mu2 = m2 - m1 * m1;
    let mu4 = m4 - 4.0 * m3 * m1 + 6.0 * m2 * m1 * m1 - 3.0 * m1 * m1 * m1 * m1;
    let se = crate::fmath::sqrt((mu4 - mu2 * mu2).max(0.0) / n);
    Ok((mu2, se))
}

/// Verdict of one layer's measured/predicted comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerVerdict {
    pub layer: usize,
    pub ratio: f64,
    pub pass: bool,
}

/// Default multiplicative tolerance for measured/predicted comparisons.
pub const DEFAULT_COMPARE_TOLERANCE: f64 = 1.33;

/// Judge each layer's measured variance against one prediction model:
/// pass iff measured/predicted lies in `[1/tolerance, tolerance]`.
pub fn compare_report(
    report: &GradVarianceReport,
    tolerance: f64,
    model: PredictionModel,
) -> Result<Vec<LayerVerdict>> {
    if !(tolerance > 1.0) {
        return Err(Error::Domain(format!(
            "multiplicative tolerance must exceed 1, got {tolerance}"
        )));
    }
    Ok(report
        .layers
        .iter()
        .map(|row| {
            let ratio = report.ratio(model, row.layer);
            LayerVerdict {
                layer: row.layer,
                ratio,
                pass: ratio >= 1.0 / tolerance && ratio <= tolerance,
            }
        })
        .collect())
}

/// True iff scaling the latent weights of any single layer by `c` leaves the
/// whole train-mode forward trace bit-identical.
///
/// Binary layers erase the scale through weight binarization, so all-binary
/// chains with standardizing normalizers pass for any positive `c`;
/// full-precision ReLU chains propagate magnitudes and fail in general.
pub fn scale_invariance_check(
    spec: &NetworkSpec,
    scheme: &InitScheme,
    c: f64,
    master_seed: u64,
) -> Result<bool> {
    if !(c > 0.0) {
        return Err(Error::Domain(format!(
            "scale factor must be positive, got {c}"
        )));
    }
    spec.validate()?;
    let mut weight_rng = seeded_stream(master_seed, 0);
    let net = Network::init(spec.clone(), scheme, None, &mut weight_rng)?;
    let mut probe_rng = seeded_stream(master_seed, 1);
    let x = draw_matrix(
        spec.batch_size,
        spec.input_dim,
        InputDist::Rademacher,
        &mut probe_rng,
    );
    let base = net.forward_trace_train(&x)?;
    for l in 0..net.layers.len() {
        let mut scaled = net.clone();
        scaled.layers[l].weights = scaled.layers[l].weights.scale(c);
        let trace = scaled.forward_trace_train(&x)?;
        if !trace.bit_eq(&base) {
            return Ok(false);
        }
    }
    Ok(true)
}
