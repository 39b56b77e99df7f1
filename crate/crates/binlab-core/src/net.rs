//! Dense network specification and parameter state.
//!
//! Layer conventions, shared by the trainer and the measurement harness:
//!
//! - layer 1 consumes the raw feature matrix;
//! - every later layer prepares its input first: binary layers apply sign,
//!   full-precision layers apply ReLU (so a full-precision classifier after
//!   a chain of binary layers is preceded by a ReLU);
//! - binary layers use the sign of their latent weights in the dot product;
//! - the layer's normalizer output is its activation, and the last layer's
//!   output are the logits.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::init::{binarize, sample_weights, InitScheme};
use crate::matrix::{matmul, Matrix};
use crate::normalizer::{
    bn_forward, center_scale_forward, BatchStats, BnParams, Mode, NormalizerConfig,
    NormalizerKind, RunningStats,
};
use crate::rng::RngStream;
use crate::tape::sign_forward;

/// One layer of the specification: output width, precision, normalizer, and
/// whether the linear op carries a trainable bias row.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerSpec {
    pub width: usize,
    pub binary: bool,
    pub normalizer: NormalizerConfig,
    pub bias: bool,
}

/// Widths, precision flags, and normalizers of a dense network, plus the
/// training batch size. Binary layers use sign activations, full-precision
/// layers ReLU (see the module docs for where each applies).
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkSpec {
    pub input_dim: usize,
    pub layers: Vec<LayerSpec>,
    pub batch_size: usize,
}

impl NetworkSpec {
    /// An all-binary chain with one normalizer config per layer, derived from
    /// the layer's fan-in.
    pub fn binary_chain<F>(widths: &[usize], batch_size: usize, mut normalizer: F) -> Self
    where
        F: FnMut(usize) -> NormalizerConfig,
    {
        assert!(widths.len() >= 3, "need input dim plus at least two layers");
        let layers = widths
            .windows(2)
            .map(|w| LayerSpec {
                width: w[1],
                binary: true,
                normalizer: normalizer(w[0]),
                bias: false,
            })
            .collect();
        Self {
            input_dim: widths[0],
            layers,
            batch_size,
        }
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    /// `[K_0, K_1, ..., K_L]`.
    pub fn widths(&self) -> Vec<usize> {
        let mut w = Vec::with_capacity(self.layers.len() + 1);
        w.push(self.input_dim);
        w.extend(self.layers.iter().map(|l| l.width));
        w
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(Error::Domain("input dimension must be positive".into()));
        }
        if self.layers.len() < 2 {
            return Err(Error::Contract(format!(
                "a network needs at least 2 layers, got {}",
                self.layers.len()
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Domain("batch size must be positive".into()));
        }
        for (i, layer) in self.layers.iter().enumerate() {
            if layer.width == 0 {
                return Err(Error::Domain(format!("layer {} has zero width", i + 1)));
            }
            layer.normalizer.validate()?;
        }
        Ok(())
    }
}

/// Trainable state of one layer.
#[derive(Debug, Clone)]
pub struct LayerState {
    /// Latent weights, `fan_in x width`. Binary layers binarize on use.
    pub weights: Matrix,
    pub bias: Option<Matrix>,
    pub bn: Option<BnParams>,
    pub running: RunningStats,
}

/// A specification plus initialized parameters.
#[derive(Debug, Clone)]
pub struct Network {
    pub spec: NetworkSpec,
    pub layers: Vec<LayerState>,
}

/// Saved context of one layer's train-mode forward pass.
#[derive(Debug, Clone)]
pub struct LayerTrace {
    /// Pre-normalization dot products.
    pub s: Matrix,
    /// Normalizer output (the layer activation).
    pub z: Matrix,
    /// Standardized values and batch statistics (full batch norm only).
    pub bn: Option<(Matrix, BatchStats)>,
    /// Batch means (center-scale / center-only).
    pub cs_mean: Option<Vec<f64>>,
}

/// Full train-mode forward context, one entry per layer.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub layers: Vec<LayerTrace>,
}

impl ForwardTrace {
    pub fn logits(&self) -> &Matrix {
        &self.layers.last().expect("at least one layer").z
    }

    /// Bit-level equality of every saved matrix.
    pub fn bit_eq(&self, other: &ForwardTrace) -> bool {
        self.layers.len() == other.layers.len()
            && self
                .layers
                .iter()
                .zip(&other.layers)
                .all(|(a, b)| a.s.bit_eq(&b.s) && a.z.bit_eq(&b.z))
    }
}

impl Network {
    /// Sample fresh parameters for `spec`. `sigma_overrides`, when present,
    /// replaces the scheme's variance per layer (fan-scaled families ignore
    /// it). Weights are drawn layer by layer from `rng` in network order.
    pub fn init(
        spec: NetworkSpec,
        scheme: &InitScheme,
        sigma_overrides: Option<&[f64]>,
        rng: &mut RngStream,
    ) -> Result<Self> {
        spec.validate()?;
        if let Some(overrides) = sigma_overrides {
            if overrides.len() != spec.layers.len() {
                return Err(Error::Shape(format!(
                    "{} variance overrides for {} layers",
                    overrides.len(),
                    spec.layers.len()
                )));
            }
        }
        let mut layers = Vec::with_capacity(spec.layers.len());
        let mut fan_in = spec.input_dim;
        for (i, layer) in spec.layers.iter().enumerate() {
            let layer_scheme = match sigma_overrides {
                Some(overrides) => scheme.with_sigma_sq(overrides[i]),
                None => *scheme,
            };
            let weights = sample_weights(&layer_scheme, fan_in, layer.width, rng)?;
            let bias = layer.bias.then(|| Matrix::zeros(1, layer.width));
            let bn = matches!(layer.normalizer.kind, NormalizerKind::FullBn)
                .then(|| BnParams::new(layer.width));
            layers.push(LayerState {
                weights,
                bias,
                bn,
                running: RunningStats::new(layer.width),
            });
            fan_in = layer.width;
        }
        Ok(Self { spec, layers })
    }

    /// The activation a layer actually consumes (see module docs).
    pub fn layer_input(&self, layer_index: usize, prev: &Matrix) -> Matrix {
        if layer_index == 0 {
            prev.clone()
        } else if self.spec.layers[layer_index].binary {
            sign_forward(prev)
        } else {
            prev.map(|v| v.max(0.0))
        }
    }

    /// The weights used in the dot product: binarized for binary layers.
    pub fn effective_weights(&self, layer_index: usize) -> Matrix {
        let w = &self.layers[layer_index].weights;
        if self.spec.layers[layer_index].binary {
            binarize(w)
        } else {
            w.clone()
        }
    }

    fn linear_out(&self, layer_index: usize, input: &Matrix) -> Result<Matrix> {
        let mut s = matmul(input, &self.effective_weights(layer_index))?;
        if let Some(bias) = &self.layers[layer_index].bias {
            for i in 0..s.rows() {
                for j in 0..s.cols() {
                    s.set(i, j, s.get(i, j) + bias.get(0, j));
                }
            }
        }
        Ok(s)
    }

    /// Train-mode forward pass keeping per-layer context.
    pub fn forward_trace_train(&self, x: &Matrix) -> Result<ForwardTrace> {
        let mut traces = Vec::with_capacity(self.layers.len());
        let mut activation = x.clone();
        for (l, layer) in self.spec.layers.iter().enumerate() {
            let input = self.layer_input(l, &activation);
            let s = self.linear_out(l, &input)?;
            let (z, bn, cs_mean) = match &layer.normalizer.kind {
                NormalizerKind::FullBn => {
                    let params = self.layers[l].bn.as_ref().expect("bn params exist");
                    let fwd = bn_forward(&s, params, layer.normalizer.epsilon, Mode::Train)?;
                    (fwd.z, Some((fwd.shat, fwd.stats)), None)
                }
                NormalizerKind::CenterScale { scale } => {
                    let fwd = center_scale_forward(&s, *scale, Mode::Train)?;
                    (fwd.z, None, Some(fwd.mean))
                }
                NormalizerKind::CenterOnly => {
                    let fwd = center_scale_forward(&s, 1.0, Mode::Train)?;
                    (fwd.z, None, Some(fwd.mean))
                }
                NormalizerKind::Identity => (s.clone(), None, None),
            };
            activation = z.clone();
            traces.push(LayerTrace { s, z, bn, cs_mean });
        }
        Ok(ForwardTrace { layers: traces })
    }

    /// Eval-mode forward pass (running statistics), returning the logits.
    pub fn forward_eval(&self, x: &Matrix) -> Result<Matrix> {
        let mut activation = x.clone();
        for (l, layer) in self.spec.layers.iter().enumerate() {
            let input = self.layer_input(l, &activation);
            let s = self.linear_out(l, &input)?;
            activation = match &layer.normalizer.kind {
                NormalizerKind::FullBn => {
                    let params = self.layers[l].bn.as_ref().expect("bn params exist");
                    bn_forward(
                        &s,
                        params,
                        layer.normalizer.epsilon,
                        Mode::Eval(&self.layers[l].running),
                    )?
                    .z
                }
                NormalizerKind::CenterScale { scale } => {
                    center_scale_forward(&s, *scale, Mode::Eval(&self.layers[l].running))?.z
                }
                NormalizerKind::CenterOnly => {
                    center_scale_forward(&s, 1.0, Mode::Eval(&self.layers[l].running))?.z
                }
                NormalizerKind::Identity => s,
            };
        }
        Ok(activation)
    }

    /// Predicted class per row: argmax of the eval-mode logits (first index
    /// wins ties).
    pub fn predict(&self, x: &Matrix) -> Result<Vec<usize>> {
        let logits = self.forward_eval(x)?;
        Ok((0..logits.rows())
            .map(|i| {
                let row = logits.row(i);
                let mut best = 0;
                for (j, &v) in row.iter().enumerate() {
                    if v > row[best] {
                        best = j;
                    }
                }
                best
            })
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded_stream;

    fn spec_fp_binary_fp(batch: usize) -> NetworkSpec {
        NetworkSpec {
            input_dim: 6,
            layers: alloc::vec![
                LayerSpec {
                    width: 8,
                    binary: false,
                    normalizer: NormalizerConfig::full_bn(),
                    bias: false,
                },
                LayerSpec {
                    width: 8,
                    binary: true,
                    normalizer: NormalizerConfig::full_bn(),
                    bias: false,
                },
                LayerSpec {
                    width: 3,
                    binary: false,
                    normalizer: NormalizerConfig::identity(),
                    bias: true,
                },
            ],
            batch_size: batch,
        }
    }

    #[test]
    fn validate_rejects_shallow_and_zero_width() {
        let mut spec = spec_fp_binary_fp(4);
        spec.layers.truncate(1);
        assert!(matches!(spec.validate(), Err(Error::Contract(_))));
        let mut spec = spec_fp_binary_fp(4);
        spec.layers[0].width = 0;
        assert!(matches!(spec.validate(), Err(Error::Domain(_))));
    }

    #[test]
    fn widths_prepend_input_dim() {
        let spec = spec_fp_binary_fp(4);
        assert_eq!(spec.widths(), alloc::vec![6, 8, 8, 3]);
    }

    #[test]
    fn binary_layers_see_sign_inputs_and_binarized_weights() {
        let spec = spec_fp_binary_fp(4);
        let mut rng = seeded_stream(1, 0);
        let net = Network::init(spec, &InitScheme::uniform(0.01), None, &mut rng).unwrap();
        let wb = net.effective_weights(1);
        assert!(wb.values().iter().all(|&v| v == 1.0 || v == -1.0));
        // layer 1 input is the sign of the previous activation
        let z = Matrix::from_vec(2, 8, (0..16).map(|i| i as f64 - 8.0).collect()).unwrap();
        let u = net.layer_input(1, &z);
        assert!(u.values().iter().all(|&v| v == 1.0 || v == -1.0));
        // full-precision classifier input is rectified
        let u = net.layer_input(2, &z);
        assert!(u.values().iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn trace_and_eval_are_deterministic() {
        let spec = spec_fp_binary_fp(8);
        let mut rng = seeded_stream(2, 0);
        let net = Network::init(spec, &InitScheme::uniform(0.01), None, &mut rng).unwrap();
        let mut data_rng = seeded_stream(3, 0);
        let x = Matrix::from_fn(8, 6, |_, _| data_rng.standard_normal());
        let a = net.forward_trace_train(&x).unwrap();
        let b = net.forward_trace_train(&x).unwrap();
        assert!(a.bit_eq(&b));
        let ea = net.forward_eval(&x).unwrap();
        let eb = net.forward_eval(&x).unwrap();
        assert!(ea.bit_eq(&eb));
    }

    #[test]
    fn variance_overrides_must_match_depth() {
        let spec = spec_fp_binary_fp(4);
        let mut rng = seeded_stream(4, 0);
        let err = Network::init(spec, &InitScheme::uniform(0.01), Some(&[0.1, 0.2]), &mut rng);
        assert!(matches!(err, Err(Error::Shape(_))));
    }

    #[test]
    fn binary_chain_helper_assigns_fan_in_scales() {
        let spec = NetworkSpec::binary_chain(&[8, 16, 32], 64, |fan_in| {
            NormalizerConfig::center_scale(1.0 / (fan_in as f64))
        });
        assert_eq!(spec.input_dim, 8);
        assert_eq!(
            spec.layers[0].normalizer.kind,
            NormalizerKind::CenterScale { scale: 1.0 / 8.0 }
        );
        assert_eq!(
            spec.layers[1].normalizer.kind,
            NormalizerKind::CenterScale { scale: 1.0 / 16.0 }
        );
    }
}
