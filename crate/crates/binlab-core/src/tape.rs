//! Reverse-mode differentiation over the op set used by binary dense nets.
//!
//! A [`Tape`] records operations during the forward pass; [`Tape::backward`]
//! walks the records in exact reverse order and accumulates gradients keyed
//! by node id. Every gradient buffer has the shape of its forward value.
//!
//! Two routes exist for batch norm: the fused [`Tape::batch_norm`] op whose
//! backward is the closed-form input gradient, and [`compose_batch_norm`],
//! which builds the same function out of primitive ops (column mean,
//! broadcast arithmetic, square root) so the chain rule produces the gradient
//! independently. Agreement between the two is a standing regression check.
//!
//! The sign op propagates the clipped straight-through estimator, which is
//! not the true derivative; [`grad_check`] therefore rejects graphs that
//! contain it.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::fmath;
use crate::matrix::{matmul, Matrix};
use crate::normalizer::{
    bn_backward_closed, bn_forward, bn_param_grads, center_scale_backward, center_scale_forward,
    BatchStats, BnParams, Mode,
};
use crate::rng::seeded_stream;

/// Handle to a recorded node.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

enum Op {
    Leaf,
    Linear {
        x: NodeId,
        w: NodeId,
    },
    /// Broadcast-add a 1xK row (bias, or the beta of a composed batch norm).
    AddRow {
        x: NodeId,
        row: NodeId,
    },
    Relu {
        x: NodeId,
    },
    SignSte {
        x: NodeId,
    },
    BatchNorm {
        s: NodeId,
        gamma: NodeId,
        beta: NodeId,
        shat: Matrix,
        stats: BatchStats,
    },
    CenterScale {
        s: NodeId,
        scale: f64,
        mean: Vec<f64>,
    },
    SoftmaxXent {
        logits: NodeId,
        labels: Vec<usize>,
        probs: Matrix,
    },
    ColMean {
        x: NodeId,
    },
    SubRow {
        x: NodeId,
        row: NodeId,
    },
    MulRow {
        x: NodeId,
        row: NodeId,
    },
    DivRow {
        x: NodeId,
        row: NodeId,
    },
    Square {
        x: NodeId,
    },
    SqrtShift {
        x: NodeId,
    },
}

struct Node {
    value: Matrix,
    op: Op,
}

/// A recording of one forward pass, single-threaded.
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Matrix>>,
    has_ste: bool,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            grads: Vec::new(),
            has_ste: false,
        }
    }

    fn push(&mut self, value: Matrix, op: Op) -> NodeId {
        self.nodes.push(Node { value, op });
        self.grads.push(None);
        NodeId(self.nodes.len() - 1)
    }

    /// True if any recorded op uses the straight-through estimator.
    pub fn has_ste(&self) -> bool {
        self.has_ste
    }

    pub fn value(&self, id: NodeId) -> &Matrix {
        &self.nodes[id.0].value
    }

    /// Gradient accumulated by the last `backward`; `None` if untouched.
    pub fn grad(&self, id: NodeId) -> Option<&Matrix> {
        self.grads[id.0].as_ref()
    }

    /// Batch statistics saved by a fused batch-norm node.
    pub fn bn_saved(&self, id: NodeId) -> Option<(&Matrix, &BatchStats)> {
        match &self.nodes[id.0].op {
            Op::BatchNorm { shat, stats, .. } => Some((shat, stats)),
            _ => None,
        }
    }

    /// Batch means saved by a center-scale node.
    pub fn center_scale_saved(&self, id: NodeId) -> Option<&[f64]> {
        match &self.nodes[id.0].op {
            Op::CenterScale { mean, .. } => Some(mean),
            _ => None,
        }
    }

    /// Record a non-trainable leaf.
    pub fn input(&mut self, value: Matrix) -> NodeId {
        self.push(value, Op::Leaf)
    }

    /// Record a trainable leaf (same storage; the caller decides which leaves
    /// it reads gradients from).
    pub fn param(&mut self, value: Matrix) -> NodeId {
        self.push(value, Op::Leaf)
    }

    /// `S = X * W`.
    pub fn linear(&mut self, x: NodeId, w: NodeId) -> Result<NodeId> {
        let value = linear_forward(self.value(x), self.value(w))?;
        Ok(self.push(value, Op::Linear { x, w }))
    }

    /// Broadcast-add a 1xK row to a BxK matrix.
    pub fn add_row(&mut self, x: NodeId, row: NodeId) -> Result<NodeId> {
        let (xv, rv) = (self.value(x), self.value(row));
        check_row_broadcast(xv, rv, "add_row")?;
        let value = Matrix::from_fn(xv.rows(), xv.cols(), |i, j| xv.get(i, j) + rv.get(0, j));
        Ok(self.push(value, Op::AddRow { x, row }))
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let value = self.value(x).map(|v| v.max(0.0));
        self.push(value, Op::Relu { x })
    }

    /// Elementwise sign with the clipped straight-through estimator backward.
    pub fn sign_ste(&mut self, x: NodeId) -> NodeId {
        self.has_ste = true;
        let value = sign_forward(self.value(x));
        self.push(value, Op::SignSte { x })
    }

    /// Fused train-mode batch norm; backward uses the closed-form gradient.
    /// `gamma` and `beta` must be 1xK leaves.
    pub fn batch_norm(
        &mut self,
        s: NodeId,
        gamma: NodeId,
        beta: NodeId,
        epsilon: f64,
    ) -> Result<NodeId> {
        let params = self.bn_params_from_rows(gamma, beta, self.value(s).cols())?;
        let fwd = bn_forward(self.value(s), &params, epsilon, Mode::Train)?;
        Ok(self.push(
            fwd.z,
            Op::BatchNorm {
                s,
                gamma,
                beta,
                shat: fwd.shat,
                stats: fwd.stats,
            },
        ))
    }

    /// Fused train-mode center-scale (center-only when `scale == 1`).
    pub fn center_scale(&mut self, s: NodeId, scale: f64) -> Result<NodeId> {
        let fwd = center_scale_forward(self.value(s), scale, Mode::Train)?;
        Ok(self.push(
            fwd.z,
            Op::CenterScale {
                s,
                scale,
                mean: fwd.mean,
            },
        ))
    }

    /// Mean cross-entropy of row-wise softmax against integer labels (1x1 output).
    pub fn softmax_xent(&mut self, logits: NodeId, labels: &[usize]) -> Result<NodeId> {
        let lv = self.value(logits);
        if labels.len() != lv.rows() {
            return Err(Error::Shape(format!(
                "{} labels for a batch of {}",
                labels.len(),
                lv.rows()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&c| c >= lv.cols()) {
            return Err(Error::Domain(format!(
                "label {bad} out of range for {} classes",
                lv.cols()
            )));
        }
        let (loss, probs) = softmax_xent_forward(lv, labels);
        Ok(self.push(
            loss,
            Op::SoftmaxXent {
                logits,
                labels: labels.to_vec(),
                probs,
            },
        ))
    }

    /// Per-column mean: BxK -> 1xK.
    pub fn col_mean(&mut self, x: NodeId) -> NodeId {
        let m = self.value(x).col_mean();
        let cols = m.len();
        let value = Matrix::from_vec(1, cols, m).expect("finite mean");
        self.push(value, Op::ColMean { x })
    }

    /// Broadcast subtract a 1xK row from a BxK matrix.
    pub fn sub_row(&mut self, x: NodeId, row: NodeId) -> Result<NodeId> {
        let (xv, rv) = (self.value(x), self.value(row));
        check_row_broadcast(xv, rv, "sub_row")?;
        let value = Matrix::from_fn(xv.rows(), xv.cols(), |i, j| xv.get(i, j) - rv.get(0, j));
        Ok(self.push(value, Op::SubRow { x, row }))
    }

    /// Broadcast multiply a BxK matrix by a 1xK row.
    pub fn mul_row(&mut self, x: NodeId, row: NodeId) -> Result<NodeId> {
        let (xv, rv) = (self.value(x), self.value(row));
        check_row_broadcast(xv, rv, "mul_row")?;
        let value = Matrix::from_fn(xv.rows(), xv.cols(), |i, j| xv.get(i, j) * rv.get(0, j));
        Ok(self.push(value, Op::MulRow { x, row }))
    }

    /// Broadcast divide a BxK matrix by a 1xK row.
    pub fn div_row(&mut self, x: NodeId, row: NodeId) -> Result<NodeId> {
        let (xv, rv) = (self.value(x), self.value(row));
        check_row_broadcast(xv, rv, "div_row")?;
        let value = Matrix::from_fn(xv.rows(), xv.cols(), |i, j| xv.get(i, j) / rv.get(0, j));
        Ok(self.push(value, Op::DivRow { x, row }))
    }

    pub fn square(&mut self, x: NodeId) -> NodeId {
        let value = self.value(x).map(|v| v * v);
        self.push(value, Op::Square { x })
    }

    /// Elementwise `sqrt(x + shift)`.
    pub fn sqrt_shift(&mut self, x: NodeId, shift: f64) -> NodeId {
        let value = self.value(x).map(|v| fmath::sqrt(v + shift));
        self.push(value, Op::SqrtShift { x })
    }

    fn bn_params_from_rows(&self, gamma: NodeId, beta: NodeId, width: usize) -> Result<BnParams> {
        let (gv, bv) = (self.value(gamma), self.value(beta));
        if gv.rows() != 1 || gv.cols() != width || bv.rows() != 1 || bv.cols() != width {
            return Err(Error::Shape(format!(
                "batch norm affine rows must be 1x{width}, got {}x{} and {}x{}",
                gv.rows(),
                gv.cols(),
                bv.rows(),
                bv.cols()
            )));
        }
        Ok(BnParams {
            gamma: gv.values().to_vec(),
            beta: bv.values().to_vec(),
        })
    }

    fn accumulate(&mut self, id: NodeId, contribution: Matrix) {
        match &mut self.grads[id.0] {
            Some(existing) => {
                let sum = existing
                    .add(&contribution)
                    .expect("gradient shapes match forward values");
                *existing = sum;
            }
            slot @ None => *slot = Some(contribution),
        }
    }

    /// Propagate `seed` (shaped like the value of `from`) back through every
    /// recorded op, in exact reverse recording order.
    pub fn backward(&mut self, from: NodeId, seed: Matrix) -> Result<()> {
        if !seed.same_shape(self.value(from)) {
            return Err(Error::Shape(format!(
                "seed {}x{} for a node valued {}x{}",
                seed.rows(),
                seed.cols(),
                self.value(from).rows(),
                self.value(from).cols()
            )));
        }
        for g in &mut self.grads {
            *g = None;
        }
        self.grads[from.0] = Some(seed);

        for idx in (0..=from.0).rev() {
            let Some(gout) = self.grads[idx].clone() else {
                continue;
            };
            match &self.nodes[idx].op {
                Op::Leaf => {}
                Op::Linear { x, w } => {
                    let (x, w) = (*x, *w);
                    let (dx, dw) = linear_backward(self.value(x), self.value(w), &gout)?;
                    self.accumulate(x, dx);
                    self.accumulate(w, dw);
                }
                Op::AddRow { x, row } => {
                    let (x, row) = (*x, *row);
                    let drow = col_sum(&gout);
                    self.accumulate(x, gout);
                    self.accumulate(row, drow);
                }
                Op::Relu { x } => {
                    let x = *x;
                    let dx = relu_backward(self.value(x), &gout)?;
                    self.accumulate(x, dx);
                }
                Op::SignSte { x } => {
                    let x = *x;
                    let dx = sign_backward_ste(self.value(x), &gout)?;
                    self.accumulate(x, dx);
                }
                Op::BatchNorm {
                    s,
                    gamma,
                    beta,
                    shat,
                    stats,
                } => {
                    let (s, gamma, beta) = (*s, *gamma, *beta);
                    let params =
                        self.bn_params_from_rows(gamma, beta, shat.cols())?;
                    let ds = bn_backward_closed(shat, &gout, &params, stats)?;
                    let (dgamma, dbeta) = bn_param_grads(shat, &gout)?;
                    let width = dgamma.len();
                    self.accumulate(s, ds);
                    self.accumulate(gamma, Matrix::from_vec(1, width, dgamma)?);
                    self.accumulate(beta, Matrix::from_vec(1, width, dbeta)?);
                }
                Op::CenterScale { s, scale, .. } => {
                    let (s, scale) = (*s, *scale);
                    let ds = center_scale_backward(&gout, scale);
                    self.accumulate(s, ds);
                }
                Op::SoftmaxXent {
                    logits,
                    labels,
                    probs,
                } => {
                    let logits = *logits;
                    let dlogits = softmax_xent_backward(probs, labels, gout.get(0, 0));
                    self.accumulate(logits, dlogits);
                }
                Op::ColMean { x } => {
                    let x = *x;
                    let rows = self.value(x).rows();
                    let inv = 1.0 / rows as f64;
                    let dx =
                        Matrix::from_fn(rows, gout.cols(), |_, j| gout.get(0, j) * inv);
                    self.accumulate(x, dx);
                }
                Op::SubRow { x, row } => {
                    let (x, row) = (*x, *row);
                    let drow = col_sum(&gout).scale(-1.0);
                    self.accumulate(x, gout);
                    self.accumulate(row, drow);
                }
                Op::MulRow { x, row } => {
                    let (x, row) = (*x, *row);
                    let (xv, rv) = (self.value(x), self.value(row));
                    let dx = Matrix::from_fn(gout.rows(), gout.cols(), |i, j| {
                        gout.get(i, j) * rv.get(0, j)
                    });
                    let mut drow = Matrix::zeros(1, gout.cols());
                    for i in 0..gout.rows() {
                        for j in 0..gout.cols() {
                            drow.set(0, j, drow.get(0, j) + gout.get(i, j) * xv.get(i, j));
                        }
                    }
                    self.accumulate(x, dx);
                    self.accumulate(row, drow);
                }
                Op::DivRow { x, row } => {
                    let (x, row) = (*x, *row);
                    let (xv, rv) = (self.value(x), self.value(row));
                    let dx = Matrix::from_fn(gout.rows(), gout.cols(), |i, j| {
                        gout.get(i, j) / rv.get(0, j)
                    });
                    let mut drow = Matrix::zeros(1, gout.cols());
                    for i in 0..gout.rows() {
                        for j in 0..gout.cols() {
                            let r = rv.get(0, j);
                            drow.set(
                                0,
                                j,
                                drow.get(0, j) - gout.get(i, j) * xv.get(i, j) / (r * r),
                            );
                        }
                    }
                    self.accumulate(x, dx);
                    self.accumulate(row, drow);
                }
                Op::Square { x } => {
                    let x = *x;
                    let xv = self.value(x);
                    let dx = Matrix::from_fn(gout.rows(), gout.cols(), |i, j| {
                        2.0 * xv.get(i, j) * gout.get(i, j)
                    });
                    self.accumulate(x, dx);
                }
                Op::SqrtShift { x } => {
                    let x = *x;
                    let yv = &self.nodes[idx].value;
                    let dx = Matrix::from_fn(gout.rows(), gout.cols(), |i, j| {
                        gout.get(i, j) / (2.0 * yv.get(i, j))
                    });
                    self.accumulate(x, dx);
                }
            }
        }
        Ok(())
    }
}

fn check_row_broadcast(x: &Matrix, row: &Matrix, what: &str) -> Result<()> {
    if row.rows() != 1 || row.cols() != x.cols() {
        return Err(Error::Shape(format!(
            "{what}: row must be 1x{}, got {}x{}",
            x.cols(),
            row.rows(),
            row.cols()
        )));
    }
    Ok(())
}

fn col_sum(m: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(1, m.cols());
    for i in 0..m.rows() {
        for j in 0..m.cols() {
            out.set(0, j, out.get(0, j) + m.get(i, j));
        }
    }
    out
}

/// `S = X * W` (no bias; bias is a separate broadcast add).
pub fn linear_forward(x: &Matrix, w: &Matrix) -> Result<Matrix> {
    matmul(x, w)
}

/// Backward of the linear op: `dX = dS * W^T`, `dW = X^T * dS` (the weight
/// gradient sums over the batch).
pub fn linear_backward(x: &Matrix, w: &Matrix, ds: &Matrix) -> Result<(Matrix, Matrix)> {
    if ds.rows() != x.rows() || ds.cols() != w.cols() {
        return Err(Error::Shape(format!(
            "linear backward: dS {}x{} for X {}x{} and W {}x{}",
            ds.rows(),
            ds.cols(),
            x.rows(),
            x.cols(),
            w.rows(),
            w.cols()
        )));
    }
    let dx = matmul(ds, &w.transpose())?;
    let dw = matmul(&x.transpose(), ds)?;
    Ok((dx, dw))
}

/// Elementwise sign with the convention `sign(0) = +1`.
pub fn sign_forward(x: &Matrix) -> Matrix {
    x.map(|v| if v >= 0.0 { 1.0 } else { -1.0 })
}

/// Clipped straight-through estimator: pass the upstream gradient where the
/// saved input lies in the closed interval [-1, 1], zero elsewhere.
pub fn sign_backward_ste(x_saved: &Matrix, dy: &Matrix) -> Result<Matrix> {
    x_saved.zip_map(dy, |x, g| if (-1.0..=1.0).contains(&x) { g } else { 0.0 })
}

fn relu_backward(x: &Matrix, dy: &Matrix) -> Result<Matrix> {
    x.zip_map(dy, |x, g| if x > 0.0 { g } else { 0.0 })
}

/// Numerically stable softmax cross-entropy: per-row log-sum-exp with the max
/// subtracted, averaged over the batch. Returns (1x1 loss, BxC softmax).
fn softmax_xent_forward(logits: &Matrix, labels: &[usize]) -> (Matrix, Matrix) {
    let (b, c) = (logits.rows(), logits.cols());
    let mut probs = Matrix::zeros(b, c);
    let mut loss = 0.0;
    for i in 0..b {
        let row = logits.row(i);
        let max = row.iter().fold(f64::NEG_INFINITY, |a, &v| a.max(v));
        let mut sum = 0.0;
        for j in 0..c {
            let e = fmath::exp(row[j] - max);
            probs.set(i, j, e);
            sum += e;
        }
        for j in 0..c {
            probs.set(i, j, probs.get(i, j) / sum);
        }
        let lse = max + fmath::ln(sum);
        loss += lse - row[labels[i]];
    }
    let loss = loss / b as f64;
    (
        Matrix::from_fn(1, 1, |_, _| loss),
        probs,
    )
}

fn softmax_xent_backward(probs: &Matrix, labels: &[usize], seed: f64) -> Matrix {
    let scale = seed / probs.rows() as f64;
    Matrix::from_fn(probs.rows(), probs.cols(), |i, j| {
        let onehot = if labels[i] == j { 1.0 } else { 0.0 };
        (probs.get(i, j) - onehot) * scale
    })
}

/// Handles of a batch norm built from primitive ops.
pub struct ComposedBn {
    pub z: NodeId,
    pub shat: NodeId,
}

/// Build train-mode batch norm out of primitive tape ops, so its backward
/// comes purely from the chain rule. `gamma` and `beta` must be 1xK leaves.
pub fn compose_batch_norm(
    tape: &mut Tape,
    s: NodeId,
    gamma: NodeId,
    beta: NodeId,
    epsilon: f64,
) -> Result<ComposedBn> {
    if tape.value(s).rows() < 2 {
        return Err(Error::Contract(format!(
            "train-mode batch norm needs a batch of at least 2, got {}",
            tape.value(s).rows()
        )));
    }
    let mean = tape.col_mean(s);
    let centered = tape.sub_row(s, mean)?;
    let squared = tape.square(centered);
    let variance = tape.col_mean(squared);
    let sigma = tape.sqrt_shift(variance, epsilon);
    let shat = tape.div_row(centered, sigma)?;
    let scaled = tape.mul_row(shat, gamma)?;
    let z = tape.add_row(scaled, beta)?;
    Ok(ComposedBn { z, shat })
}

/// Result of a finite-difference check.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub pass: bool,
    pub tolerance: f64,
}

/// Central-difference step.
pub const GRAD_CHECK_STEP: f64 = 1e-5;

/// Check tape gradients against central finite differences.
///
/// `build` reconstructs the graph from parameter values on a fresh tape and
/// returns the output node; it must be a pure function of the parameters.
/// The output is reduced to a scalar through a fixed random projection, the
/// analytic gradient comes from one backward pass with that projection as
/// seed, and the numeric gradient perturbs every parameter entry by
/// ±[`GRAD_CHECK_STEP`]. Relative error uses the denominator
/// `max(|analytic|, |numeric|, 1e-12)`.
///
/// Graphs containing a straight-through-estimator node are rejected: the
/// estimator is not the true derivative, so a finite-difference comparison
/// would be meaningless.
pub fn grad_check<F>(build: F, params: &[Matrix], tolerance: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[NodeId]) -> Result<NodeId>,
{
    let run = |values: &[Matrix]| -> Result<(Tape, Vec<NodeId>, NodeId)> {
        let mut tape = Tape::new();
        let ids: Vec<NodeId> = values.iter().map(|m| tape.param(m.clone())).collect();
        let out = build(&mut tape, &ids)?;
        Ok((tape, ids, out))
    };

    let (mut tape, ids, out) = run(params)?;
    if tape.has_ste() {
        return Err(Error::Contract(
            "gradient check rejects graphs containing straight-through-estimator nodes".into(),
        ));
    }

    // Fixed random projection onto a scalar.
    let mut proj_rng = seeded_stream(0x6772_6164, 0);
    let out_shape = (tape.value(out).rows(), tape.value(out).cols());
    let projection =
        Matrix::from_fn(out_shape.0, out_shape.1, |_, _| proj_rng.uniform_symmetric());
    let project = |m: &Matrix| -> f64 {
        let mut acc = 0.0;
        for i in 0..m.rows() {
            for j in 0..m.cols() {
                acc += m.get(i, j) * projection.get(i, j);
            }
        }
        acc
    };

    tape.backward(out, projection.clone())?;
    let analytic: Vec<Matrix> = ids
        .iter()
        .zip(params)
        .map(|(&id, p)| {
            tape.grad(id)
                .cloned()
                .unwrap_or_else(|| Matrix::zeros(p.rows(), p.cols()))
        })
        .collect();

    let mut max_rel_error = 0.0f64;
    let mut perturbed: Vec<Matrix> = params.to_vec();
    for (pi, param) in params.iter().enumerate() {
        for flat in 0..param.values().len() {
            let original = param.values()[flat];
            perturbed[pi].values_mut()[flat] = original + GRAD_CHECK_STEP;
            let (tape_hi, _, out_hi) = run(&perturbed)?;
            let hi = project(tape_hi.value(out_hi));
            perturbed[pi].values_mut()[flat] = original - GRAD_CHECK_STEP;
            let (tape_lo, _, out_lo) = run(&perturbed)?;
            let lo = project(tape_lo.value(out_lo));
            perturbed[pi].values_mut()[flat] = original;

            let numeric = (hi - lo) / (2.0 * GRAD_CHECK_STEP);
            let a = analytic[pi].values()[flat];
            let denom = a.abs().max(numeric.abs()).max(1e-12);
            max_rel_error = max_rel_error.max((a - numeric).abs() / denom);
        }
    }

    Ok(GradCheckReport {
        max_rel_error,
        pass: max_rel_error <= tolerance,
        tolerance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngStream;
    use proptest::prelude::*;

    fn random_matrix(rows: usize, cols: usize, rng: &mut RngStream) -> Matrix {
        Matrix::from_fn(rows, cols, |_, _| rng.uniform_symmetric())
    }

    #[test]
    fn linear_of_ones_counts_fan_in() {
        let x = Matrix::from_fn(2, 3, |_, _| 1.0);
        let w = Matrix::from_fn(3, 4, |_, _| 1.0);
        let s = linear_forward(&x, &w).unwrap();
        assert!(s.values().iter().all(|&v| v == 3.0));
    }

    #[test]
    fn binary_linear_respects_parity() {
        // ±1 inputs and weights with fan-in 8: sums lie in {-8,-6,...,8}.
        let mut rng = seeded_stream(3, 0);
        let x = sign_forward(&random_matrix(4, 8, &mut rng));
        let w = sign_forward(&random_matrix(8, 5, &mut rng));
        let s = linear_forward(&x, &w).unwrap();
        for &v in s.values() {
            assert!(v.abs() <= 8.0);
            assert_eq!(v.rem_euclid(2.0), 0.0, "fan-in 8 sums are even, got {v}");
        }
    }

    #[test]
    fn linear_matches_matmul() {
        let mut rng = seeded_stream(5, 0);
        let x = random_matrix(4, 3, &mut rng);
        let w = random_matrix(3, 2, &mut rng);
        assert!(linear_forward(&x, &w)
            .unwrap()
            .bit_eq(&matmul(&x, &w).unwrap()));
    }

    #[test]
    fn linear_backward_zero_seed() {
        let mut rng = seeded_stream(7, 0);
        let x = random_matrix(4, 3, &mut rng);
        let w = random_matrix(3, 2, &mut rng);
        let ds = Matrix::zeros(4, 2);
        let (dx, dw) = linear_backward(&x, &w, &ds).unwrap();
        assert!(dx.values().iter().all(|&v| v == 0.0));
        assert!(dw.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn linear_backward_scalar_chain() {
        // X=[2], W=[3], dS=[5]: dX = 5*3 = 15, dW = 2*5 = 10.
        let x = Matrix::from_vec(1, 1, vec![2.0]).unwrap();
        let w = Matrix::from_vec(1, 1, vec![3.0]).unwrap();
        let ds = Matrix::from_vec(1, 1, vec![5.0]).unwrap();
        let (dx, dw) = linear_backward(&x, &w, &ds).unwrap();
        assert_eq!(dx.get(0, 0), 15.0);
        assert_eq!(dw.get(0, 0), 10.0);
    }

    #[test]
    fn sign_conventions() {
        let x = Matrix::from_vec(1, 4, vec![3.2, -1e-9, 0.0, -0.0]).unwrap();
        let s = sign_forward(&x);
        assert_eq!(s.values(), &[1.0, -1.0, 1.0, 1.0]);
    }

    #[test]
    fn ste_passes_inside_closed_interval() {
        let x = Matrix::from_vec(1, 4, vec![0.0, 1.5, -1.0, 1.0]).unwrap();
        let dy = Matrix::from_fn(1, 4, |_, _| 7.0);
        let dx = sign_backward_ste(&x, &dy).unwrap();
        assert_eq!(dx.values(), &[7.0, 0.0, 7.0, 7.0]);
    }

    #[test]
    fn grad_check_rejects_ste_graphs() {
        let mut rng = seeded_stream(11, 0);
        let params = [random_matrix(2, 2, &mut rng)];
        let err = grad_check(
            |tape, ids| {
                let s = tape.sign_ste(ids[0]);
                Ok(s)
            },
            &params,
            1e-6,
        );
        assert!(matches!(err, Err(Error::Contract(_))));
    }

    #[test]
    fn grad_check_linear_layer() {
        let mut rng = seeded_stream(13, 0);
        let params = [random_matrix(4, 3, &mut rng), random_matrix(3, 2, &mut rng)];
        let report = grad_check(
            |tape, ids| tape.linear(ids[0], ids[1]),
            &params,
            1e-6,
        )
        .unwrap();
        assert!(report.pass, "max rel error {}", report.max_rel_error);
    }

    #[test]
    fn grad_check_composed_batch_norm() {
        let mut rng = seeded_stream(17, 0);
        let s = random_matrix(8, 4, &mut rng);
        let gamma = Matrix::from_fn(1, 4, |_, _| 1.0 + 0.3 * rng.uniform_symmetric());
        let beta = random_matrix(1, 4, &mut rng);
        let report = grad_check(
            |tape, ids| Ok(compose_batch_norm(tape, ids[0], ids[1], ids[2], 1e-5)?.z),
            &[s, gamma, beta],
            1e-6,
        )
        .unwrap();
        assert!(report.pass, "max rel error {}", report.max_rel_error);
    }

    #[test]
    fn grad_check_fused_batch_norm() {
        let mut rng = seeded_stream(19, 0);
        let s = random_matrix(8, 4, &mut rng);
        let gamma = Matrix::from_fn(1, 4, |_, _| 1.0 + 0.3 * rng.uniform_symmetric());
        let beta = random_matrix(1, 4, &mut rng);
        let report = grad_check(
            |tape, ids| tape.batch_norm(ids[0], ids[1], ids[2], 1e-5),
            &[s, gamma, beta],
            1e-6,
        )
        .unwrap();
        assert!(report.pass, "max rel error {}", report.max_rel_error);
    }

    #[test]
    fn grad_check_center_scale_relu_softmax() {
        let mut rng = seeded_stream(23, 0);
        let s = random_matrix(6, 4, &mut rng);
        let labels = [0usize, 1, 2, 3, 0, 1];
        let report = grad_check(
            |tape, ids| {
                let z = tape.center_scale(ids[0], 0.5)?;
                let a = tape.relu(z);
                tape.softmax_xent(a, &labels)
            },
            &[s],
            1e-6,
        )
        .unwrap();
        assert!(report.pass, "max rel error {}", report.max_rel_error);
    }

    #[test]
    fn grad_check_bias_row() {
        let mut rng = seeded_stream(29, 0);
        let x = random_matrix(5, 3, &mut rng);
        let b = random_matrix(1, 3, &mut rng);
        let report = grad_check(
            |tape, ids| tape.add_row(ids[0], ids[1]),
            &[x, b],
            1e-6,
        )
        .unwrap();
        assert!(report.pass, "max rel error {}", report.max_rel_error);
    }

    #[test]
    fn per_op_finite_difference_sweep() {
        // Every differentiable op against central differences over 100 seeds.
        for seed in 0..100u64 {
            let mut rng = seeded_stream(1000 + seed, 0);
            let x = random_matrix(4, 3, &mut rng);
            let w = random_matrix(3, 2, &mut rng);
            let report = grad_check(
                |tape, ids| {
                    let s = tape.linear(ids[0], ids[1])?;
                    let r = tape.relu(s);
                    let m = tape.col_mean(r);
                    let c = tape.sub_row(r, m)?;
                    let q = tape.square(c);
                    let v = tape.col_mean(q);
                    let sd = tape.sqrt_shift(v, 1e-3);
                    tape.div_row(c, sd)
                },
                &[x, w],
                1e-6,
            )
            .unwrap();
            assert!(
                report.pass,
                "seed {seed}: max rel error {}",
                report.max_rel_error
            );
        }
    }

    #[test]
    fn whole_graph_backward_equals_chained_per_op_calls() {
        // Composite backward must equal manually chained per-op backwards,
        // bit for bit.
        let mut rng = seeded_stream(31, 0);
        let x = random_matrix(4, 3, &mut rng);
        let w = random_matrix(3, 2, &mut rng);
        let seed_grad = random_matrix(4, 2, &mut rng);

        let mut tape = Tape::new();
        let xid = tape.input(x.clone());
        let wid = tape.param(w.clone());
        let s = tape.linear(xid, wid).unwrap();
        let a = tape.relu(s);
        tape.backward(a, seed_grad.clone()).unwrap();

        // Manual chain: relu backward, then linear backward.
        let s_val = linear_forward(&x, &w).unwrap();
        let ds = relu_backward(&s_val, &seed_grad).unwrap();
        let (dx, dw) = linear_backward(&x, &w, &ds).unwrap();

        assert!(tape.grad(xid).unwrap().bit_eq(&dx));
        assert!(tape.grad(wid).unwrap().bit_eq(&dw));
    }

    #[test]
    fn softmax_xent_hand_value() {
        // Two logits [0, 0]: loss = ln 2 regardless of the label.
        let logits = Matrix::from_vec(1, 2, vec![0.0, 0.0]).unwrap();
        let mut tape = Tape::new();
        let l = tape.input(logits);
        let loss = tape.softmax_xent(l, &[1]).unwrap();
        assert!((tape.value(loss).get(0, 0) - core::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn softmax_xent_survives_huge_logits() {
        let logits = Matrix::from_vec(1, 2, vec![1e4, -1e4]).unwrap();
        let mut tape = Tape::new();
        let l = tape.input(logits);
        let loss = tape.softmax_xent(l, &[0]).unwrap();
        assert!(tape.value(loss).is_finite());
    }

    #[test]
    fn softmax_xent_rejects_bad_labels() {
        let logits = Matrix::zeros(2, 3);
        let mut tape = Tape::new();
        let l = tape.input(logits);
        assert!(matches!(
            tape.softmax_xent(l, &[0, 3]),
            Err(Error::Domain(_))
        ));
        assert!(matches!(tape.softmax_xent(l, &[0]), Err(Error::Shape(_))));
    }

    proptest! {
        #[test]
        fn ste_gradient_is_bounded(seed in 0u64..200) {
            let mut rng = seeded_stream(seed, 0);
            let x = Matrix::from_fn(3, 3, |_, _| 3.0 * rng.uniform_symmetric());
            let dy = Matrix::from_fn(3, 3, |_, _| 5.0 * rng.uniform_symmetric());
            let dx = sign_backward_ste(&x, &dy).unwrap();
            for ((&xv, &gv), &dv) in x.values().iter().zip(dy.values()).zip(dx.values()) {
                prop_assert!(dv.abs() <= gv.abs());
                if xv.abs() > 1.0 {
                    prop_assert_eq!(dv, 0.0);
                }
            }
        }
    }
}
