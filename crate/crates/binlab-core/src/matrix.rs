//! Dense row-major f64 matrices with deterministic reductions.
//!
//! Every reduction fixes its accumulation order (ascending index), so the
//! same inputs give bit-identical outputs on every run and platform. That is
//! the substrate the regression and determinism tests build on.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

/// A `rows x cols` matrix of f64 values in row-major order.
///
/// Values are expected to stay finite; [`Matrix::from_vec`] validates this at
/// the boundary, and in-crate operations preserve it for inputs of sane
/// magnitude. Instances are immutable through the public API once built
/// except for explicit `*_mut` accessors used by the optimizer.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

impl Matrix {
    /// Validating constructor: dimensions positive, length matching, all finite.
    pub fn from_vec(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::Shape(format!(
                "matrix dimensions must be positive, got {rows}x{cols}"
            )));
        }
        if values.len() != rows * cols {
            return Err(Error::Shape(format!(
                "expected {} values for a {rows}x{cols} matrix, got {}",
                rows * cols,
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "value at flat index {i} is {}",
                values[i]
            )));
        }
        Ok(Self { rows, cols, values })
    }

    /// All-zero matrix. Panics on zero dimensions (programmer error).
    pub fn zeros(rows: usize, cols: usize) -> Self {
        assert!(rows > 0 && cols > 0, "matrix dimensions must be positive");
        Self {
            rows,
            cols,
            values: vec![0.0; rows * cols],
        }
    }

    /// Build from an element function of (row, col).
    pub fn from_fn<F: FnMut(usize, usize) -> f64>(rows: usize, cols: usize, mut f: F) -> Self {
        assert!(rows > 0 && cols > 0, "matrix dimensions must be positive");
        let mut values = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                values.push(f(i, j));
            }
        }
        Self { rows, cols, values }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.values[i * self.cols + j] = v;
    }

    pub fn same_shape(&self, other: &Matrix) -> bool {
        self.rows == other.rows && self.cols == other.cols
    }

    /// Elementwise map into a new matrix.
    pub fn map<F: Fn(f64) -> f64>(&self, f: F) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Elementwise combine with a same-shape matrix.
    pub fn zip_map<F: Fn(f64, f64) -> f64>(&self, other: &Matrix, f: F) -> Result<Matrix> {
        if !self.same_shape(other) {
            return Err(Error::Shape(format!(
                "zip_map shapes differ: {}x{} vs {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        Ok(Matrix {
            rows: self.rows,
            cols: self.cols,
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn add(&self, other: &Matrix) -> Result<Matrix> {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn scale(&self, c: f64) -> Matrix {
        self.map(|v| c * v)
    }

    pub fn transpose(&self) -> Matrix {
        let mut out = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.values[j * self.rows + i] = self.values[i * self.cols + j];
            }
        }
        out
    }

    /// Per-column mean, summed in ascending row order then divided once.
    pub fn col_mean(&self) -> Vec<f64> {
        let mut sums = vec![0.0; self.cols];
        for i in 0..self.rows {
            let row = self.row(i);
            for (s, &v) in sums.iter_mut().zip(row) {
                *s += v;
            }
        }
        let n = self.rows as f64;
        sums.iter_mut().for_each(|s| *s /= n);
        sums
    }

    /// Per-column population variance (divide by the row count).
    pub fn col_variance_biased(&self, means: &[f64]) -> Vec<f64> {
        let mut sums = vec![0.0; self.cols];
        for i in 0..self.rows {
            let row = self.row(i);
            for ((s, &v), &m) in sums.iter_mut().zip(row).zip(means) {
                let d = v - m;
                *s += d * d;
            }
        }
        let n = self.rows as f64;
        sums.iter_mut().for_each(|s| *s /= n);
        sums
    }

    /// Largest absolute elementwise difference; infinity on shape mismatch.
    pub fn max_abs_diff(&self, other: &Matrix) -> f64 {
        if !self.same_shape(other) {
            return f64::INFINITY;
        }
        self.values
            .iter()
            .zip(&other.values)
            .map(|(&a, &b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Bit-level equality (distinguishes -0.0 from 0.0, NaN payloads, ...).
    pub fn bit_eq(&self, other: &Matrix) -> bool {
        self.same_shape(other)
            && self
                .values
                .iter()
                .zip(&other.values)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

/// Matrix product with a fixed accumulation order.
///
/// Each output element accumulates `A[i,k] * B[k,j]` in ascending `k`, one
/// running sum per element, so results are bit-reproducible. The loop is
/// arranged i-k-j for cache locality; that reorders only independent
/// elements, not the per-element addition sequence.
pub fn matmul(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols != b.rows {
        return Err(Error::Shape(format!(
            "matmul: {}x{} * {}x{}",
            a.rows, a.cols, b.rows, b.cols
        )));
    }
    let mut out = Matrix::zeros(a.rows, b.cols);
    for i in 0..a.rows {
        let arow = a.row(i);
        let orow = &mut out.values[i * b.cols..(i + 1) * b.cols];
        for (k, &aik) in arow.iter().enumerate() {
            let brow = &b.values[k * b.cols..(k + 1) * b.cols];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += aik * bv;
            }
        }
    }
    Ok(out)
}

impl Matrix {
    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        matmul(self, other)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded_stream;
    use proptest::prelude::*;

    fn random_matrix(rows: usize, cols: usize, seed: u64) -> Matrix {
        let mut rng = seeded_stream(seed, 0);
        Matrix::from_fn(rows, cols, |_, _| rng.uniform_symmetric())
    }

    /// Independent oracle: plain i-j-k triple loop, k ascending.
    fn matmul_naive(a: &Matrix, b: &Matrix) -> Matrix {
        let mut out = Matrix::zeros(a.rows(), b.cols());
        for i in 0..a.rows() {
            for j in 0..b.cols() {
                let mut acc = 0.0;
                for k in 0..a.cols() {
                    acc += a.get(i, k) * b.get(k, j);
                }
                out.set(i, j, acc);
            }
        }
        out
    }

    #[test]
    fn from_vec_validates() {
        assert!(matches!(
            Matrix::from_vec(0, 3, vec![]),
            Err(Error::Shape(_))
        ));
        assert!(matches!(
            Matrix::from_vec(2, 2, vec![1.0, 2.0, 3.0]),
            Err(Error::Shape(_))
        ));
        assert!(matches!(
            Matrix::from_vec(1, 2, vec![1.0, f64::NAN]),
            Err(Error::NonFinite(_))
        ));
        assert!(Matrix::from_vec(2, 2, vec![1.0, 2.0, 3.0, 4.0]).is_ok());
    }

    #[test]
    fn matmul_identity_returns_operand() {
        let a = random_matrix(5, 5, 11);
        let id = Matrix::from_fn(5, 5, |i, j| if i == j { 1.0 } else { 0.0 });
        let c = matmul(&id, &a).unwrap();
        assert!(c.bit_eq(&a));
    }

    #[test]
    fn matmul_hand_check() {
        // [[1,2],[3,4]] * [[1],[1]] = [[3],[7]]
        let a = Matrix::from_vec(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let b = Matrix::from_vec(2, 1, vec![1.0, 1.0]).unwrap();
        let c = matmul(&a, &b).unwrap();
        assert_eq!(c.values(), &[3.0, 7.0]);
    }

    #[test]
    fn matmul_matches_naive_oracle_exactly() {
        let a = random_matrix(8, 8, 21);
        let b = random_matrix(8, 8, 22);
        let fast = matmul(&a, &b).unwrap();
        let slow = matmul_naive(&a, &b);
        // Same per-element accumulation order, so bit-identical.
        assert!(fast.bit_eq(&slow));
    }

    #[test]
    fn matmul_shape_mismatch() {
        let a = Matrix::zeros(2, 3);
        let b = Matrix::zeros(2, 3);
        assert!(matches!(matmul(&a, &b), Err(Error::Shape(_))));
    }

    #[test]
    fn matmul_reproducible_across_runs() {
        let a = random_matrix(6, 7, 31);
        let b = random_matrix(7, 5, 32);
        let c1 = matmul(&a, &b).unwrap();
        let c2 = matmul(&a, &b).unwrap();
        assert!(c1.bit_eq(&c2));
    }

    #[test]
    fn sampled_sign_matrix_moments() {
        // ±1 entries via sign of symmetric uniforms: mean -> 0, variance -> 1.
        let mut rng = seeded_stream(7, 1);
        let n = 100_000;
        let m = Matrix::from_fn(n, 1, |_, _| {
            if rng.uniform_symmetric() >= 0.0 {
                1.0
            } else {
                -1.0
            }
        });
        let mean = m.col_mean()[0];
        let var = m.col_variance_biased(&[mean])[0];
        assert!(mean.abs() < 0.02, "mean {mean}");
        assert!((var - 1.0).abs() < 0.02, "var {var}");
    }

    #[test]
    fn transpose_round_trip() {
        let a = random_matrix(3, 4, 40);
        assert!(a.transpose().transpose().bit_eq(&a));
    }

    proptest! {
        #[test]
        fn matmul_output_finite(seed in 0u64..500, m in 1usize..6, k in 1usize..6, n in 1usize..6) {
            let a = random_matrix(m, k, seed);
            let b = random_matrix(k, n, seed + 1000);
            let c = matmul(&a, &b).unwrap();
            prop_assert!(c.is_finite());
        }

        #[test]
        fn col_mean_of_constant_matrix_is_exact(v in -100i32..100, rows in 1usize..9) {
            let m = Matrix::from_fn(rows, 2, |_, _| v as f64);
            prop_assert_eq!(m.col_mean(), vec![v as f64, v as f64]);
        }
    }
}
