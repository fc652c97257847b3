//! Flat row-major tensors and the handful of dense kernels the model needs.
//!
//! Everything is `f64`: the training loop is desk-scale and the gradient
//! checker compares against central finite differences at 1e-4 relative
//! error, which f32 arithmetic cannot reach.

use crate::error::{Error, Result};

/// Dense row-major tensor of arbitrary rank.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Tensor { shape: shape.to_vec(), data: vec![0.0; n] }
    }

    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Self {
        assert_eq!(
            shape.iter().product::<usize>(),
            data.len(),
            "shape {:?} does not match data length {}",
            shape,
            data.len()
        );
        Tensor { shape: shape.to_vec(), data }
    }

    pub fn scalar(v: f64) -> Self {
        Tensor { shape: vec![1], data: vec![v] }
    }

    pub fn filled(shape: &[usize], v: f64) -> Self {
        let n = shape.iter().product();
        Tensor { shape: shape.to_vec(), data: vec![v; n] }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Rows of a rank-2 tensor.
    pub fn rows(&self) -> usize {
        debug_assert_eq!(self.shape.len(), 2);
        self.shape[0]
    }

    /// Columns of a rank-2 tensor.
    pub fn cols(&self) -> usize {
        debug_assert_eq!(self.shape.len(), 2);
        self.shape[1]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        let c = self.cols();
        &mut self.data[i * c..(i + 1) * c]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn ensure_finite(&self, name: &str) -> Result<()> {
        if self.is_finite() {
            Ok(())
        } else {
            Err(Error::NonFinite(name.to_string()))
        }
    }

    /// Squared L2 norm.
    pub fn sq_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn scale(&mut self, c: f64) {
        for v in &mut self.data {
            *v *= c;
        }
    }

    /// `self += other`, shapes must match.
    pub fn add_assign(&mut self, other: &Tensor) {
        assert_eq!(self.shape, other.shape);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += *b;
        }
    }
}

/// C[m,n] = A[m,k] · B[n,k]^T — dot products of rows; the cache-friendly case.
pub fn matmul_nt(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    debug_assert_eq!(out.len(), m * n);
    for i in 0..m {
        let ar = &a[i * k..(i + 1) * k];
        let or = &mut out[i * n..(i + 1) * n];
        for j in 0..n {
            let br = &b[j * k..(j + 1) * k];
            let mut acc = 0.0;
            for l in 0..k {
                acc += ar[l] * br[l];
            }
            or[j] = acc;
        }
    }
}

/// C[m,n] = A[m,k] · B[k,n].
pub fn matmul_nn(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    out.fill(0.0);
    for i in 0..m {
        let or = &mut out[i * n..(i + 1) * n];
        for l in 0..k {
            let av = a[i * k + l];
            if av == 0.0 {
                continue;
            }
            let br = &b[l * n..(l + 1) * n];
            for j in 0..n {
                or[j] += av * br[j];
            }
        }
    }
}

/// C[m,n] = A[k,m]^T · B[k,n].
pub fn matmul_tn(a: &[f64], b: &[f64], k: usize, m: usize, n: usize, out: &mut [f64]) {
    debug_assert_eq!(a.len(), k * m);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    out.fill(0.0);
    for l in 0..k {
        let ar = &a[l * m..(l + 1) * m];
        let br = &b[l * n..(l + 1) * n];
        for i in 0..m {
            let av = ar[i];
            if av == 0.0 {
                continue;
            }
            let or = &mut out[i * n..(i + 1) * n];
            for j in 0..n {
                or[j] += av * br[j];
            }
        }
    }
}

/// Add a bias row to every row of `x` ([rows, cols]).
pub fn add_bias(x: &mut [f64], bias: &[f64]) {
    let cols = bias.len();
    for row in x.chunks_mut(cols) {
        for (v, b) in row.iter_mut().zip(bias) {
            *v += *b;
        }
    }
}

/// In-place numerically stable softmax over each row. Entries of `-inf`
/// come out as exactly 0, so masked positions contribute nothing at all.
pub fn softmax_rows(x: &mut [f64], cols: usize) {
    for row in x.chunks_mut(cols) {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
}

/// log(sum(exp(row))) for one row.
pub fn log_sum_exp(row: &[f64]) -> f64 {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = row.iter().map(|v| (v - max).exp()).sum();
    max + sum.ln()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_variants_agree() {
        // A: 2x3, B: 3x2
        let a = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let b = [7.0, 8.0, 9.0, 10.0, 11.0, 12.0];
        let mut nn = [0.0; 4];
        matmul_nn(&a, &b, 2, 3, 2, &mut nn);
        assert_eq!(nn, [58.0, 64.0, 139.0, 154.0]);

        // Same product via nt with B stored transposed (2x3).
        let bt = [7.0, 9.0, 11.0, 8.0, 10.0, 12.0];
        let mut nt = [0.0; 4];
        matmul_nt(&a, &bt, 2, 3, 2, &mut nt);
        assert_eq!(nn, nt);

        // And via tn with A stored transposed (3x2).
        let at = [1.0, 4.0, 2.0, 5.0, 3.0, 6.0];
        let mut tn = [0.0; 4];
        matmul_tn(&at, &b, 3, 2, 2, &mut tn);
        assert_eq!(nn, tn);
    }

    #[test]
    fn softmax_rows_sum_to_one_and_mask_is_exact() {
        let mut x = vec![1.0, 2.0, f64::NEG_INFINITY, -1.0, 0.5, 3.0];
        softmax_rows(&mut x, 3);
        assert_eq!(x[2], 0.0);
        for row in x.chunks(3) {
            let s: f64 = row.iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn log_sum_exp_matches_naive() {
        let row = [0.1f64, -2.0, 3.5];
        let naive = row.iter().map(|v| v.exp()).sum::<f64>().ln();
        assert!((log_sum_exp(&row) - naive).abs() < 1e-12);
    }
}
