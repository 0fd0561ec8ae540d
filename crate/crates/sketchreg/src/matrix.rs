//! Dense row-major matrix container and basic vector helpers.
//!
//! Every algorithm in this crate works on row-major `f64` storage: the row is
//! the unit of streaming, sampling, and sketch application, so row-major keeps
//! those operations contiguous.

use crate::error::{Error, Result};

/// Dense row-major matrix of `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    /// Zero-filled `rows x cols` matrix.
    pub fn zeros(rows: usize, cols: usize) -> Self {
        DenseMatrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    /// Identity matrix of order `n`.
    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    /// Build from an existing row-major buffer. Fails if the length is wrong.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::dim(
                "DenseMatrix::from_vec",
                format!("{} elements", rows * cols),
                format!("{}", data.len()),
            ));
        }
        Ok(DenseMatrix { rows, cols, data })
    }

    /// Build a matrix row by row from a generator function.
    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        DenseMatrix { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Consume the matrix, returning its row-major buffer.
    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        debug_assert!(i < self.rows && j < self.cols);
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        debug_assert!(i < self.rows && j < self.cols);
        self.data[i * self.cols + j] = v;
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    /// Copy of column `j`.
    pub fn col(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self.data[i * self.cols + j]).collect()
    }

    /// Borrowed view of the contiguous storage for rows `[start, end)`.
    pub fn rows_slice(&self, start: usize, end: usize) -> &[f64] {
        assert!(start <= end && end <= self.rows);
        &self.data[start * self.cols..end * self.cols]
    }

    /// A new matrix holding rows `[start, end)` of `self`.
    pub fn row_block(&self, start: usize, end: usize) -> DenseMatrix {
        assert!(start <= end && end <= self.rows);
        DenseMatrix {
            rows: end - start,
            cols: self.cols,
            data: self.data[start * self.cols..end * self.cols].to_vec(),
        }
    }

    /// Transposed copy.
    pub fn transpose(&self) -> DenseMatrix {
        let mut out = DenseMatrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        out
    }

    /// Horizontal concatenation `[self | right]`.
    pub fn hcat(&self, right: &DenseMatrix) -> Result<DenseMatrix> {
        if self.rows != right.rows {
            return Err(Error::dim(
                "DenseMatrix::hcat",
                format!("{} rows", self.rows),
                format!("{} rows", right.rows),
            ));
        }
        let cols = self.cols + right.cols;
        let mut out = DenseMatrix::zeros(self.rows, cols);
        for i in 0..self.rows {
            out.row_mut(i)[..self.cols].copy_from_slice(self.row(i));
            out.row_mut(i)[self.cols..].copy_from_slice(right.row(i));
        }
        Ok(out)
    }

    /// Matrix-vector product `self * x`.
    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.cols, "matvec operand length");
        (0..self.rows).map(|i| dot(self.row(i), x)).collect()
    }

    /// Transposed matrix-vector product `self^T * y`.
    pub fn tr_matvec(&self, y: &[f64]) -> Vec<f64> {
        assert_eq!(y.len(), self.rows, "tr_matvec operand length");
        let mut out = vec![0.0; self.cols];
        for i in 0..self.rows {
            let yi = y[i];
            if yi != 0.0 {
                axpy(yi, self.row(i), &mut out);
            }
        }
        out
    }

    /// Frobenius norm.
    pub fn frobenius_norm(&self) -> f64 {
        norm2(&self.data)
    }

    /// Squared Euclidean norms of all rows.
    pub fn row_sq_norms(&self) -> Vec<f64> {
        (0..self.rows).map(|i| dot(self.row(i), self.row(i))).collect()
    }

    /// True if every entry is finite.
    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Scale every entry in place.
    pub fn scale(&mut self, s: f64) {
        for v in &mut self.data {
            *v *= s;
        }
    }
}

/// Dot product (sequential, fixed order — deterministic).
#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    // Four-lane unrolled accumulation: fixed association order, so results do
    // not depend on slice alignment or caller context.
    let n = a.len();
    let mut acc = [0.0f64; 4];
    let chunks = n / 4;
    for c in 0..chunks {
        let i = 4 * c;
        acc[0] += a[i] * b[i];
        acc[1] += a[i + 1] * b[i + 1];
        acc[2] += a[i + 2] * b[i + 2];
        acc[3] += a[i + 3] * b[i + 3];
    }
    let mut tail = 0.0;
    for i in 4 * chunks..n {
        tail += a[i] * b[i];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// `y += alpha * x`.
#[inline]
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x.iter()) {
        *yi += alpha * xi;
    }
}

/// Euclidean norm with overflow-safe scaling.
#[inline]
pub fn norm2(x: &[f64]) -> f64 {
    let mut max = 0.0f64;
    for v in x {
        let a = v.abs();
        if a > max {
            max = a;
        }
    }
    if max == 0.0 || !max.is_finite() {
        return max;
    }
    let inv = 1.0 / max;
    let mut sum = 0.0;
    for v in x {
        let t = v * inv;
        sum += t * t;
    }
    max * sum.sqrt()
}

/// `sum |x_i|`.
#[inline]
pub fn norm1(x: &[f64]) -> f64 {
    x.iter().map(|v| v.abs()).sum()
}

/// `max |x_i|`.
#[inline]
pub fn norm_inf(x: &[f64]) -> f64 {
    x.iter().fold(0.0f64, |m, v| m.max(v.abs()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_accessors() {
        let m = DenseMatrix::from_fn(3, 2, |i, j| (i * 10 + j) as f64);
        assert_eq!(m.get(2, 1), 21.0);
        assert_eq!(m.row(1), &[10.0, 11.0]);
        assert_eq!(m.col(0), vec![0.0, 10.0, 20.0]);
        let t = m.transpose();
        assert_eq!(t.get(1, 2), 21.0);
        assert_eq!(t.transpose(), m);
    }

    #[test]
    fn from_vec_validates_length() {
        assert!(DenseMatrix::from_vec(2, 2, vec![1.0; 3]).is_err());
        assert!(DenseMatrix::from_vec(2, 2, vec![1.0; 4]).is_ok());
    }

    #[test]
    fn matvec_and_transpose_agree() {
        let m = DenseMatrix::from_fn(4, 3, |i, j| ((i + 1) * (j + 2)) as f64);
        let x = vec![1.0, -2.0, 0.5];
        let y = m.matvec(&x);
        // Oracle: same product computed element-wise with scalar loops.
        for i in 0..4 {
            let mut s = 0.0;
            for j in 0..3 {
                s += m.get(i, j) * x[j];
            }
            assert!((y[i] - s).abs() < 1e-12);
        }
        let z = m.tr_matvec(&y);
        let mt = m.transpose();
        let z2 = mt.matvec(&y);
        for (a, b) in z.iter().zip(z2.iter()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn norms_match_naive() {
        let x = vec![3.0, -4.0, 12.0];
        assert!((norm2(&x) - 13.0).abs() < 1e-12);
        assert!((norm1(&x) - 19.0).abs() < 1e-12);
        assert!((norm_inf(&x) - 12.0).abs() < 1e-12);
        assert_eq!(norm2(&[]), 0.0);
    }

    #[test]
    fn norm2_handles_extreme_scales() {
        let big = vec![1e200, 1e200];
        assert!((norm2(&big) - 1e200 * std::f64::consts::SQRT_2).abs() / 1e200 < 1e-12);
        let tiny = vec![1e-200, 1e-200];
        assert!((norm2(&tiny) - 1e-200 * std::f64::consts::SQRT_2).abs() / 1e-200 < 1e-12);
    }

    #[test]
    fn hcat_stacks_columns() {
        let a = DenseMatrix::from_fn(2, 2, |i, j| (i + j) as f64);
        let b = DenseMatrix::from_fn(2, 1, |i, _| 100.0 + i as f64);
        let c = a.hcat(&b).unwrap();
        assert_eq!(c.cols(), 3);
        assert_eq!(c.get(1, 2), 101.0);
        assert!(a.hcat(&DenseMatrix::zeros(3, 1)).is_err());
    }
}
