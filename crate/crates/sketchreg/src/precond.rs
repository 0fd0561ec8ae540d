//! Right preconditioners built from sketches: QR-type (triangular, from the
//! R factor of a sketched matrix) and SVD-type (dense, from the SVD of an
//! unscaled Gaussian sketch), plus measured conditioning quality.

use crate::error::{Error, Result};
use crate::linalg::gemm::matmul;
use crate::linalg::qr::qr_r_only;
use crate::linalg::simdops;
use crate::linalg::solve::{cond2, trsm_right_rinv};
use crate::linalg::svd::{jacobi_svd, RANK_TOL};
use crate::matrix::DenseMatrix;
use crate::passio::{CostLedger, MatrixSource};
use crate::randstream::SeedSpec;
use crate::sketch::{SketchOperator, SketchVariant};

/// Default tail probability for the predicted singular-value interval of
/// the SVD-type preconditioner.
pub const DEFAULT_INTERVAL_DELTA: f64 = 0.01;

/// A right preconditioner `N`: the solver works on `min ||A N y - b||` and
/// maps back via `x = N y`.
#[derive(Debug, Clone)]
pub struct Preconditioner {
    /// The preconditioner itself, `n x n` nonsingular. Upper triangular
    /// (inverse of a sketch R factor) for the QR type; dense `V S^{-1}`
    /// for the SVD type.
    pub n_matrix: DenseMatrix,
    /// Human-readable description of the sketch this was built from.
    pub source: String,
    /// Predicted `(sigma_lo, sigma_hi)` interval for the singular values of
    /// `A N`, when a tail bound applies to the construction.
    pub predicted_interval: Option<(f64, f64)>,
}

impl Preconditioner {
    pub fn dim(&self) -> usize {
        self.n_matrix.rows()
    }

    /// `N * y`.
    pub fn apply_vec(&self, y: &[f64]) -> Vec<f64> {
        let n = self.dim();
        assert_eq!(y.len(), n, "preconditioner apply length");
        let data = self.n_matrix.as_slice();
        (0..n).map(|i| simdops::dot(&data[i * n..(i + 1) * n], y)).collect()
    }

    /// `N^T * x`.
    pub fn apply_transpose_vec(&self, x: &[f64]) -> Vec<f64> {
        let n = self.dim();
        assert_eq!(x.len(), n, "preconditioner apply length");
        let data = self.n_matrix.as_slice();
        let mut out = vec![0.0f64; n];
        for i in 0..n {
            simdops::axpy(x[i], &data[i * n..(i + 1) * n], &mut out);
        }
        out
    }
}

/// QR-type preconditioner: `N = R^{-1}` where `R` is the triangular factor
/// of the (full-column-rank) sketched matrix. A rank failure here usually
/// means the sketch dimension `s` is too small for the input.
pub fn qr_precond(sketch_of_a: &DenseMatrix) -> Result<Preconditioner> {
    let r = qr_r_only(sketch_of_a).map_err(|e| match e {
        Error::RankDeficient { ratio, .. } => Error::RankDeficient {
            context: "qr_precond (sketch lost rank; increase the sketch size s)",
            ratio,
        },
        other => other,
    })?;
    let n = r.cols();
    let mut n_matrix = DenseMatrix::identity(n);
    trsm_right_rinv(&mut n_matrix, &r)?;
    Ok(Preconditioner {
        n_matrix,
        source: format!(
            "qr of {}x{} sketch",
            sketch_of_a.rows(),
            sketch_of_a.cols()
        ),
        predicted_interval: None,
    })
}

/// SVD-type preconditioner with the default interval tail probability.
pub fn lsrn_precond(
    a: &MatrixSource,
    gamma: f64,
    seed: SeedSpec,
    block_rows: usize,
    ledger: &mut CostLedger,
) -> Result<Preconditioner> {
    lsrn_precond_with_delta(a, gamma, seed, DEFAULT_INTERVAL_DELTA, block_rows, ledger)
}

/// SVD-type preconditioner: sketch `A` with an unscaled standard Gaussian
/// of `s = ceil(gamma * n)` rows, take its thin SVD, and set
/// `N = V * diag(1/sigma)`.
///
/// The predicted interval for `sigma(A N)` is
/// `[1/(sqrt(s)+sqrt(n)+t), 1/(sqrt(s)-sqrt(n)-t)]` with
/// `t = sqrt(2 ln(2/delta))`; it is omitted when the upper edge is not
/// positive (dimensions too small for the tail bound to say anything).
pub fn lsrn_precond_with_delta(
    a: &MatrixSource,
    gamma: f64,
    seed: SeedSpec,
    delta: f64,
    block_rows: usize,
    ledger: &mut CostLedger,
) -> Result<Preconditioner> {
    if !(gamma > 1.0) {
        return Err(Error::invalid_arg(format!(
            "lsrn_precond needs oversampling gamma > 1, got {gamma}"
        )));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::invalid_arg(format!(
            "lsrn_precond needs delta in (0, 1), got {delta}"
        )));
    }
    let n = a.cols();
    let s = (gamma * n as f64).ceil() as usize;
    let op = SketchOperator::new(SketchVariant::Gaussian, s, a.rows(), seed)?;
    let mut sketch = op.apply(a, block_rows, ledger)?;
    // The operator normalizes by 1/sqrt(s); undo it so the sketch matches
    // an unscaled standard normal, which is what the interval describes.
    let scale = (s as f64).sqrt();
    for v in sketch.as_mut_slice() {
        *v *= scale;
    }

    let svd = jacobi_svd(&sketch)?;
    let smax = svd.sigma.first().copied().unwrap_or(0.0);
    let smin = svd.sigma.last().copied().unwrap_or(0.0);
    if !(smin > RANK_TOL * smax && smin > 0.0) {
        return Err(Error::RankDeficient {
            context: "lsrn_precond (sketch singular spectrum hit zero)",
            ratio: if smax > 0.0 { smin / smax } else { 0.0 },
        });
    }
    let mut n_matrix = svd.v;
    for i in 0..n {
        for j in 0..n {
            n_matrix.set(i, j, n_matrix.get(i, j) / svd.sigma[j]);
        }
    }

    let t = (2.0 * (2.0 / delta).ln()).sqrt();
    let lo_edge = (s as f64).sqrt() + (n as f64).sqrt() + t;
    let hi_edge = (s as f64).sqrt() - (n as f64).sqrt() - t;
    let predicted_interval = if hi_edge > 0.0 {
        Some((1.0 / lo_edge, 1.0 / hi_edge))
    } else {
        None
    };

    Ok(Preconditioner {
        n_matrix,
        source: format!("svd of unscaled gaussian sketch s={s} gamma={gamma}"),
        predicted_interval,
    })
}

/// Measured conditioning quality: `cond2(A * N)` with the product formed
/// explicitly (desk scale only).
pub fn precond_quality(a: &DenseMatrix, p: &Preconditioner) -> Result<f64> {
    if a.cols() != p.dim() {
        return Err(Error::dim(
            "precond_quality",
            format!("{} columns", p.dim()),
            format!("{}", a.cols()),
        ));
    }
    cond2(&matmul(a, &p.n_matrix))
}

/// Expected condition number of `A N` for a Gaussian sketch of `s` rows on
/// an `n`-column input: `(1 + sqrt(n/s)) / (1 - sqrt(n/s))`.
pub fn gaussian_predicted_kappa(n: usize, s: usize) -> Result<f64> {
    if s <= n {
        return Err(Error::invalid_arg(format!(
            "predicted kappa needs s > n, got s={s}, n={n}"
        )));
    }
    let r = (n as f64 / s as f64).sqrt();
    Ok((1.0 + r) / (1.0 - r))
}
