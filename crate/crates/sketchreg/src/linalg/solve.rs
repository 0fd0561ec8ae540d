//! Direct solves and condition-number utilities built on the QR/SVD kernels:
//! triangular solves (including a blocked right-multiply by `R^{-1}`),
//! Cholesky, normal-equation and minimum-length least squares, `cond2`, and
//! the elementwise-norm condition estimate for general p.

use crate::error::{Error, Result};
use crate::linalg::gemm::{gemm_acc, gram};
use crate::linalg::svd::{jacobi_svd, singular_values};
use crate::matrix::{dot, norm1, norm2, norm_inf, DenseMatrix};
use crate::randstream::{RandomStream, SeedSpec};

/// Solve `R x = y` for upper-triangular `R`.
pub fn back_substitute(r: &DenseMatrix, y: &[f64]) -> Result<Vec<f64>> {
    let n = r.cols();
    if r.rows() != n || y.len() != n {
        return Err(Error::dim(
            "back_substitute",
            format!("{n}x{n} and rhs {n}"),
            format!("{}x{} and rhs {}", r.rows(), r.cols(), y.len()),
        ));
    }
    let mut x = y.to_vec();
    for i in (0..n).rev() {
        let d = r.get(i, i);
        if d == 0.0 {
            return Err(Error::IllConditioned {
                context: "back_substitute",
                indicator: 0.0,
            });
        }
        let mut s = x[i];
        let row = r.row(i);
        for j in (i + 1)..n {
            s -= row[j] * x[j];
        }
        x[i] = s / d;
    }
    Ok(x)
}

/// Solve `R^T x = y` for upper-triangular `R` (a forward substitution).
pub fn forward_substitute_transposed(r: &DenseMatrix, y: &[f64]) -> Result<Vec<f64>> {
    let n = r.cols();
    if r.rows() != n || y.len() != n {
        return Err(Error::dim(
            "forward_substitute_transposed",
            format!("{n}x{n} and rhs {n}"),
            format!("{}x{} and rhs {}", r.rows(), r.cols(), y.len()),
        ));
    }
    let mut x = y.to_vec();
    for i in 0..n {
        let d = r.get(i, i);
        if d == 0.0 {
            return Err(Error::IllConditioned {
                context: "forward_substitute_transposed",
                indicator: 0.0,
            });
        }
        let xi = x[i] / d;
        x[i] = xi;
        if xi != 0.0 {
            let row = r.row(i);
            for j in (i + 1)..n {
                x[j] -= row[j] * xi;
            }
        }
    }
    Ok(x)
}

/// Column-block width for the blocked triangular right-solve.
const TRSM_NB: usize = 64;

/// In place `X := X * R^{-1}` for upper-triangular `R`; the bulk of the work
/// runs through GEMM on column blocks.
pub fn trsm_right_rinv(x: &mut DenseMatrix, r: &DenseMatrix) -> Result<()> {
    let n = r.cols();
    if r.rows() != n || x.cols() != n {
        return Err(Error::dim(
            "trsm_right_rinv",
            format!("X cols == R order {n}"),
            format!("X {}x{}, R {}x{}", x.rows(), x.cols(), r.rows(), r.cols()),
        ));
    }
    let m = x.rows();
    for j in 0..n {
        if r.get(j, j) == 0.0 {
            return Err(Error::IllConditioned {
                context: "trsm_right_rinv",
                indicator: 0.0,
            });
        }
    }
    let mut tbuf = vec![0.0f64; m * TRSM_NB];
    let mut rblk = vec![0.0f64; TRSM_NB * TRSM_NB];
    let mut invd = vec![0.0f64; TRSM_NB];
    let ld = n;
    for col0 in (0..n).step_by(TRSM_NB) {
        let w = (n - col0).min(TRSM_NB);
        // Copy the target column block out (GEMM may not alias operands).
        {
            let xs = x.as_slice();
            for i in 0..m {
                tbuf[i * w..(i + 1) * w].copy_from_slice(&xs[i * ld + col0..i * ld + col0 + w]);
            }
        }
        // Subtract contributions of the already-solved columns.
        if col0 > 0 {
            let xs = x.as_slice().to_vec(); // solved region snapshot
            gemm_acc(
                m,
                w,
                col0,
                -1.0,
                &xs,
                ld,
                &r.as_slice()[col0..],
                ld,
                &mut tbuf[..m * w],
                w,
            );
        }
        // Transposed copy of the diagonal block: rblk[jj][kk] = R[col0+kk][col0+jj].
        for jj in 0..w {
            invd[jj] = 1.0 / r.get(col0 + jj, col0 + jj);
            for kk in 0..jj {
                rblk[jj * w + kk] = r.get(col0 + kk, col0 + jj);
            }
        }
        // Per-row forward solve within the block.
        for i in 0..m {
            let t = &mut tbuf[i * w..(i + 1) * w];
            for jj in 0..w {
                let s = dot(&t[..jj], &rblk[jj * w..jj * w + jj]);
                t[jj] = (t[jj] - s) * invd[jj];
            }
        }
        // Write the block back.
        {
            let xs = x.as_mut_slice();
            for i in 0..m {
                xs[i * ld + col0..i * ld + col0 + w].copy_from_slice(&tbuf[i * w..(i + 1) * w]);
            }
        }
    }
    Ok(())
}

/// Lower Cholesky factor of a symmetric positive definite matrix.
pub fn cholesky(g: &DenseMatrix) -> Result<DenseMatrix> {
    let n = g.rows();
    if g.cols() != n {
        return Err(Error::dim(
            "cholesky",
            "square matrix".to_string(),
            format!("{}x{}", n, g.cols()),
        ));
    }
    let mut l = DenseMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let mut s = g.get(i, j);
            s -= dot(&l.row(i)[..j], &l.row(j)[..j]);
            if i == j {
                if s <= 0.0 || !s.is_finite() {
                    return Err(Error::IllConditioned {
                        context: "cholesky",
                        indicator: s,
                    });
                }
                l.set(i, j, s.sqrt());
            } else {
                l.set(i, j, s / l.get(j, j));
            }
        }
    }
    Ok(l)
}

/// Solve `L L^T x = b` given the lower factor `L`.
pub fn cholesky_solve(l: &DenseMatrix, b: &[f64]) -> Vec<f64> {
    let n = l.rows();
    debug_assert_eq!(b.len(), n);
    let mut y = b.to_vec();
    for i in 0..n {
        let s = dot(&l.row(i)[..i], &y[..i]);
        y[i] = (y[i] - s) / l.get(i, i);
    }
    for i in (0..n).rev() {
        let mut s = y[i];
        for j in (i + 1)..n {
            s -= l.get(j, i) * y[j];
        }
        y[i] = s / l.get(i, i);
    }
    y
}

/// In-place convenience: factor `g` and solve `g x = rhs`, overwriting `rhs`
/// with the solution.
pub fn cholesky_solve_in_place(g: &DenseMatrix, rhs: &mut Vec<f64>) -> Result<()> {
    let l = cholesky(g)?;
    *rhs = cholesky_solve(&l, rhs);
    Ok(())
}

/// Least squares through the normal equations `(A^T A) x = A^T b`. Fast but
/// squares the condition number; errors with [`Error::IllConditioned`] when
/// the Cholesky factorization breaks down.
pub fn normal_eq_solve(a: &DenseMatrix, b: &[f64]) -> Result<Vec<f64>> {
    if b.len() != a.rows() {
        return Err(Error::dim(
            "normal_eq_solve",
            format!("rhs of length {}", a.rows()),
            format!("{}", b.len()),
        ));
    }
    let g = gram(a);
    let l = cholesky(&g)?;
    Ok(cholesky_solve(&l, &a.tr_matvec(b)))
}

/// Minimum-length least-squares solution through the (rank-truncated) SVD:
/// the unique minimizer of `||x||` among all least-squares solutions.
pub fn min_length_solve(a: &DenseMatrix, b: &[f64]) -> Result<Vec<f64>> {
    if b.len() != a.rows() {
        return Err(Error::dim(
            "min_length_solve",
            format!("rhs of length {}", a.rows()),
            format!("{}", b.len()),
        ));
    }
    let f = jacobi_svd(a)?;
    let mut x = vec![0.0f64; a.cols()];
    for k in 0..f.rank() {
        let uk_b = dot(&f.u.col(k), b);
        let c = uk_b / f.sigma[k];
        for i in 0..a.cols() {
            x[i] += c * f.v.get(i, k);
        }
    }
    Ok(x)
}

/// Spectral condition number `sigma_max / sigma_min`; infinite when the
/// matrix is numerically rank deficient.
pub fn cond2(a: &DenseMatrix) -> Result<f64> {
    let s = singular_values(a)?;
    match (s.first(), s.last()) {
        (Some(&smax), Some(&smin))
            if smin > crate::linalg::svd::RANK_TOL * smax && smin > 0.0 =>
        {
            Ok(smax / smin)
        }
        _ => Ok(f64::INFINITY),
    }
}

/// Result of the elementwise-norm condition estimate: the exact elementwise
/// factor `alpha = |A|_p` and a probe-based lower bound on the dual factor
/// `beta` (so `alpha * beta_lower` underestimates the true product).
#[derive(Debug, Clone, Copy)]
pub struct KappaBarEstimate {
    pub alpha: f64,
    pub beta_lower: f64,
    /// Always true: `beta` comes from finitely many probe directions.
    pub estimate: bool,
}

impl KappaBarEstimate {
    /// The estimated condition product `alpha * beta_lower`.
    pub fn kappa_bar(&self) -> f64 {
        self.alpha * self.beta_lower
    }
}

/// Elementwise-norm condition estimate for exponent `p >= 1`:
/// `alpha = (sum |a_ij|^p)^(1/p)` exactly, and `beta_lower` as the largest
/// ratio `||z||_q / ||A z||_p` over the canonical directions plus `probes`
/// random directions (`q` the dual exponent of `p`). Probe directions come
/// from a fixed internal stream so repeated calls agree exactly.
pub fn kappa_bar_p(a: &DenseMatrix, p: f64, probes: usize) -> Result<KappaBarEstimate> {
    if !(p >= 1.0) {
        return Err(Error::invalid_arg(format!("kappa_bar_p requires p >= 1, got {p}")));
    }
    let n = a.cols();
    if n == 0 || a.rows() == 0 {
        return Err(Error::invalid_arg("kappa_bar_p requires a nonempty matrix"));
    }
    let alpha = elementwise_p_norm(a.as_slice(), p);

    let q_norm = |z: &[f64]| -> f64 {
        if p == 1.0 {
            norm_inf(z)
        } else if p == 2.0 {
            norm2(z)
        } else {
            let q = p / (p - 1.0);
            z.iter().map(|v| v.abs().powf(q)).sum::<f64>().powf(1.0 / q)
        }
    };
    let p_norm = |z: &[f64]| -> f64 {
        if p == 1.0 {
            norm1(z)
        } else if p == 2.0 {
            norm2(z)
        } else {
            z.iter().map(|v| v.abs().powf(p)).sum::<f64>().powf(1.0 / p)
        }
    };

    let mut beta: f64 = 0.0;
    let mut probe = |z: &[f64]| {
        let az = a.matvec(z);
        let denom = p_norm(&az);
        let num = q_norm(z);
        if denom == 0.0 {
            if num > 0.0 {
                beta = f64::INFINITY;
            }
        } else {
            beta = beta.max(num / denom);
        }
    };

    let mut z = vec![0.0f64; n];
    for i in 0..n {
        z[i] = 1.0;
        probe(&z);
        z[i] = 0.0;
    }
    // Fixed internal stream: the signature carries no seed, and determinism
    // across calls matters more than probe variety here.
    let s = RandomStream::new(SeedSpec::new(0x6B61_7070_6121).derive(p.to_bits()));
    for t in 0..probes {
        let st = RandomStream::new(SeedSpec {
            master_seed: 0x6B61_7070_6121,
            stream_id: s.raw_at(t as u64),
        });
        for (i, zi) in z.iter_mut().enumerate() {
            *zi = st.normal_at(i as u64);
        }
        probe(&z);
    }

    Ok(KappaBarEstimate {
        alpha,
        beta_lower: beta,
        estimate: true,
    })
}

fn elementwise_p_norm(data: &[f64], p: f64) -> f64 {
    if p == 1.0 {
        return norm1(data);
    }
    if p == 2.0 {
        return norm2(data);
    }
    let max = data.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if max == 0.0 {
        return 0.0;
    }
    let sum: f64 = data.iter().map(|v| (v.abs() / max).powf(p)).sum();
    max * sum.powf(1.0 / p)
}
