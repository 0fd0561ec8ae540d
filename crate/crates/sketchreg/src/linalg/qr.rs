//! Blocked Householder QR with compact WY block reflectors.
//!
//! The factorization processes panels of `NB` columns with level-2 updates,
//! then applies each panel's block reflector `I - V T V^T` to the trailing
//! submatrix through GEMM, so throughput tracks the matrix-multiply kernel.
//! `R` is normalized to a non-negative diagonal.

use crate::error::{Error, Result};
use crate::linalg::gemm::{gemm_acc, gemm_acc_tn};
use crate::linalg::simdops;
use crate::matrix::DenseMatrix;

/// Panel width for the blocked factorization.
const NB: usize = 32;

/// Relative diagonal threshold below which a matrix is declared
/// numerically rank deficient.
pub const RANK_DEFICIENCY_THRESHOLD: f64 = 1e-12;

/// Thin QR factors of a tall matrix: `a = q * r` with `q` of size `m x n`
/// having orthonormal columns and `r` upper triangular `n x n` with
/// non-negative diagonal.
#[derive(Debug, Clone)]
pub struct QrFactors {
    pub q: DenseMatrix,
    pub r: DenseMatrix,
}

struct FactorCore {
    /// R in the upper triangle, Householder vectors below the diagonal.
    fac: DenseMatrix,
    /// Per-panel `(start column, V^T panel, T matrix)` for forming Q. The
    /// unit-lower-trapezoidal V is stored transposed (`w x m_rem`, one
    /// contiguous row per Householder vector).
    blocks: Vec<(usize, DenseMatrix, DenseMatrix)>,
}

/// Full thin QR. Errors with [`Error::RankDeficient`] when
/// `min |r_ii| < 1e-12 * max |r_ii|`.
pub fn householder_qr(a: &DenseMatrix) -> Result<QrFactors> {
    let (q, r) = qr_factor_unchecked(a)?;
    check_rank(&r, "householder_qr")?;
    Ok(QrFactors { q, r })
}

/// R factor only (skips forming Q — roughly half the flops). Same rank check
/// and sign convention as [`householder_qr`].
pub fn qr_r_only(a: &DenseMatrix) -> Result<DenseMatrix> {
    let mut core = factor(a, false)?;
    let mut r = extract_r(&core.fac);
    core.blocks.clear();
    fix_signs_r(&mut r);
    check_rank(&r, "qr_r_only")?;
    Ok(r)
}

/// Thin QR without the rank-deficiency check (the SVD pre-step must be able
/// to factor singular inputs).
pub(crate) fn qr_factor_unchecked(a: &DenseMatrix) -> Result<(DenseMatrix, DenseMatrix)> {
    let core = factor(a, true)?;
    let mut q = form_q(a.rows(), a.cols(), &core);
    let mut r = extract_r(&core.fac);
    fix_signs(&mut q, &mut r);
    Ok((q, r))
}

/// R factor without the rank check or the sign normalization — for
/// singular-value computations, which must accept singular inputs and are
/// invariant under row sign flips.
pub(crate) fn r_only_unchecked(a: &DenseMatrix) -> Result<DenseMatrix> {
    let core = factor(a, false)?;
    Ok(extract_r(&core.fac))
}

fn check_rank(r: &DenseMatrix, context: &'static str) -> Result<()> {
    let n = r.cols();
    let mut min_d = f64::INFINITY;
    let mut max_d = 0.0f64;
    for i in 0..n {
        let d = r.get(i, i).abs();
        min_d = min_d.min(d);
        max_d = max_d.max(d);
    }
    let ratio = if max_d > 0.0 { min_d / max_d } else { 0.0 };
    if max_d == 0.0 || ratio < RANK_DEFICIENCY_THRESHOLD {
        return Err(Error::RankDeficient { context, ratio });
    }
    Ok(())
}

fn extract_r(fac: &DenseMatrix) -> DenseMatrix {
    let n = fac.cols();
    let mut r = DenseMatrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            r.set(i, j, fac.get(i, j));
        }
    }
    r
}

/// Flip signs so every diagonal entry of R is non-negative; Q columns flip
/// accordingly, preserving `q * r`.
fn fix_signs(q: &mut DenseMatrix, r: &mut DenseMatrix) {
    let n = r.cols();
    for i in 0..n {
        if r.get(i, i) < 0.0 {
            for j in i..n {
                r.set(i, j, -r.get(i, j));
            }
            for row in 0..q.rows() {
                q.set(row, i, -q.get(row, i));
            }
        }
    }
}

fn fix_signs_r(r: &mut DenseMatrix) {
    let n = r.cols();
    for i in 0..n {
        if r.get(i, i) < 0.0 {
            for j in i..n {
                r.set(i, j, -r.get(i, j));
            }
        }
    }
}

fn factor(a: &DenseMatrix, keep_blocks: bool) -> Result<FactorCore> {
    let (m, n) = (a.rows(), a.cols());
    if m < n {
        return Err(Error::dim(
            "householder_qr",
            format!("rows >= cols, {m}x{n} given"),
            "a wide matrix".to_string(),
        ));
    }
    let mut fac = a.clone();
    let mut blocks = Vec::new();

    let ld = n;
    let buf = fac.as_mut_slice();
    let mut col0 = 0;
    while col0 < n {
        let w = (n - col0).min(NB);
        let m_rem = m - col0;
        let colend = col0 + w;

        // Copy the panel into transposed scratch: row jj of `vt` holds
        // column col0+jj over rows col0..m, so every level-2 pass below
        // streams contiguous memory instead of striding by the row length.
        let mut vt = DenseMatrix::zeros(w, m_rem);
        {
            let vbuf = vt.as_mut_slice();
            for r in 0..m_rem {
                let src = &buf[(col0 + r) * ld + col0..(col0 + r) * ld + colend];
                for (jj, &x) in src.iter().enumerate() {
                    vbuf[jj * m_rem + r] = x;
                }
            }
        }

        // Level-2 panel factorization on contiguous rows.
        let mut taus = [0.0f64; NB];
        {
            let vbuf = vt.as_mut_slice();
            for jj in 0..w {
                let (head, tail) = vbuf.split_at_mut((jj + 1) * m_rem);
                let tau = house_gen(&mut head[jj * m_rem..], jj);
                taus[jj] = tau;
                if tau == 0.0 {
                    continue;
                }
                let vj = &head[jj * m_rem..];
                for vc in tail.chunks_exact_mut(m_rem) {
                    house_apply(vj, vc, jj, tau);
                }
            }
        }

        // Write the factored panel back (R entries on and above the
        // diagonal, scaled Householder tails below), then overwrite the
        // scratch in place with the unit-lower-trapezoidal V, still
        // transposed.
        {
            let vbuf = vt.as_mut_slice();
            for r in 0..m_rem {
                let dst = &mut buf[(col0 + r) * ld + col0..(col0 + r) * ld + colend];
                for (jj, d) in dst.iter_mut().enumerate() {
                    *d = vbuf[jj * m_rem + r];
                }
            }
            for jj in 0..w {
                let row = &mut vbuf[jj * m_rem..(jj + 1) * m_rem];
                row[..jj].fill(0.0);
                row[jj] = 1.0;
            }
        }

        // Build T: the block reflector is H_1..H_w = I - V T V^T.
        let mut t = DenseMatrix::zeros(w, w);
        {
            let vbuf = vt.as_slice();
            for jj in 0..w {
                t.set(jj, jj, taus[jj]);
                if jj > 0 && taus[jj] != 0.0 {
                    // z = V[:, 0..jj]^T v_jj over rows jj.. (v_jj is zero
                    // above its unit head).
                    let vjj = &vbuf[jj * m_rem + jj..(jj + 1) * m_rem];
                    let mut z = vec![0.0f64; jj];
                    for (i, zi) in z.iter_mut().enumerate() {
                        *zi = simdops::dot(&vbuf[i * m_rem + jj..(i + 1) * m_rem], vjj);
                    }
                    // T[0..jj, jj] = -tau * T[0..jj, 0..jj] * z
                    for i in 0..jj {
                        let mut s = 0.0;
                        for k in i..jj {
                            s += t.get(i, k) * z[k];
                        }
                        t.set(i, jj, -taus[jj] * s);
                    }
                }
            }
        }

        // Trailing update: A_trail -= V * (T^T * (V^T * A_trail)).
        if colend < n {
            let n_trail = n - colend;
            let mut wbuf = vec![0.0f64; w * n_trail];
            // V^T is exactly the stored vt panel.
            gemm_acc(
                w,
                n_trail,
                m_rem,
                1.0,
                vt.as_slice(),
                m_rem,
                &buf[col0 * ld + colend..],
                ld,
                &mut wbuf,
                n_trail,
            );
            // wbuf := T^T * wbuf (T upper triangular), computed top-down in
            // place: row i of the result only reads rows <= i.
            for i in (0..w).rev() {
                let tii = t.get(i, i);
                for v in &mut wbuf[i * n_trail..(i + 1) * n_trail] {
                    *v *= tii;
                }
                for j in 0..i {
                    let tji = t.get(j, i);
                    if tji != 0.0 {
                        let (lo, hi) = wbuf.split_at_mut(i * n_trail);
                        let src = &lo[j * n_trail..(j + 1) * n_trail];
                        for (d, s) in hi[..n_trail].iter_mut().zip(src) {
                            *d += tji * s;
                        }
                    }
                }
            }
            // V itself is vt transposed, which the packing reads in place.
            gemm_acc_tn(
                m_rem,
                n_trail,
                w,
                -1.0,
                vt.as_slice(),
                m_rem,
                &wbuf,
                n_trail,
                &mut buf[col0 * ld + colend..],
                ld,
            );
        }

        if keep_blocks {
            blocks.push((col0, vt, t));
        }
        col0 += w;
    }

    Ok(FactorCore { fac, blocks })
}

/// Generate the Householder reflector for a contiguous column whose diagonal
/// entry sits at `col[jj]`; on return `col[jj]` holds the transformed
/// diagonal (beta) and the scaled vector tail follows it. Returns tau.
fn house_gen(col: &mut [f64], jj: usize) -> f64 {
    let alpha = col[jj];
    let tail = &mut col[jj + 1..];
    let mut xmax = 0.0f64;
    for &x in tail.iter() {
        xmax = xmax.max(x.abs());
    }
    if xmax == 0.0 {
        return 0.0; // already upper triangular in this column
    }
    let inv = 1.0 / xmax;
    let mut xnorm_sq = 0.0f64;
    for &x in tail.iter() {
        let t = x * inv;
        xnorm_sq += t * t;
    }
    let xnorm = xmax * xnorm_sq.sqrt();
    let norm = {
        // hypot(alpha, xnorm) without overflow
        let a = alpha.abs().max(xnorm);
        let b = alpha.abs().min(xnorm);
        if a == 0.0 {
            0.0
        } else {
            let q = b / a;
            a * (1.0 + q * q).sqrt()
        }
    };
    let beta = if alpha >= 0.0 { -norm } else { norm };
    let tau = (beta - alpha) / beta;
    let scale = 1.0 / (alpha - beta);
    for x in tail.iter_mut() {
        *x *= scale;
    }
    col[jj] = beta;
    tau
}

/// Apply `H = I - tau v v^T` to the contiguous column `vc` over entries
/// `jj..`; `v` has an implicit unit head at `jj` and its scaled tail stored
/// in `vj[jj + 1..]`.
fn house_apply(vj: &[f64], vc: &mut [f64], jj: usize, tau: f64) {
    let wsum = vc[jj] + simdops::dot(&vj[jj + 1..], &vc[jj + 1..]);
    let tw = tau * wsum;
    vc[jj] -= tw;
    simdops::axpy(-tw, &vj[jj + 1..], &mut vc[jj + 1..]);
}

/// Form the thin Q by applying block reflectors to the thin identity in
/// reverse panel order.
fn form_q(m: usize, n: usize, core: &FactorCore) -> DenseMatrix {
    let mut q = DenseMatrix::zeros(m, n);
    for i in 0..n {
        q.set(i, i, 1.0);
    }
    let ld = n;
    for (col0, vt, t) in core.blocks.iter().rev() {
        let col0 = *col0;
        let m_rem = m - col0;
        let w = vt.rows();
        let mut wbuf = vec![0.0f64; w * n];
        let qbuf = q.as_mut_slice();
        gemm_acc(
            w,
            n,
            m_rem,
            1.0,
            vt.as_slice(),
            m_rem,
            &qbuf[col0 * ld..],
            ld,
            &mut wbuf,
            n,
        );
        // wbuf := T * wbuf (upper triangular): row i only reads rows >= i,
        // so ascending order is safe in place.
        for i in 0..w {
            let tii = t.get(i, i);
            for v in &mut wbuf[i * n..(i + 1) * n] {
                *v *= tii;
            }
            for j in (i + 1)..w {
                let tij = t.get(i, j);
                if tij != 0.0 {
                    let (lo, hi) = wbuf.split_at_mut(j * n);
                    let dst = &mut lo[i * n..(i + 1) * n];
                    for (d, s) in dst.iter_mut().zip(&hi[..n]) {
                        *d += tij * s;
                    }
                }
            }
        }
        gemm_acc_tn(
            m_rem,
            n,
            w,
            -1.0,
            vt.as_slice(),
            m_rem,
            &wbuf,
            n,
            &mut qbuf[col0 * ld..],
            ld,
        );
    }
    q
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::gemm::{gram, matmul};

    fn fill(rows: usize, cols: usize, seed: u64) -> DenseMatrix {
        let mut s = seed.wrapping_mul(0x9E3779B97F4A7C15) | 1;
        DenseMatrix::from_fn(rows, cols, |_, _| {
            s ^= s << 13;
            s ^= s >> 7;
            s ^= s << 17;
            (s >> 11) as f64 / (1u64 << 53) as f64 - 0.5
        })
    }

    fn check_factors(a: &DenseMatrix, f: &QrFactors, tol: f64) {
        // Reconstruction.
        let qr = matmul(&f.q, &f.r);
        let mut err: f64 = 0.0;
        for (x, y) in qr.as_slice().iter().zip(a.as_slice()) {
            err = err.max((x - y).abs());
        }
        let scale = a.frobenius_norm().max(1.0);
        assert!(err <= tol * scale, "reconstruction error {err:.3e}");
        // Orthonormal columns.
        let g = gram(&f.q);
        let n = g.cols();
        for i in 0..n {
            for j in 0..n {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!(
                    (g.get(i, j) - want).abs() < tol * (n as f64).sqrt(),
                    "Q^T Q deviates at ({i},{j}): {}",
                    g.get(i, j)
                );
            }
        }
        // Upper triangular with non-negative diagonal.
        for i in 0..n {
            assert!(f.r.get(i, i) >= 0.0, "negative diagonal at {i}");
            for j in 0..i {
                assert_eq!(f.r.get(i, j), 0.0, "below-diagonal nonzero at ({i},{j})");
            }
        }
    }

    #[test]
    fn factors_tall_matrices() {
        // Spans: single panel (n < 32), multiple panels, square, ragged edges.
        for &(m, n) in &[(10usize, 4usize), (64, 32), (100, 33), (200, 65), (50, 50), (37, 31)] {
            let a = fill(m, n, (m * 1000 + n) as u64);
            let f = householder_qr(&a).unwrap();
            check_factors(&a, &f, 1e-13);
        }
    }

    #[test]
    fn r_only_matches_full_path() {
        let a = fill(120, 70, 5);
        let f = householder_qr(&a).unwrap();
        let r = qr_r_only(&a).unwrap();
        // Same factorization core, so the result is bitwise identical.
        assert_eq!(f.r.as_slice(), r.as_slice());
    }

    #[test]
    fn detects_rank_deficiency() {
        // Duplicate column => exactly rank deficient.
        let base = fill(40, 5, 9);
        let mut a = DenseMatrix::zeros(40, 6);
        for i in 0..40 {
            for j in 0..5 {
                a.set(i, j, base.get(i, j));
            }
            a.set(i, 5, 2.0 * base.get(i, 2));
        }
        match householder_qr(&a) {
            Err(Error::RankDeficient { ratio, .. }) => {
                assert!(ratio < RANK_DEFICIENCY_THRESHOLD);
            }
            other => panic!("expected RankDeficient, got {other:?}"),
        }
        assert!(matches!(qr_r_only(&a), Err(Error::RankDeficient { .. })));
    }

    #[test]
    fn rejects_wide_input() {
        let a = fill(3, 5, 1);
        assert!(matches!(
            householder_qr(&a),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn unchecked_path_factors_singular_input() {
        let mut a = DenseMatrix::zeros(30, 4);
        let base = fill(30, 2, 3);
        for i in 0..30 {
            a.set(i, 0, base.get(i, 0));
            a.set(i, 1, base.get(i, 1));
            a.set(i, 2, base.get(i, 0) + base.get(i, 1));
            a.set(i, 3, base.get(i, 0) - base.get(i, 1));
        }
        let (q, r) = qr_factor_unchecked(&a).unwrap();
        let qr = matmul(&q, &r);
        for (x, y) in qr.as_slice().iter().zip(a.as_slice()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn orthonormal_input_gives_identity_r() {
        let a = fill(80, 10, 7);
        let f = householder_qr(&a).unwrap();
        let f2 = householder_qr(&f.q).unwrap();
        for i in 0..10 {
            for j in 0..10 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((f2.r.get(i, j) - want).abs() < 1e-13);
            }
        }
    }
}
