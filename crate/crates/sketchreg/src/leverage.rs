//! Statistical leverage scores: exact values from an orthonormal basis, a
//! fast two-pass sketched approximation, and distribution-quality metrics
//! for comparing estimated sampling distributions against the truth.

use crate::error::{Error, Result};
use crate::linalg::gemm::gemm_acc;
use crate::linalg::qr::{householder_qr, qr_r_only};
use crate::linalg::solve::back_substitute;
use crate::linalg::svd::jacobi_svd;
use crate::matrix::DenseMatrix;
use crate::passio::{fold_blocks, CostLedger, MatrixSource};
use crate::randstream::{derive_stream, RandomStream, SeedSpec};
use crate::sketch::{SketchOperator, SketchVariant};

/// Stream-derivation offset for the second (row-norm estimation) projection,
/// far above any plausible sketch row index so the two projections never
/// share draws.
const PI2_STREAM_BASE: u64 = 1 << 40;

/// How a [`LeverageEstimate`] was produced.
#[derive(Debug, Clone, PartialEq)]
pub enum LeverageMethod {
    Exact,
    Approx {
        proj1_variant: SketchVariant,
        c1: usize,
        r2: usize,
    },
}

/// Per-row leverage scores with a guaranteed misestimation factor.
#[derive(Debug, Clone)]
pub struct LeverageEstimate {
    /// One score per row, each in `[0, 1]`.
    pub scores: Vec<f64>,
    /// Guaranteed underestimation factor in `(0, 1]`; 1 for the exact
    /// method, `(1 - gamma) / (1 + gamma)` for the approximation at
    /// requested distortion `gamma`.
    pub beta: f64,
    pub method: LeverageMethod,
}

impl LeverageEstimate {
    /// Scores normalized to a sampling distribution (sum 1).
    pub fn distribution(&self) -> Vec<f64> {
        let total: f64 = self.scores.iter().sum();
        if total <= 0.0 {
            return vec![0.0; self.scores.len()];
        }
        self.scores.iter().map(|s| s / total).collect()
    }
}

/// Exact leverage scores: squared row norms of an orthonormal basis for
/// `range(A)` (thin QR; SVD basis when A is rank deficient). `beta = 1`.
pub fn exact_leverage(a: &DenseMatrix) -> Result<LeverageEstimate> {
    if a.rows() < a.cols() {
        return Err(Error::dim(
            "exact_leverage",
            "rows >= cols".to_string(),
            format!("{}x{}", a.rows(), a.cols()),
        ));
    }
    let scores = match householder_qr(a) {
        Ok(f) => f.q.row_sq_norms(),
        Err(Error::RankDeficient { .. }) => jacobi_svd(a)?.u.row_sq_norms(),
        Err(e) => return Err(e),
    };
    Ok(LeverageEstimate {
        scores,
        beta: 1.0,
        method: LeverageMethod::Exact,
    })
}

/// Two-pass approximate leverage scores.
///
/// Pass 1 sketches A with `proj1` and takes the R factor of the sketch;
/// pass 2 estimates each squared row norm of `A R^{-1}` through a second
/// `n x r2` Gaussian projection scaled `r2^{-1/2}` (seeded from `proj1`'s
/// seed, so the whole estimate is a pure function of the operator). Scores
/// are clamped to `[0, 1]` — true leverage never exceeds 1. `gamma` is the
/// distortion ascribed to `proj1`; the guarantee factor is recorded as
/// `beta = (1 - gamma) / (1 + gamma)`.
pub fn approx_leverage(
    source: &MatrixSource,
    proj1: &SketchOperator,
    r2: usize,
    gamma: f64,
    block_rows: usize,
    ledger: &mut CostLedger,
) -> Result<LeverageEstimate> {
    match proj1.variant {
        SketchVariant::Gaussian
        | SketchVariant::Rademacher
        | SketchVariant::Srdht
        | SketchVariant::CountSketch => {}
        other => {
            return Err(Error::invalid_arg(format!(
                "approx_leverage needs an l2 sketch variant, got {other}"
            )))
        }
    }
    if r2 == 0 {
        return Err(Error::invalid_arg("approx_leverage needs r2 >= 1"));
    }
    if !(0.0..1.0).contains(&gamma) {
        return Err(Error::invalid_arg(format!(
            "approx_leverage needs gamma in [0, 1), got {gamma}"
        )));
    }
    let n = source.cols();

    // Pass 1: R from the sketched matrix; rank loss here signals that the
    // sketch dimension c1 is too small for this input.
    let pa = proj1.apply(source, block_rows, ledger)?;
    let r = qr_r_only(&pa)?;

    // T = R^{-1} * Pi2, assembled column by column.
    let mut t = DenseMatrix::zeros(n, r2);
    let inv_sqrt_r2 = 1.0 / (r2 as f64).sqrt();
    let mut col = vec![0.0f64; n];
    for j in 0..r2 {
        let st = RandomStream::new(derive_stream(proj1.seed, PI2_STREAM_BASE + j as u64));
        for (i, v) in col.iter_mut().enumerate() {
            *v = st.normal_at(i as u64) * inv_sqrt_r2;
        }
        let solved = back_substitute(&r, &col)?;
        for (i, v) in solved.iter().enumerate() {
            t.set(i, j, *v);
        }
    }

    // Pass 2: squared row norms of A * T.
    let mut scores = vec![0.0f64; source.rows()];
    let mut ybuf = vec![0.0f64; block_rows.min(source.rows()) * r2];
    fold_blocks(source, block_rows, ledger, &mut scores, |scores, blk| {
        let bw = blk.rows;
        let y = &mut ybuf[..bw * r2];
        y.fill(0.0);
        gemm_acc(bw, r2, n, 1.0, blk.data, n, t.as_slice(), r2, y, r2);
        for i in 0..bw {
            let row = &y[i * r2..(i + 1) * r2];
            let sq: f64 = row.iter().map(|v| v * v).sum();
            scores[blk.row_offset + i] = sq.min(1.0);
        }
        Ok(())
    })?;

    Ok(LeverageEstimate {
        scores,
        beta: (1.0 - gamma) / (1.0 + gamma),
        method: LeverageMethod::Approx {
            proj1_variant: proj1.variant,
            c1: proj1.s,
            r2,
        },
    })
}

/// Default second-projection dimension `ceil(8 ln m)`.
pub fn default_r2(m: usize) -> usize {
    (8.0 * (m.max(2) as f64).ln()).ceil() as usize
}

/// Default first-projection operator: CountSketch with `c1 = n^2 / 4`, or a
/// Gaussian at `c1 = 10 n` for small `n` where `n^2 / 4` would be the
/// smaller of the two.
pub fn default_proj1(m: usize, n: usize, seed: SeedSpec) -> Result<SketchOperator> {
    let cw_c1 = (n * n) / 4;
    if cw_c1 < 10 * n {
        SketchOperator::new(SketchVariant::Gaussian, 10 * n, m, seed)
    } else {
        SketchOperator::new(SketchVariant::CountSketch, cw_c1, m, seed)
    }
}

/// Quality of an estimated leverage distribution against the exact one.
/// Ratio extremes are reported separately over the high-leverage partition
/// `L = {i : exact score = 1}` and its complement `S`; a partition with no
/// rows yields `None`.
#[derive(Debug, Clone, Copy)]
pub struct LeverageQuality {
    /// `||p_hat - p*||_2 / ||p*||_2` over the normalized distributions.
    pub rel_l2: f64,
    /// `sum_i p*_i ln(p*_i / p_hat_i)` over rows with `p*_i > 0`.
    pub kl: f64,
    pub alpha_l: Option<f64>,
    pub alpha_s: Option<f64>,
    pub beta_l: Option<f64>,
    pub beta_s: Option<f64>,
}

/// Tolerance below 1 at which a raw exact score still counts as the
/// high-leverage partition.
const LEVERAGE_ONE_TOL: f64 = 1e-6;

/// Compare an estimated leverage distribution against the exact one.
pub fn leverage_quality(
    exact: &LeverageEstimate,
    approx: &LeverageEstimate,
) -> Result<LeverageQuality> {
    let m = exact.scores.len();
    if approx.scores.len() != m {
        return Err(Error::dim(
            "leverage_quality",
            format!("{m} scores"),
            format!("{}", approx.scores.len()),
        ));
    }
    if m == 0 {
        return Err(Error::invalid_arg("leverage_quality needs at least one row"));
    }
    let p_star = exact.distribution();
    let p_hat = approx.distribution();

    let mut num = 0.0f64;
    let mut den = 0.0f64;
    let mut kl = 0.0f64;
    for i in 0..m {
        let d = p_hat[i] - p_star[i];
        num += d * d;
        den += p_star[i] * p_star[i];
        if p_star[i] > 0.0 {
            kl += p_star[i] * (p_star[i] / p_hat[i]).ln();
        }
    }
    let rel_l2 = num.sqrt() / den.sqrt();

    let mut alpha_l: Option<f64> = None;
    let mut alpha_s: Option<f64> = None;
    let mut beta_l: Option<f64> = None;
    let mut beta_s: Option<f64> = None;
    for i in 0..m {
        if p_star[i] <= 0.0 {
            continue;
        }
        let ratio = p_hat[i] / p_star[i];
        let big = exact.scores[i] >= 1.0 - LEVERAGE_ONE_TOL;
        let (alpha, beta) = if big {
            (&mut alpha_l, &mut beta_l)
        } else {
            (&mut alpha_s, &mut beta_s)
        };
        *alpha = Some(alpha.map_or(ratio, |a: f64| a.max(ratio)));
        *beta = Some(beta.map_or(ratio, |b: f64| b.min(ratio)));
    }

    Ok(LeverageQuality {
        rel_l2,
        kl,
        alpha_l,
        alpha_s,
        beta_l,
        beta_s,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::gemm::matmul;
    use crate::matrixgen::{generate, Family};

    fn fill(rows: usize, cols: usize, salt: u64) -> DenseMatrix {
        let st = RandomStream::new(SeedSpec::new(0x1EAF).derive(salt));
        DenseMatrix::from_fn(rows, cols, |i, j| st.normal_at((i * cols + j) as u64))
    }

    #[test]
    fn identity_has_unit_scores() {
        let est = exact_leverage(&DenseMatrix::identity(3)).unwrap();
        assert_eq!(est.scores, vec![1.0, 1.0, 1.0]);
        assert_eq!(est.beta, 1.0);
        assert_eq!(est.method, LeverageMethod::Exact);
    }

    #[test]
    fn basis_rows_and_zero_row() {
        let mut a = DenseMatrix::zeros(3, 2);
        a.set(0, 0, 1.0);
        a.set(1, 1, 1.0);
        let est = exact_leverage(&a).unwrap();
        assert!((est.scores[0] - 1.0).abs() < 1e-14);
        assert!((est.scores[1] - 1.0).abs() < 1e-14);
        assert!(est.scores[2].abs() < 1e-14);
    }

    #[test]
    fn rejects_wide_input() {
        let a = fill(3, 5, 0);
        assert!(exact_leverage(&a).is_err());
    }

    #[test]
    fn nonuniform_instance_has_unit_tail_scores() {
        let inst = generate(Family::NonuniformBad, 1000, 20, 7).unwrap();
        let est = exact_leverage(&inst.a).unwrap();
        for i in 990..1000 {
            assert!(
                (est.scores[i] - 1.0).abs() <= 1e-10,
                "row {i}: {}",
                est.scores[i]
            );
        }
    }

    #[test]
    fn scores_sum_to_rank_and_stay_in_range() {
        let a = fill(200, 17, 3);
        let est = exact_leverage(&a).unwrap();
        let sum: f64 = est.scores.iter().sum();
        assert!((sum - 17.0).abs() <= 0.02 * 17.0, "sum {sum}");
        for &s in &est.scores {
            assert!((0.0..=1.0 + 1e-8).contains(&s));
        }

        // Rank-deficient input goes through the SVD basis: the sum tracks
        // the numerical rank, not the column count.
        let base = fill(60, 5, 4);
        let mut dup = DenseMatrix::zeros(60, 6);
        for i in 0..60 {
            for j in 0..5 {
                dup.set(i, j, base.get(i, j));
            }
            dup.set(i, 5, base.get(i, 2) - base.get(i, 4));
        }
        let est = exact_leverage(&dup).unwrap();
        let sum: f64 = est.scores.iter().sum();
        assert!((sum - 5.0).abs() <= 0.02 * 5.0, "rank-deficient sum {sum}");
    }

    #[test]
    fn exact_scores_invariant_under_right_multiplication() {
        let a = fill(120, 9, 5);
        // Well-conditioned random transform.
        let mut t = fill(9, 9, 6);
        for i in 0..9 {
            t.set(i, i, t.get(i, i) + 4.0);
        }
        let at = matmul(&a, &t);
        let ea = exact_leverage(&a).unwrap();
        let eat = exact_leverage(&at).unwrap();
        for (x, y) in ea.scores.iter().zip(&eat.scores) {
            assert!((x - y).abs() <= 1e-8, "{x} vs {y}");
        }
    }

    #[test]
    fn approx_validates_arguments() {
        let seed = SeedSpec::new(1);
        let src = MatrixSource::from(fill(50, 4, 7));
        let mut ledger = CostLedger::new();
        let cauchy = SketchOperator::new(SketchVariant::Cauchy { scale_c: 1.0 }, 20, 50, seed).unwrap();
        assert!(approx_leverage(&src, &cauchy, 8, 0.5, 16, &mut ledger).is_err());
        let ok = SketchOperator::new(SketchVariant::Gaussian, 20, 50, seed).unwrap();
        assert!(approx_leverage(&src, &ok, 0, 0.5, 16, &mut ledger).is_err());
        assert!(approx_leverage(&src, &ok, 8, 1.0, 16, &mut ledger).is_err());
    }

    #[test]
    fn approx_takes_two_passes_and_records_beta() {
        let m = 300;
        let src = MatrixSource::from(fill(m, 6, 8));
        let proj1 = SketchOperator::new(SketchVariant::Gaussian, 60, m, SeedSpec::new(3)).unwrap();
        let mut ledger = CostLedger::new();
        let est = approx_leverage(&src, &proj1, 32, 0.5, 64, &mut ledger).unwrap();
        assert_eq!(ledger.passes, 2);
        assert!((est.beta - (0.5 / 1.5)).abs() < 1e-15);
        assert_eq!(
            est.method,
            LeverageMethod::Approx {
                proj1_variant: SketchVariant::Gaussian,
                c1: 60,
                r2: 32
            }
        );
        assert_eq!(est.scores.len(), m);
        for &s in &est.scores {
            assert!((0.0..=1.0).contains(&s));
        }
    }

    #[test]
    fn approx_tracks_exact_on_orthonormal_input() {
        // Gaussian c1 = 400, r2 = 64 on an orthonormal 2000 x 10 basis.
        // Estimator noise is chi-square with r2 degrees of freedom
        // (std ~ sqrt(2/r2) = 18%), so a +-30% band catches ~91% of rows in
        // expectation; assert the corrected fraction >= 88% at this seed.
        let (m, n) = (2000, 10);
        let q = householder_qr(&fill(m, n, 11)).unwrap().q;
        let exact = exact_leverage(&q).unwrap();
        let src = MatrixSource::from(q);
        let proj1 = SketchOperator::new(SketchVariant::Gaussian, 400, m, SeedSpec::new(21)).unwrap();
        let mut ledger = CostLedger::new();
        let est = approx_leverage(&src, &proj1, 64, 0.5, 512, &mut ledger).unwrap();
        let mut within = 0usize;
        for (e, a) in exact.scores.iter().zip(&est.scores) {
            if (a / e - 1.0).abs() <= 0.3 {
                within += 1;
            }
        }
        let frac = within as f64 / m as f64;
        assert!(frac >= 0.88, "only {frac:.3} of rows within 30%");
    }

    #[test]
    fn undersized_countsketch_fails_on_coherent_input() {
        // 2n CountSketch buckets cannot reliably preserve 10 rows of
        // leverage 1: heavy rows collide, so the sketch either loses rank
        // outright or yields a visibly degraded distribution. Contrast with
        // a healthy Gaussian at the same second-stage size, which stays
        // well under the degradation threshold on every seed tried.
        let inst = generate(Family::NonuniformBad, 1000, 20, 9).unwrap();
        let exact = exact_leverage(&inst.a).unwrap();
        let src = MatrixSource::from(inst.a);
        let seeds = [2u64, 5, 9, 13, 21, 34, 55, 89];
        let run = |variant, c1, seed| -> Result<f64> {
            let proj1 = SketchOperator::new(variant, c1, 1000, SeedSpec::new(seed))?;
            let mut ledger = CostLedger::new();
            let est = approx_leverage(&src, &proj1, 64, 0.5, 256, &mut ledger)?;
            Ok(leverage_quality(&exact, &est)?.rel_l2)
        };
        let mut undersized_bad = 0usize;
        for &seed in &seeds {
            match run(SketchVariant::CountSketch, 40, seed) {
                Err(Error::RankDeficient { .. }) => undersized_bad += 1,
                Err(e) => panic!("unexpected error {e:?}"),
                Ok(rel) if rel > 0.25 => undersized_bad += 1,
                Ok(_) => {}
            }
        }
        assert!(
            undersized_bad >= 6,
            "undersized sketch degraded on only {undersized_bad}/8 seeds"
        );
        for &seed in &seeds {
            let rel = run(SketchVariant::Gaussian, 200, seed).unwrap();
            assert!(rel <= 0.25, "healthy baseline degraded: {rel} at seed {seed}");
        }
    }

    #[test]
    fn quality_of_identical_estimates_is_trivial() {
        let a = fill(100, 8, 12);
        let e = exact_leverage(&a).unwrap();
        let q = leverage_quality(&e, &e).unwrap();
        assert_eq!(q.rel_l2, 0.0);
        assert_eq!(q.kl, 0.0);
        // Random Gaussian rows never hit leverage exactly 1.
        assert!(q.alpha_l.is_none() && q.beta_l.is_none());
        assert_eq!(q.alpha_s, Some(1.0));
        assert_eq!(q.beta_s, Some(1.0));
    }

    #[test]
    fn kl_matches_direct_formula_against_uniform() {
        let inst = generate(Family::NonuniformBad, 1000, 20, 13).unwrap();
        let exact = exact_leverage(&inst.a).unwrap();
        let uniform = LeverageEstimate {
            scores: vec![0.5; 1000],
            beta: 1.0,
            method: LeverageMethod::Exact,
        };
        let q = leverage_quality(&exact, &uniform).unwrap();
        // Oracle: direct evaluation over the two normalized distributions.
        let p = exact.distribution();
        let want: f64 = p
            .iter()
            .filter(|&&pi| pi > 0.0)
            .map(|&pi| pi * (pi / (1.0 / 1000.0)).ln())
            .sum();
        assert!((q.kl - want).abs() <= 1e-12 * want.abs().max(1.0), "{} vs {want}", q.kl);
        assert!(q.kl > 0.0);
    }

    #[test]
    fn ratio_partitions_on_coherent_instance() {
        // Large-scale check of the ratio extremes under a healthy Gaussian
        // first projection at c1 = 10 n and an enlarged r2.
        let (m, n) = (50_000, 100);
        let inst = generate(Family::NonuniformBad, m, n, 17).unwrap();
        let exact = exact_leverage(&inst.a).unwrap();
        let src = MatrixSource::from(inst.a);
        let proj1 =
            SketchOperator::new(SketchVariant::Gaussian, 10 * n, m, SeedSpec::new(33)).unwrap();
        let mut ledger = CostLedger::new();
        let est = approx_leverage(&src, &proj1, 3072, 0.5, 8192, &mut ledger).unwrap();
        let q = leverage_quality(&exact, &est).unwrap();
        assert!(q.rel_l2 <= 0.1, "rel_l2 {}", q.rel_l2);
        let (al, bl) = (q.alpha_l.unwrap(), q.beta_l.unwrap());
        assert!((0.85..=1.15).contains(&al), "alpha_L {al}");
        assert!((0.85..=1.15).contains(&bl), "beta_L {bl}");
    }

    #[test]
    fn default_parameters() {
        assert_eq!(default_r2(50_000), (8.0 * (50_000f64).ln()).ceil() as usize);
        let p = default_proj1(1000, 100, SeedSpec::new(1)).unwrap();
        assert_eq!(p.variant, SketchVariant::CountSketch);
        assert_eq!(p.s, 2500);
        let p = default_proj1(1000, 20, SeedSpec::new(1)).unwrap();
        assert_eq!(p.variant, SketchVariant::Gaussian);
        assert_eq!(p.s, 200);
    }
}
