//! Least-squares solvers: one-shot sketch-and-solve, leverage-score row
//! sampling, preconditioned LSQR, the Chebyshev semi-iterative method, and
//! the full randomized-preconditioning pipeline that composes them.

use std::time::Instant;

use crate::error::{Error, Result};
use crate::leverage::LeverageEstimate;
use crate::linalg::simdops;
use crate::linalg::solve::min_length_solve;
use crate::matrix::DenseMatrix;
use crate::matrixgen::ProblemInstance;
use crate::passio::{fold_blocks, CostLedger, MatrixSource};
use crate::precond::{lsrn_precond, Preconditioner};
use crate::randstream::{RandomStream, SeedSpec};
use crate::sketch::SketchOperator;

/// How rows are drawn when sampling a subproblem.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SamplingMode {
    /// Row `i` kept independently with probability `min(1, s * p_i)`,
    /// rescaled by the inverse root of that probability.
    Bernoulli,
    /// Exactly `s` categorical draws from `{p_i}`, each rescaled by
    /// `1/sqrt(s * p_i)`.
    WithReplacement,
}

/// Which iterative method the full pipeline drives.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IterativeKind {
    Lsqr,
    Cs,
}

/// Knobs shared by the l2 solvers.
#[derive(Debug, Clone)]
pub struct SolverConfig {
    /// Target relative error of sketch-and-solve style methods.
    pub eps: f64,
    /// Failure-probability budget paired with `eps`.
    pub delta: f64,
    /// Embedding dimension; `None` asks for the variant default.
    pub s: Option<usize>,
    pub sampling_mode: SamplingMode,
    pub max_iters: usize,
    /// Iterative stopping tolerance on the relative normal-equations
    /// residual.
    pub tol: f64,
    /// Oversampling factor for the SVD-type preconditioner pipeline.
    pub gamma_oversample: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            eps: 0.5,
            delta: 0.1,
            s: None,
            sampling_mode: SamplingMode::Bernoulli,
            max_iters: 500,
            tol: 1e-14,
            gamma_oversample: 2.0,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eps > 0.0 && self.eps < 1.0) {
            return Err(Error::invalid_arg(format!(
                "eps must lie in (0, 1), got {}",
                self.eps
            )));
        }
        if !(self.tol > 0.0) {
            return Err(Error::invalid_arg(format!(
                "tol must be positive, got {}",
                self.tol
            )));
        }
        Ok(())
    }
}

/// Outcome of one solver invocation.
#[derive(Debug, Clone)]
pub struct SolveReport {
    pub x_hat: Vec<f64>,
    /// Objective value: exact for direct methods, the solver's internal
    /// residual estimate for iterative ones.
    pub f_hat: f64,
    /// `|f_hat - f*| / f*` when the instance records a true optimum.
    pub rel_err_f: Option<f64>,
    /// `||x_hat - x*|| / ||x*||` when the instance records a true solution.
    pub rel_err_x: Option<f64>,
    pub iterations: usize,
    /// Per-iteration residual measure (preconditioned-system residual
    /// estimate for LSQR, normal-equations residual for CS).
    pub residual_history: Vec<f64>,
    /// Snapshot of the cost counters accumulated by this solve.
    pub ledger: CostLedger,
    pub wall_ms: f64,
    pub converged: bool,
    /// Condition-number bound recorded by the preconditioning pipeline.
    pub kappa_predicted: Option<f64>,
}

impl SolveReport {
    fn attach_truth(&mut self, inst: &ProblemInstance) {
        if let Some(f_star) = inst.f_star {
            if f_star > 0.0 {
                self.rel_err_f = Some((self.f_hat - f_star).abs() / f_star);
            }
        }
        if let Some(x_star) = &inst.x_star {
            let den = norm2(x_star);
            if den > 0.0 {
                let num: f64 = self
                    .x_hat
                    .iter()
                    .zip(x_star)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt();
                self.rel_err_x = Some(num / den);
            }
        }
    }
}

/// A row-sampled least-squares subproblem with rescaled rows.
#[derive(Debug, Clone)]
pub struct SampledProblem {
    pub a: DenseMatrix,
    pub b: Vec<f64>,
    /// Original row index of each sampled row, in emission order.
    pub kept_rows: Vec<usize>,
    /// Expected number of kept rows (`sum q_i` for Bernoulli, `s` for
    /// with-replacement).
    pub expected_rows: f64,
}

fn norm2(v: &[f64]) -> f64 {
    simdops::dot(v, v).sqrt()
}

/// `A x` over a streamed source; records one pass.
pub fn matvec_stream(
    source: &MatrixSource,
    x: &[f64],
    block_rows: usize,
    ledger: &mut CostLedger,
) -> Result<Vec<f64>> {
    let n = source.cols();
    if x.len() != n {
        return Err(Error::dim("matvec_stream", format!("{n}"), format!("{}", x.len())));
    }
    let mut y = vec![0.0f64; source.rows()];
    fold_blocks(source, block_rows, ledger, &mut y, |y, blk| {
        for i in 0..blk.rows {
            y[blk.row_offset + i] = simdops::dot(&blk.data[i * n..(i + 1) * n], x);
        }
        Ok(())
    })?;
    Ok(y)
}

/// `A^T u` over a streamed source; records one pass.
pub fn matvec_transpose_stream(
    source: &MatrixSource,
    u: &[f64],
    block_rows: usize,
    ledger: &mut CostLedger,
) -> Result<Vec<f64>> {
    let n = source.cols();
    if u.len() != source.rows() {
        return Err(Error::dim(
            "matvec_transpose_stream",
            format!("{}", source.rows()),
            format!("{}", u.len()),
        ));
    }
    let mut y = vec![0.0f64; n];
    fold_blocks(source, block_rows, ledger, &mut y, |y, blk| {
        for i in 0..blk.rows {
            simdops::axpy(u[blk.row_offset + i], &blk.data[i * n..(i + 1) * n], y);
        }
        Ok(())
    })?;
    Ok(y)
}

/// Sketch `[A b]` jointly with one operator application and solve the small
/// problem exactly.
///
/// The reported objective is the true residual norm of the returned point,
/// so quality metrics refer to the original problem.
pub fn sketch_and_solve_l2(
    inst: &ProblemInstance,
    op: &SketchOperator,
    cfg: &SolverConfig,
    block_rows: usize,
    ledger: &mut CostLedger,
) -> Result<SolveReport> {
    cfg.validate()?;
    let (m, n) = (inst.rows(), inst.cols());
    if op.m != m {
        return Err(Error::dim("sketch_and_solve_l2", format!("{m} rows"), format!("{}", op.m)));
    }
    let clock = Instant::now();
    let start = ledger.clone();

    // One joint source so a single pass covers both A and b.
    let mut joint = DenseMatrix::zeros(m, n + 1);
    for i in 0..m {
        let src_row = &inst.a.as_slice()[i * n..(i + 1) * n];
        let dst = joint.as_mut_slice();
        dst[i * (n + 1)..i * (n + 1) + n].copy_from_slice(src_row);
        dst[i * (n + 1) + n] = inst.b[i];
    }
    let sk = op.apply(&MatrixSource::from(joint), block_rows, ledger)?;

    let s = sk.rows();
    let mut sa = DenseMatrix::zeros(s, n);
    let mut sb = vec![0.0f64; s];
    for i in 0..s {
        for j in 0..n {
            sa.set(i, j, sk.get(i, j));
        }
        sb[i] = sk.get(i, n);
    }
    let x_hat = min_length_solve(&sa, &sb).map_err(|e| match e {
        Error::RankDeficient { ratio, .. } => Error::RankDeficient {
            context: "sketch_and_solve_l2 (sketch lost rank; increase the sketch size s)",
            ratio,
        },
        other => other,
    })?;

    let f_hat = inst.objective(&x_hat);
    let mut report = SolveReport {
        x_hat,
        f_hat,
        rel_err_f: None,
        rel_err_x: None,
        iterations: 0,
        residual_history: Vec::new(),
        ledger: snapshot(ledger, &start),
        wall_ms: clock.elapsed().as_secs_f64() * 1e3,
        converged: true,
        kappa_predicted: None,
    };
    report.attach_truth(inst);
    Ok(report)
}

/// Draw a rescaled row-sampled subproblem according to a leverage-score
/// distribution.
pub fn leverage_sample_l2(
    inst: &ProblemInstance,
    lev: &LeverageEstimate,
    s: usize,
    mode: SamplingMode,
    seed: SeedSpec,
) -> Result<SampledProblem> {
    let (m, n) = (inst.rows(), inst.cols());
    if lev.scores.len() != m {
        return Err(Error::dim("leverage_sample_l2", format!("{m} scores"), format!("{}", lev.scores.len())));
    }
    if s < n {
        return Err(Error::invalid_arg(format!(
            "sample size s={s} must be at least the column count {n}"
        )));
    }
    let probs = lev.distribution();
    let st = RandomStream::new(seed);
    let mut rows: Vec<(usize, f64)> = Vec::new();
    let expected_rows;
    match mode {
        SamplingMode::Bernoulli => {
            let mut total_q = 0.0;
            for (i, &p) in probs.iter().enumerate() {
                let q = (s as f64 * p).min(1.0);
                total_q += q;
                if q > 0.0 && st.unit_at(i as u64) < q {
                    rows.push((i, 1.0 / q.sqrt()));
                }
            }
            expected_rows = total_q;
        }
        SamplingMode::WithReplacement => {
            // Inverse-CDF draws against the cumulative distribution.
            let mut cum = Vec::with_capacity(m);
            let mut acc = 0.0;
            for &p in &probs {
                acc += p;
                cum.push(acc);
            }
            let total = acc.max(f64::MIN_POSITIVE);
            for k in 0..s {
                let u = st.unit_at(k as u64) * total;
                let mut idx = cum.partition_point(|&c| c < u).min(m - 1);
                // A boundary hit could land on a zero-probability row.
                while probs[idx] == 0.0 && idx + 1 < m {
                    idx += 1;
                }
                rows.push((idx, 1.0 / (s as f64 * probs[idx]).sqrt()));
            }
            expected_rows = s as f64;
        }
    }

    let mut a = DenseMatrix::zeros(rows.len(), n);
    let mut b = vec![0.0f64; rows.len()];
    let mut kept_rows = Vec::with_capacity(rows.len());
    for (out_i, &(i, w)) in rows.iter().enumerate() {
        let src = &inst.a.as_slice()[i * n..(i + 1) * n];
        let dst = &mut a.as_mut_slice()[out_i * n..(out_i + 1) * n];
        for (d, &v) in dst.iter_mut().zip(src) {
            *d = w * v;
        }
        b[out_i] = w * inst.b[i];
        kept_rows.push(i);
    }
    Ok(SampledProblem { a, b, kept_rows, expected_rows })
}

/// LSQR; hitting the iteration cap is reported as [`Error::MaxIters`].
/// Use [`lsqr_run`] to keep the partial result instead.
#[allow(clippy::too_many_arguments)]
pub fn lsqr<F, G>(
    apply_a: F,
    apply_at: G,
    b: &[f64],
    precond: Option<&Preconditioner>,
    tol: f64,
    max_iters: usize,
    ledger: &mut CostLedger,
) -> Result<SolveReport>
where
    F: FnMut(&[f64], &mut CostLedger) -> Result<Vec<f64>>,
    G: FnMut(&[f64], &mut CostLedger) -> Result<Vec<f64>>,
{
    let report = lsqr_run(apply_a, apply_at, b, precond, tol, max_iters, ledger)?;
    if !report.converged {
        return Err(Error::MaxIters {
            context: "lsqr",
            limit: max_iters,
            last: report.residual_history.last().copied().unwrap_or(f64::NAN),
        });
    }
    Ok(report)
}

/// LSQR on `min ||A x - b||` via Golub-Kahan bidiagonalization, optionally
/// right-preconditioned (`min ||A N y - b||`, `x = N y`).
///
/// Each iteration performs exactly one `A^T`-type and one `A`-type operator
/// application (the initial `A^T b` product is iteration 1's first half)
/// and records exactly 2 reductions. The stopping test on the estimated
/// relative normal-equations residual lags one iteration: it is evaluated
/// for the previous iterate, and the newer iterate is returned.
#[allow(clippy::too_many_arguments)]
pub fn lsqr_run<F, G>(
    mut apply_a: F,
    mut apply_at: G,
    b: &[f64],
    precond: Option<&Preconditioner>,
    tol: f64,
    max_iters: usize,
    ledger: &mut CostLedger,
) -> Result<SolveReport>
where
    F: FnMut(&[f64], &mut CostLedger) -> Result<Vec<f64>>,
    G: FnMut(&[f64], &mut CostLedger) -> Result<Vec<f64>>,
{
    if !(tol > 0.0) {
        return Err(Error::invalid_arg("lsqr tol must be positive"));
    }
    if max_iters == 0 {
        return Err(Error::invalid_arg("lsqr needs max_iters >= 1"));
    }
    let clock = Instant::now();
    let start = ledger.clone();

    // B = A N (identity N when no preconditioner).
    let mut apply_b = |v: &[f64], led: &mut CostLedger| -> Result<Vec<f64>> {
        match precond {
            Some(p) => apply_a(&p.apply_vec(v), led),
            None => apply_a(v, led),
        }
    };
    let mut apply_bt = |u: &[f64], led: &mut CostLedger| -> Result<Vec<f64>> {
        match precond {
            Some(p) => Ok(p.apply_transpose_vec(&apply_at(u, led)?)),
            None => apply_at(u, led),
        }
    };

    let beta1 = norm2(b);
    let mut history = Vec::new();
    if beta1 == 0.0 {
        // Degenerate zero right-hand side: the solution is zero.
        let n_probe = apply_bt(b, ledger)?.len();
        let x = finish_x(vec![0.0; n_probe], precond);
        return Ok(SolveReport {
            x_hat: x,
            f_hat: 0.0,
            rel_err_f: None,
            rel_err_x: None,
            iterations: 0,
            residual_history: history,
            ledger: snapshot(ledger, &start),
            wall_ms: clock.elapsed().as_secs_f64() * 1e3,
            converged: true,
            kappa_predicted: None,
        });
    }
    let mut u: Vec<f64> = b.iter().map(|v| v / beta1).collect();

    let mut v: Vec<f64> = Vec::new();
    let mut w: Vec<f64> = Vec::new();
    let mut y: Vec<f64> = Vec::new();
    let mut alpha;
    let mut beta = 0.0f64;
    let mut rhobar;
    let mut phibar = beta1;
    let mut c_prev = 1.0f64;
    let mut s_prev = 0.0f64;
    let mut rho_prev = 1.0f64;
    let mut ref_ne = 0.0f64;
    let mut pending_estimate = f64::INFINITY;
    let mut converged = false;
    let mut iterations = 0usize;

    for k in 1..=max_iters {
        // First half: v update (A^T-type application + 1 reduction).
        let mut t = apply_bt(&u, ledger)?;
        if k == 1 {
            y = vec![0.0f64; t.len()];
        } else {
            for (ti, vi) in t.iter_mut().zip(&v) {
                *ti -= beta * vi;
            }
        }
        alpha = norm2(&t);
        ledger.reductions += 1;
        if alpha == 0.0 {
            // Exact invariant subspace: the previous iterate is optimal.
            converged = true;
            iterations = k;
            break;
        }
        for ti in t.iter_mut() {
            *ti /= alpha;
        }
        v = t;

        if k == 1 {
            ref_ne = alpha * beta1;
            rhobar = alpha;
            w = v.clone();
        } else {
            // Completion of the previous plane rotation, now that alpha_k
            // exists: direction update and the lagged stopping estimate.
            pending_estimate = phibar * alpha * c_prev.abs();
            let theta = s_prev * alpha;
            rhobar = -c_prev * alpha;
            for (wi, vi) in w.iter_mut().zip(&v) {
                *wi = vi - (theta / rho_prev) * *wi;
            }
        }

        // Second half: u update (A-type application + 1 reduction).
        let bu = apply_b(&v, ledger)?;
        let mut t2 = bu;
        for (ti, ui) in t2.iter_mut().zip(&u) {
            *ti -= alpha * ui;
        }
        beta = norm2(&t2);
        ledger.reductions += 1;

        // Current rotation and iterate update.
        let rho = (rhobar * rhobar + beta * beta).sqrt();
        let cs = rhobar / rho;
        let sn = beta / rho;
        let phi = cs * phibar;
        phibar = sn.abs() * phibar;
        for (yi, wi) in y.iter_mut().zip(&w) {
            *yi += (phi / rho) * wi;
        }
        history.push(phibar);
        iterations = k;
        c_prev = cs;
        s_prev = sn;
        rho_prev = rho;

        if beta == 0.0 {
            converged = true; // exact convergence of the bidiagonalization
            break;
        }
        for ti in t2.iter_mut() {
            *ti /= beta;
        }
        u = t2;

        if k >= 2 && pending_estimate <= tol * ref_ne {
            converged = true;
            break;
        }
    }

    let x_hat = finish_x(y, precond);
    let f_hat = phibar;
    Ok(SolveReport {
        x_hat,
        f_hat,
        rel_err_f: None,
        rel_err_x: None,
        iterations,
        residual_history: history,
        ledger: snapshot(ledger, &start),
        wall_ms: clock.elapsed().as_secs_f64() * 1e3,
        converged,
        kappa_predicted: None,
    })
}

fn finish_x(y: Vec<f64>, precond: Option<&Preconditioner>) -> Vec<f64> {
    match precond {
        Some(p) => p.apply_vec(&y),
        None => y,
    }
}

fn snapshot(ledger: &CostLedger, start: &CostLedger) -> CostLedger {
    CostLedger {
        passes: ledger.passes - start.passes,
        reductions: ledger.reductions - start.reductions,
        flops_estimate: ledger.flops_estimate - start.flops_estimate,
    }
}

/// Chebyshev semi-iterative method; hitting the iteration cap is reported
/// as [`Error::MaxIters`]. Use [`chebyshev_run`] to keep the partial
/// result instead.
#[allow(clippy::too_many_arguments)]
pub fn chebyshev_semi_iterative<F, G>(
    apply_a: F,
    apply_at: G,
    b: &[f64],
    interval: (f64, f64),
    tol: f64,
    max_iters: usize,
    ledger: &mut CostLedger,
) -> Result<SolveReport>
where
    F: FnMut(&[f64], &mut CostLedger) -> Result<Vec<f64>>,
    G: FnMut(&[f64], &mut CostLedger) -> Result<Vec<f64>>,
{
    let report = chebyshev_run(apply_a, apply_at, b, interval, tol, max_iters, ledger)?;
    if !report.converged {
        return Err(Error::MaxIters {
            context: "chebyshev_semi_iterative",
            limit: max_iters,
            last: report.residual_history.last().copied().unwrap_or(f64::NAN),
        });
    }
    Ok(report)
}

/// Chebyshev semi-iterative method for `min ||A x - b||` given an interval
/// enclosing the singular values of `A`.
///
/// Runs the classical two-term recurrence on the normal equations over
/// `[lo^2, hi^2]`; the coefficients are fixed by the interval, so each
/// iteration needs exactly one pass with `A^T`, one with `A`, and a single
/// reduction (the monitored normal-equations residual norm). If the true
/// spectrum escapes the interval the monitor grows and the run aborts with
/// [`Error::Divergence`] once it exceeds 10x its best value.
#[allow(clippy::too_many_arguments)]
pub fn chebyshev_run<F, G>(
    mut apply_a: F,
    mut apply_at: G,
    b: &[f64],
    interval: (f64, f64),
    tol: f64,
    max_iters: usize,
    ledger: &mut CostLedger,
) -> Result<SolveReport>
where
    F: FnMut(&[f64], &mut CostLedger) -> Result<Vec<f64>>,
    G: FnMut(&[f64], &mut CostLedger) -> Result<Vec<f64>>,
{
    let (lo, hi) = interval;
    if !(lo > 0.0 && lo < hi && hi.is_finite()) {
        return Err(Error::InvalidInterval { context: "chebyshev_semi_iterative", lo, hi });
    }
    if !(tol > 0.0) {
        return Err(Error::invalid_arg("chebyshev tol must be positive"));
    }
    if max_iters == 0 {
        return Err(Error::invalid_arg("chebyshev needs max_iters >= 1"));
    }
    let clock = Instant::now();
    let start = ledger.clone();

    // Eigenvalue interval of the normal-equations operator.
    let a_ev = lo * lo;
    let b_ev = hi * hi;
    let theta = 0.5 * (b_ev + a_ev);
    let half_width = 0.5 * (b_ev - a_ev);
    let sigma1 = theta / half_width;

    let mut s_res = b.to_vec(); // least-squares residual b - B x
    let mut x: Vec<f64> = Vec::new();
    let mut d: Vec<f64> = Vec::new();
    let mut rho = 0.0f64;
    let mut ref_ne = 0.0f64;
    let mut best = f64::INFINITY;
    let mut history = Vec::new();
    let mut converged = false;
    let mut iterations = 0usize;

    for k in 1..=max_iters {
        // Monitor pass: w = B^T s is both the recurrence input and the
        // convergence measure for the previous iterate.
        let w = apply_at(&s_res, ledger)?;
        let mon = norm2(&w);
        ledger.reductions += 1;
        history.push(mon);
        if k == 1 {
            ref_ne = mon.max(f64::MIN_POSITIVE);
            x = vec![0.0f64; w.len()];
        }
        best = best.min(mon);
        if mon > 10.0 * best && mon > tol * ref_ne {
            return Err(Error::Divergence {
                context: "chebyshev_semi_iterative",
                grown: mon,
                best,
            });
        }

        if k == 1 {
            d = w.iter().map(|wi| wi / theta).collect();
            rho = half_width / theta;
        } else {
            let rho_next = 1.0 / (2.0 * sigma1 - rho);
            for (di, wi) in d.iter_mut().zip(&w) {
                *di = rho_next * rho * *di + (2.0 * rho_next / half_width) * wi;
            }
            rho = rho_next;
        }
        for (xi, di) in x.iter_mut().zip(&d) {
            *xi += di;
        }
        let bd = apply_a(&d, ledger)?;
        for (si, bdi) in s_res.iter_mut().zip(&bd) {
            *si -= bdi;
        }
        iterations = k;

        if mon <= tol * ref_ne {
            converged = true;
            break;
        }
    }

    let f_hat = norm2(&s_res);
    Ok(SolveReport {
        x_hat: x,
        f_hat,
        rel_err_f: None,
        rel_err_x: None,
        iterations,
        residual_history: history,
        ledger: snapshot(ledger, &start),
        wall_ms: clock.elapsed().as_secs_f64() * 1e3,
        converged,
        kappa_predicted: None,
    })
}

/// Full randomized-preconditioning pipeline: build the SVD-type
/// preconditioner from one sketch pass, then drive the chosen iterative
/// method with streamed matrix applications (`passes = 1 + 2 * iterations`).
pub fn lsrn_solve(
    inst: &ProblemInstance,
    gamma: f64,
    kind: IterativeKind,
    cfg: &SolverConfig,
    block_rows: usize,
    ledger: &mut CostLedger,
) -> Result<SolveReport> {
    cfg.validate()?;
    let clock = Instant::now();
    let start = ledger.clone();
    let source = MatrixSource::from(inst.a.clone());
    let seed = SeedSpec::new(inst.seed).derive(0x4C53_524E);
    let p = lsrn_precond(&source, gamma, seed, block_rows, ledger)?;
    let kappa_predicted = p.predicted_interval.map(|(lo, hi)| hi / lo);

    let apply = |v: &[f64], led: &mut CostLedger| matvec_stream(&source, v, block_rows, led);
    let apply_t =
        |u: &[f64], led: &mut CostLedger| matvec_transpose_stream(&source, u, block_rows, led);

    let mut report = match kind {
        IterativeKind::Lsqr => lsqr_run(
            apply,
            apply_t,
            &inst.b,
            Some(&p),
            cfg.tol,
            cfg.max_iters,
            ledger,
        )?,
        IterativeKind::Cs => {
            let interval = p.predicted_interval.ok_or(Error::InvalidInterval {
                context: "lsrn_solve (no predicted interval at these dimensions)",
                lo: 0.0,
                hi: 0.0,
            })?;
            let apply_b = |v: &[f64], led: &mut CostLedger| -> Result<Vec<f64>> {
                matvec_stream(&source, &p.apply_vec(v), block_rows, led)
            };
            let apply_bt = |u: &[f64], led: &mut CostLedger| -> Result<Vec<f64>> {
                Ok(p.apply_transpose_vec(&matvec_transpose_stream(&source, u, block_rows, led)?))
            };
            let mut r = chebyshev_run(
                apply_b,
                apply_bt,
                &inst.b,
                interval,
                cfg.tol,
                cfg.max_iters,
                ledger,
            )?;
            r.x_hat = p.apply_vec(&r.x_hat);
            r
        }
    };

    report.kappa_predicted = kappa_predicted;
    report.ledger = snapshot(ledger, &start);
    report.wall_ms = clock.elapsed().as_secs_f64() * 1e3;
    report.attach_truth(inst);
    Ok(report)
}
