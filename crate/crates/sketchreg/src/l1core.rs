//! Exact desk-scale l1 regression engine.
//!
//! `min ||Ax - b||_1` is solved as the linear program
//!
//! ```text
//!   min 1'y+ + 1'y-   s.t.  Ax - y+ + y- = b,   y+, y- >= 0,
//! ```
//!
//! whose dual is `max b'lam` over the box `-1 <= lam <= 1` with `A'lam = 0`.
//! [`ipm_l1`] runs a Mehrotra predictor-corrector method on this pair; the
//! structure of the slack bounds reduces each Newton step to an n-by-n
//! weighted least-squares solve. [`irls_l1`] is an independent smoothed
//! iteratively-reweighted least-squares solver used as a cross-check, and
//! [`vertex_certificate`] verifies global optimality of a candidate by
//! snapping it to a basic solution and checking the subgradient condition.

use crate::error::{Error, Result};
use crate::linalg::qr::qr_r_only;
use crate::linalg::solve::{back_substitute, min_length_solve};
use crate::matrix::DenseMatrix;

/// Which optimization problem an [`L1Subproblem`] encodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum L1Form {
    /// `min_x ||A x - b||_1`.
    Residual,
    /// `min_z ||A z||_1` subject to `z[c_index] = 1` (the right-hand side
    /// is folded into the matrix as a column).
    Homogeneous { c_index: usize },
}

/// A dense l1 regression subproblem small enough to solve exactly.
#[derive(Debug, Clone)]
pub struct L1Subproblem {
    pub a: DenseMatrix,
    pub b: Vec<f64>,
    pub form: L1Form,
}

impl L1Subproblem {
    /// `min ||A x - b||_1`.
    pub fn residual(a: DenseMatrix, b: Vec<f64>) -> Result<Self> {
        if b.len() != a.rows() {
            return Err(Error::dim("L1Subproblem", format!("{} rows", a.rows()), format!("{}", b.len())));
        }
        if !a.as_slice().iter().all(|v| v.is_finite()) || !b.iter().all(|v| v.is_finite()) {
            return Err(Error::invalid_arg("l1 subproblem entries must be finite"));
        }
        Ok(Self { a, b, form: L1Form::Residual })
    }

    /// `min ||A z||_1` with the affine constraint `z[c_index] = 1`.
    pub fn homogeneous(a: DenseMatrix, c_index: usize) -> Result<Self> {
        if c_index >= a.cols() {
            return Err(Error::invalid_arg(format!(
                "constraint coordinate {c_index} out of range for {} columns",
                a.cols()
            )));
        }
        if !a.as_slice().iter().all(|v| v.is_finite()) {
            return Err(Error::invalid_arg("l1 subproblem entries must be finite"));
        }
        Ok(Self { a, b: Vec::new(), form: L1Form::Homogeneous { c_index } })
    }

    pub fn rows(&self) -> usize {
        self.a.rows()
    }

    /// Number of free variables of the optimization problem.
    pub fn unknowns(&self) -> usize {
        match self.form {
            L1Form::Residual => self.a.cols(),
            L1Form::Homogeneous { .. } => self.a.cols() - 1,
        }
    }

    /// `||A x - b||_1` (residual form, `x` has n entries) or `||A z||_1`
    /// (homogeneous form, `z` has all columns' entries).
    pub fn objective(&self, x: &[f64]) -> f64 {
        match self.form {
            L1Form::Residual => {
                let r = apply(&self.a, x);
                r.iter().zip(&self.b).map(|(p, q)| (p - q).abs()).sum()
            }
            L1Form::Homogeneous { .. } => apply(&self.a, x).iter().map(|v| v.abs()).sum(),
        }
    }

    /// Reduce to an unconstrained residual-form pair `(A', b')`.
    ///
    /// For the homogeneous form the pinned column moves to the right-hand
    /// side: `||A z||_1 = ||A' w - (-a_c)||_1` with `w` the free coordinates.
    fn reduced(&self) -> (DenseMatrix, Vec<f64>) {
        match self.form {
            L1Form::Residual => (self.a.clone(), self.b.clone()),
            L1Form::Homogeneous { c_index } => {
                let (m, n) = (self.a.rows(), self.a.cols());
                let mut a = DenseMatrix::zeros(m, n - 1);
                let mut b = vec![0.0; m];
                for i in 0..m {
                    let mut out = 0;
                    for j in 0..n {
                        if j == c_index {
                            b[i] = -self.a.get(i, j);
                        } else {
                            a.set(i, out, self.a.get(i, j));
                            out += 1;
                        }
                    }
                }
                (a, b)
            }
        }
    }

    /// Map a reduced-form solution back to the full variable vector.
    fn embed(&self, w: Vec<f64>) -> Vec<f64> {
        match self.form {
            L1Form::Residual => w,
            L1Form::Homogeneous { c_index } => {
                let n = self.a.cols();
                let mut z = Vec::with_capacity(n);
                let mut it = w.into_iter();
                for j in 0..n {
                    if j == c_index {
                        z.push(1.0);
                    } else {
                        z.push(it.next().unwrap());
                    }
                }
                z
            }
        }
    }
}

fn apply(a: &DenseMatrix, x: &[f64]) -> Vec<f64> {
    let (m, n) = (a.rows(), a.cols());
    let mut y = vec![0.0; m];
    for i in 0..m {
        let row = &a.as_slice()[i * n..(i + 1) * n];
        y[i] = row.iter().zip(x).map(|(p, q)| p * q).sum();
    }
    y
}

fn apply_t(a: &DenseMatrix, u: &[f64]) -> Vec<f64> {
    let (m, n) = (a.rows(), a.cols());
    let mut y = vec![0.0; n];
    for i in 0..m {
        let row = &a.as_slice()[i * n..(i + 1) * n];
        for (acc, &v) in y.iter_mut().zip(row) {
            *acc += u[i] * v;
        }
    }
    y
}

/// Solve `R^T w = v` for upper-triangular `R` (forward substitution on the
/// transpose).
fn forward_substitute_rt(r: &DenseMatrix, v: &[f64]) -> Vec<f64> {
    let n = r.cols();
    let mut w = vec![0.0; n];
    for i in 0..n {
        let mut acc = v[i];
        for k in 0..i {
            acc -= r.get(k, i) * w[k];
        }
        w[i] = acc / r.get(i, i);
    }
    w
}

/// Result of an interior-point solve with its optimality evidence.
#[derive(Debug, Clone)]
pub struct IpmOutcome {
    /// Solution in the subproblem's full variable convention (for the
    /// homogeneous form this includes the pinned unit coordinate).
    pub x: Vec<f64>,
    /// Final duality gap `y+.s+ + y-.s-`.
    pub gap: f64,
    pub iterations: usize,
    /// `||A x - b||_1` at the returned point.
    pub objective: f64,
}

const IPM_MAX_ITERS: usize = 100;
const STEP_SHRINK: f64 = 0.9995;

/// Exact l1 regression via a Mehrotra predictor-corrector interior-point
/// method; returns the solution vector. See [`ipm_l1_detailed`] for the
/// duality gap and iteration count.
pub fn ipm_l1(prob: &L1Subproblem, tol: f64) -> Result<Vec<f64>> {
    ipm_l1_detailed(prob, tol).map(|o| o.x)
}

/// [`ipm_l1`] with the convergence evidence attached.
pub fn ipm_l1_detailed(prob: &L1Subproblem, tol: f64) -> Result<IpmOutcome> {
    if !(tol > 0.0 && tol < 1.0) {
        return Err(Error::invalid_arg("ipm tol must lie in (0, 1)"));
    }
    let (a, b) = prob.reduced();
    let out = ipm_core(&a, &b, tol)?;
    Ok(IpmOutcome { x: prob.embed(out.x), ..out })
}

fn ipm_core(a: &DenseMatrix, b: &[f64], tol: f64) -> Result<IpmOutcome> {
    let (m, n) = (a.rows(), a.cols());
    let rank_err = |e: Error| match e {
        Error::RankDeficient { ratio, .. } => Error::RankDeficient {
            context: "ipm_l1 (design matrix is rank deficient)",
            ratio,
        },
        other => other,
    };
    let mut x = min_length_solve(a, b).map_err(rank_err)?;

    // Strictly feasible start: y+ - y- = Ax - b exactly, lam = 0 gives unit
    // dual slacks s+ = 1 - lam, s- = 1 + lam.
    let r0 = sub(&apply(a, &x), b);
    let mut yp: Vec<f64> = r0.iter().map(|&v| v.max(0.0) + 1.0).collect();
    let mut ym: Vec<f64> = r0.iter().map(|&v| (-v).max(0.0) + 1.0).collect();
    let mut lam = vec![0.0f64; m];
    let mut sp = vec![1.0f64; m];
    let mut sm = vec![1.0f64; m];

    let bscale = 1.0 + b.iter().fold(0.0f64, |acc, &v| acc.max(v.abs()));
    let mut gap = f64::INFINITY;

    for iter in 0..=IPM_MAX_ITERS {
        let r = sub(&apply(a, &x), b);
        let objective: f64 = r.iter().map(|v| v.abs()).sum();

        // Residuals of the KKT equalities (kept explicitly so rounding
        // drift is folded back into the Newton step).
        let rp: Vec<f64> = (0..m).map(|i| yp[i] - ym[i] - r[i]).collect();
        let rd: Vec<f64> = apply_t(a, &lam).iter().map(|v| -v).collect();
        let rcp: Vec<f64> = (0..m).map(|i| 1.0 - lam[i] - sp[i]).collect();
        let rcm: Vec<f64> = (0..m).map(|i| 1.0 + lam[i] - sm[i]).collect();

        gap = dot(&yp, &sp) + dot(&ym, &sm);
        let mu = gap / (2 * m) as f64;
        let feas_p = inf_norm(&rp) / bscale;
        let feas_d = inf_norm(&rd) / 2.0;
        if gap <= tol * (1.0 + objective) && feas_p <= tol && feas_d <= tol {
            return Ok(IpmOutcome { x, gap, iterations: iter, objective });
        }
        if iter == IPM_MAX_ITERS {
            break;
        }

        // Shared factorization: M = A' D^-1 A = R'R with C = D^-1/2 A.
        let d: Vec<f64> = (0..m).map(|i| yp[i] / sp[i] + ym[i] / sm[i]).collect();
        let mut c = DenseMatrix::zeros(m, n);
        for i in 0..m {
            let w = 1.0 / d[i].sqrt();
            let src = &a.as_slice()[i * n..(i + 1) * n];
            let dst = &mut c.as_mut_slice()[i * n..(i + 1) * n];
            for (o, &v) in dst.iter_mut().zip(src) {
                *o = w * v;
            }
        }
        let rfac = qr_r_only(&c).map_err(rank_err)?;
        let solve_m = |rhs: &[f64]| -> Result<Vec<f64>> {
            let w = forward_substitute_rt(&rfac, rhs);
            back_substitute(&rfac, &w)
        };
        #[allow(clippy::type_complexity)]
        let newton = |rmp: &[f64], rmm: &[f64]| -> Result<(Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>)> {
            let g: Vec<f64> = (0..m)
                .map(|i| {
                    rp[i] + (rmp[i] - yp[i] * rcp[i]) / sp[i]
                        - (rmm[i] - ym[i] * rcm[i]) / sm[i]
                })
                .collect();
            let gd: Vec<f64> = (0..m).map(|i| g[i] / d[i]).collect();
            let rhs: Vec<f64> = apply_t(a, &gd)
                .iter()
                .zip(&rd)
                .map(|(p, q)| p + q)
                .collect();
            let dx = solve_m(&rhs)?;
            let adx = apply(a, &dx);
            let dlam: Vec<f64> = (0..m).map(|i| (adx[i] - g[i]) / d[i]).collect();
            let dsp: Vec<f64> = (0..m).map(|i| rcp[i] - dlam[i]).collect();
            let dsm: Vec<f64> = (0..m).map(|i| rcm[i] + dlam[i]).collect();
            let dyp: Vec<f64> = (0..m).map(|i| (rmp[i] - yp[i] * dsp[i]) / sp[i]).collect();
            let dym: Vec<f64> = (0..m).map(|i| (rmm[i] - ym[i] * dsm[i]) / sm[i]).collect();
            Ok((dx, dlam, dyp, dym, dsp, dsm))
        };

        // Predictor (affine scaling) step.
        let rmp_aff: Vec<f64> = (0..m).map(|i| -yp[i] * sp[i]).collect();
        let rmm_aff: Vec<f64> = (0..m).map(|i| -ym[i] * sm[i]).collect();
        let (_, _, dyp_a, dym_a, dsp_a, dsm_a) = newton(&rmp_aff, &rmm_aff)?;
        let ap_aff = step_length(&yp, &dyp_a).min(step_length(&ym, &dym_a));
        let ad_aff = step_length(&sp, &dsp_a).min(step_length(&sm, &dsm_a));
        let mut gap_aff = 0.0;
        for i in 0..m {
            gap_aff += (yp[i] + ap_aff * dyp_a[i]) * (sp[i] + ad_aff * dsp_a[i]);
            gap_aff += (ym[i] + ap_aff * dym_a[i]) * (sm[i] + ad_aff * dsm_a[i]);
        }
        let mu_aff = gap_aff / (2 * m) as f64;
        let sigma = (mu_aff / mu).powi(3).clamp(0.0, 1.0);

        // Corrector step with the centering target and second-order term.
        let rmp: Vec<f64> = (0..m)
            .map(|i| sigma * mu - yp[i] * sp[i] - dyp_a[i] * dsp_a[i])
            .collect();
        let rmm: Vec<f64> = (0..m)
            .map(|i| sigma * mu - ym[i] * sm[i] - dym_a[i] * dsm_a[i])
            .collect();
        let (dx, dlam, dyp, dym, dsp, dsm) = newton(&rmp, &rmm)?;
        let ap = (STEP_SHRINK * step_length(&yp, &dyp).min(step_length(&ym, &dym))).min(1.0);
        let ad = (STEP_SHRINK * step_length(&sp, &dsp).min(step_length(&sm, &dsm))).min(1.0);

        for (xi, di) in x.iter_mut().zip(&dx) {
            *xi += ap * di;
        }
        for i in 0..m {
            yp[i] += ap * dyp[i];
            ym[i] += ap * dym[i];
            lam[i] += ad * dlam[i];
            sp[i] += ad * dsp[i];
            sm[i] += ad * dsm[i];
        }
    }
    Err(Error::MaxIters { context: "ipm_l1", limit: IPM_MAX_ITERS, last: gap })
}

fn sub(x: &[f64], y: &[f64]) -> Vec<f64> {
    x.iter().zip(y).map(|(p, q)| p - q).collect()
}

fn dot(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(p, q)| p * q).sum()
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |acc, &x| acc.max(x.abs()))
}

/// Largest step in `[0, 1]` keeping `v + alpha dv` nonnegative.
fn step_length(v: &[f64], dv: &[f64]) -> f64 {
    let mut alpha = 1.0f64;
    for (&vi, &di) in v.iter().zip(dv) {
        if di < 0.0 {
            alpha = alpha.min(-vi / di);
        }
    }
    alpha
}

/// Smoothed absolute value: quadratic of matching value and slope inside
/// `|r| <= tau`, exact `|r|` outside.
fn smoothed_abs(r: f64, tau: f64) -> f64 {
    if r.abs() <= tau {
        r * r / (2.0 * tau) + tau / 2.0
    } else {
        r.abs()
    }
}

/// Iteratively reweighted least squares for `min ||Ax - b||_1` with weights
/// `w_i = 1/max(|r_i|, tau)`; returns the solution vector.
///
/// Each sweep minimizes a quadratic majorant of the smoothed objective
/// `sum_i smoothed_abs(r_i)`, so that objective is nonincreasing across
/// iterations. Stops when its relative change drops below 1e-10.
pub fn irls_l1(prob: &L1Subproblem, tau: f64, max_iters: usize) -> Result<Vec<f64>> {
    irls_l1_detailed(prob, tau, max_iters).map(|(x, _)| x)
}

/// [`irls_l1`] returning also the smoothed-objective trace (one entry per
/// weighted solve, starting from the least-squares initializer).
pub fn irls_l1_detailed(
    prob: &L1Subproblem,
    tau: f64,
    max_iters: usize,
) -> Result<(Vec<f64>, Vec<f64>)> {
    if !(tau > 0.0) {
        return Err(Error::invalid_arg("irls smoothing tau must be positive"));
    }
    if max_iters == 0 {
        return Err(Error::invalid_arg("irls needs max_iters >= 1"));
    }
    let (a, b) = prob.reduced();
    let (m, n) = (a.rows(), a.cols());
    let rank_err = |e: Error| match e {
        Error::RankDeficient { ratio, .. } => Error::RankDeficient {
            context: "irls_l1 (design matrix is rank deficient)",
            ratio,
        },
        other => other,
    };
    // The weighted solves fall back to minimum-norm solutions on singular
    // input, which would silently pick an arbitrary point of a degenerate
    // problem; reject rank deficiency up front instead.
    qr_r_only(&a).map_err(rank_err)?;
    let mut x = min_length_solve(&a, &b).map_err(rank_err)?;
    let mut history = Vec::with_capacity(max_iters + 1);
    let mut prev = {
        let r = sub(&apply(&a, &x), &b);
        let o: f64 = r.iter().map(|&v| smoothed_abs(v, tau)).sum();
        history.push(o);
        o
    };
    for _ in 0..max_iters {
        let r = sub(&apply(&a, &x), &b);
        let mut c = DenseMatrix::zeros(m, n);
        let mut d = vec![0.0; m];
        for i in 0..m {
            let w = (1.0 / r[i].abs().max(tau)).sqrt();
            let src = &a.as_slice()[i * n..(i + 1) * n];
            let dst = &mut c.as_mut_slice()[i * n..(i + 1) * n];
            for (o, &v) in dst.iter_mut().zip(src) {
                *o = w * v;
            }
            d[i] = w * b[i];
        }
        x = min_length_solve(&c, &d).map_err(rank_err)?;
        let rnew = sub(&apply(&a, &x), &b);
        let obj: f64 = rnew.iter().map(|&v| smoothed_abs(v, tau)).sum();
        history.push(obj);
        if (prev - obj).abs() <= 1e-10 * (1.0 + obj) {
            return Ok((prob.embed(x), history));
        }
        prev = obj;
    }
    Err(Error::MaxIters {
        context: "irls_l1",
        limit: max_iters,
        last: *history.last().unwrap(),
    })
}

/// Global-optimality evidence for a candidate `min ||Ax - b||_1` solution.
#[derive(Debug, Clone)]
pub struct VertexCertificate {
    /// Basic solution interpolating the n rows with smallest residuals.
    pub vertex_x: Vec<f64>,
    /// `||A vertex_x - b||_1`.
    pub objective: f64,
    /// Largest |dual multiplier| on the basis rows; `<= 1` certifies
    /// optimality of the vertex.
    pub max_dual_abs: f64,
    pub certified: bool,
}

/// Snap `x0` to the nearest vertex (basic solution through the n
/// smallest-residual rows) and test the subgradient optimality condition:
/// the vertex is a global minimizer iff some `nu` in `[-1,1]^n` satisfies
/// `A_B' nu = -sum_{i off basis} sign(r_i) a_i`.
pub fn vertex_certificate(a: &DenseMatrix, b: &[f64], x0: &[f64]) -> Result<VertexCertificate> {
    let (m, n) = (a.rows(), a.cols());
    if b.len() != m || x0.len() != n {
        return Err(Error::dim("vertex_certificate", format!("{m}x{n}"), format!("{}/{}", b.len(), x0.len())));
    }
    if m < n {
        return Err(Error::invalid_arg("vertex_certificate needs at least n rows"));
    }
    let r = sub(&apply(a, x0), b);
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&i, &j| r[i].abs().partial_cmp(&r[j].abs()).unwrap());
    let basis = &order[..n];

    let mut ab = DenseMatrix::zeros(n, n);
    let mut bb = vec![0.0; n];
    for (k, &i) in basis.iter().enumerate() {
        for j in 0..n {
            ab.set(k, j, a.get(i, j));
        }
        bb[k] = b[i];
    }
    // The basic solution is only meaningful when the basis rows are
    // independent; the solve below would otherwise silently return a
    // minimum-norm point of the degenerate system.
    qr_r_only(&ab).map_err(|e| match e {
        Error::RankDeficient { ratio, .. } => Error::RankDeficient {
            context: "vertex_certificate (degenerate basis rows)",
            ratio,
        },
        other => other,
    })?;
    let vertex_x = min_length_solve(&ab, &bb)?;

    let rv = sub(&apply(a, &vertex_x), b);
    let objective: f64 = rv.iter().map(|v| v.abs()).sum();

    // Off-basis subgradient load the basis rows must absorb.
    let in_basis = {
        let mut mask = vec![false; m];
        for &i in basis {
            mask[i] = true;
        }
        mask
    };
    let mut load = vec![0.0f64; n];
    let mut ties = false;
    for i in 0..m {
        if in_basis[i] {
            continue;
        }
        if rv[i] == 0.0 {
            ties = true;
            continue;
        }
        let s = rv[i].signum();
        let row = &a.as_slice()[i * n..(i + 1) * n];
        for (acc, &v) in load.iter_mut().zip(row) {
            *acc += s * v;
        }
    }
    for v in load.iter_mut() {
        *v = -*v;
    }
    // Solve A_B' nu = load.
    let mut abt = DenseMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            abt.set(i, j, ab.get(j, i));
        }
    }
    let nu = min_length_solve(&abt, &load)?;
    let max_dual_abs = inf_norm(&nu);
    Ok(VertexCertificate {
        vertex_x,
        objective,
        max_dual_abs,
        certified: !ties && max_dual_abs <= 1.0 + 1e-9,
    })
}
