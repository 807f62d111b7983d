//! Offline reference solutions and tracking-bound diagnostics.
//!
//! The reference `s*_t` of a covariance is the fixed point of the proximal
//! gradient map `x = prox(x - rho grad f(x), rho)`, found by iterating that map
//! to convergence. The step is chosen by backtracking on the quadratic upper
//! bound, which keeps the composite objective monotone and lets the same routine
//! handle the SBM barrier, whose gradient has no global Lipschitz constant.

use std::thread;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::covariance::{second_moment, CovarianceTracker};
use crate::error::{check_len, Error, Result};
use crate::models::{model_constants, GraphModel, HessianOp, Model};
use crate::solver::{correction_iterates, OnlineSolver};
use crate::metrics::RunRecord;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleOptions {
    /// Relative step tolerance `||x_{k+1} - x_k|| <= tol max(1, ||x_k||)`.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for OracleOptions {
    fn default() -> Self {
        OracleOptions { tol: 1e-9, max_iter: 1_000_000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleSolution {
    pub s: DVector<f64>,
    pub iterations: usize,
    /// Last step length `||x_{k+1} - x_k||`.
    pub residual: f64,
    pub converged: bool,
}

/// Smooth-plus-nonsmooth objective handled by [`solve_composite`].
pub trait CompositeProblem {
    fn dim(&self) -> usize;
    fn smooth(&self, s: &DVector<f64>) -> Result<f64>;
    fn smooth_gradient(&self, s: &DVector<f64>) -> Result<DVector<f64>>;
    fn nonsmooth(&self, s: &DVector<f64>) -> f64;
    fn prox(&self, u: &DVector<f64>, step: f64) -> DVector<f64>;
    fn in_domain(&self, s: &DVector<f64>) -> bool;
    fn curvature_hint(&self, s: &DVector<f64>) -> f64;
}

impl<M: GraphModel> CompositeProblem for M {
    fn dim(&self) -> usize {
        GraphModel::dim(self)
    }
    fn smooth(&self, s: &DVector<f64>) -> Result<f64> {
        self.objective(s)
    }
    fn smooth_gradient(&self, s: &DVector<f64>) -> Result<DVector<f64>> {
        self.gradient(s)
    }
    fn nonsmooth(&self, s: &DVector<f64>) -> f64 {
        self.regularizer(s)
    }
    fn prox(&self, u: &DVector<f64>, step: f64) -> DVector<f64> {
        GraphModel::prox(self, u, step)
    }
    fn in_domain(&self, s: &DVector<f64>) -> bool {
        GraphModel::in_domain(self, s)
    }
    fn curvature_hint(&self, s: &DVector<f64>) -> f64 {
        self.lipschitz_hint(s)
    }
}

/// Second-order Taylor model of the next cost around an anchor `s_t`:
/// `g0^T (s - s_t) + 1/2 (s - s_t)^T H (s - s_t) + h tg^T s`, with the
/// nonsmooth part carried over unchanged.
pub struct TaylorProblem<'a, M: GraphModel> {
    model: &'a M,
    anchor: DVector<f64>,
    hessian: HessianOp,
    linear: DVector<f64>,
}

impl<'a, M: GraphModel> TaylorProblem<'a, M> {
    pub fn at(model: &'a M, anchor: &DVector<f64>, h: f64) -> Result<Self> {
        let g0 = model.gradient(anchor)?;
        let tg = model.time_gradient(anchor, h)?;
        Ok(TaylorProblem {
            model,
            anchor: anchor.clone(),
            hessian: model.hessian_operator(anchor)?,
            linear: g0 + tg * h,
        })
    }

    pub fn hessian(&self) -> &HessianOp {
        &self.hessian
    }
}

impl<M: GraphModel> CompositeProblem for TaylorProblem<'_, M> {
    fn dim(&self) -> usize {
        self.anchor.len()
    }
    fn smooth(&self, s: &DVector<f64>) -> Result<f64> {
        let d = s - &self.anchor;
        let hd = self.hessian.apply(&d)?;
        Ok(self.linear.dot(&d) + 0.5 * d.dot(&hd))
    }
    fn smooth_gradient(&self, s: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(&self.linear + self.hessian.apply(&(s - &self.anchor))?)
    }
    fn nonsmooth(&self, s: &DVector<f64>) -> f64 {
        self.model.regularizer(s)
    }
    fn prox(&self, u: &DVector<f64>, step: f64) -> DVector<f64> {
        self.model.prox(u, step)
    }
    fn in_domain(&self, s: &DVector<f64>) -> bool {
        s.len() == self.anchor.len()
    }
    fn curvature_hint(&self, _s: &DVector<f64>) -> f64 {
        self.model.lipschitz_hint(&self.anchor)
    }
}

/// Proximal gradient to convergence from `start`.
///
/// Non-convergence within `max_iter` is not an error: the result carries the
/// last iterate with `converged == false`.
pub fn solve_composite<P: CompositeProblem + ?Sized>(
    problem: &P,
    start: &DVector<f64>,
    opts: &OracleOptions,
) -> Result<OracleSolution> {
    check_len(problem.dim(), start.len())?;
    if !(opts.tol > 0.0) {
        return Err(Error::Config(format!("oracle tolerance must be positive, got {}", opts.tol)));
    }
    let mut x = problem.prox(start, 0.0);
    if !problem.in_domain(&x) {
        if problem.in_domain(start) {
            x = start.clone();
        } else {
            return Err(Error::Domain("oracle start lies outside the objective's domain".into()));
        }
    }
    let mut fx = problem.smooth(&x)?;
    if !fx.is_finite() || x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical(
            "objective is not finite at the oracle start; the estimate being checked has diverged".into(),
        ));
    }
    let mut lip = problem.curvature_hint(&x).max(1e-12);
    let mut residual = f64::INFINITY;
    for k in 0..opts.max_iter {
        let g = problem.smooth_gradient(&x)?;
        let (y, fy) = loop {
            let step = 1.0 / lip;
            let y = problem.prox(&(&x - &g * step), step);
            if problem.in_domain(&y) {
                if let Ok(fy) = problem.smooth(&y) {
                    let d = &y - &x;
                    let model = fx + g.dot(&d) + 0.5 * lip * d.norm_squared();
                    if fy <= model + 1e-15 * fx.abs().max(1.0) {
                        break (y, fy);
                    }
                }
            }
            lip *= 2.0;
            if !lip.is_finite() || lip > 1e300 {
                return Err(Error::Numerical("oracle step size underflowed".into()));
            }
        };
        residual = (&y - &x).norm();
        let scale = x.norm().max(1.0);
        x = y;
        fx = fy;
        if residual <= opts.tol * scale {
            return Ok(OracleSolution { s: x, iterations: k + 1, residual, converged: true });
        }
        lip *= 0.9;
    }
    Ok(OracleSolution { s: x, iterations: opts.max_iter, residual, converged: false })
}

/// Reference solution for the covariance `sigma`.
pub fn solve_offline(
    model: &Model,
    sigma: &DMatrix<f64>,
    start: Option<&DVector<f64>>,
    opts: &OracleOptions,
) -> Result<OracleSolution> {
    let mut m = model.clone();
    m.refresh(sigma, sigma)?;
    let s0 = start.cloned().unwrap_or_else(|| m.initial_point());
    solve_composite(&m, &s0, opts)
}

/// Reference solution for the batch second moment of a window of signals.
pub fn solve_batch(model: &Model, window: &[DVector<f64>], opts: &OracleOptions) -> Result<OracleSolution> {
    let sigma = second_moment(window)?;
    solve_offline(model, &sigma, None, opts)
}

/// Steps between independent warm-start restarts of [`oracle_trajectory`].
/// Fixed so that results do not depend on the thread count.
pub const ORACLE_CHUNK: usize = 256;

/// Reference solution after every streamed sample, `s*_1, ..., s*_T`.
///
/// The stream is cut into fixed chunks; each chunk replays its covariance
/// updates from a tracker snapshot and warm-starts within the chunk. Up to
/// `jobs` chunks are solved concurrently.
pub fn oracle_trajectory(
    model: &Model,
    tracker: &CovarianceTracker,
    signals: &[DVector<f64>],
    opts: &OracleOptions,
    jobs: usize,
) -> Result<Vec<OracleSolution>> {
    let mut starts = Vec::new();
    let mut tr = tracker.clone();
    for (k, x) in signals.iter().enumerate() {
        if k % ORACLE_CHUNK == 0 {
            starts.push(tr.clone());
        }
        tr.update(x)?;
    }
    let solve_chunk = |c: usize| -> Result<Vec<OracleSolution>> {
        let mut tr = starts[c].clone();
        let mut out = Vec::new();
        let mut warm: Option<DVector<f64>> = None;
        let lo = c * ORACLE_CHUNK;
        let hi = (lo + ORACLE_CHUNK).min(signals.len());
        for x in &signals[lo..hi] {
            tr.update(x)?;
            let sol = solve_offline(model, tr.sigma(), warm.as_ref(), opts)?;
            warm = Some(sol.s.clone());
            out.push(sol);
        }
        Ok(out)
    };
    let jobs = jobs.max(1);
    let mut results: Vec<Option<Result<Vec<OracleSolution>>>> = (0..starts.len()).map(|_| None).collect();
    for group in (0..starts.len()).collect::<Vec<_>>().chunks(jobs) {
        let solved: Vec<_> = thread::scope(|scope| {
            let handles: Vec<_> = group.iter().map(|&c| scope.spawn(move || solve_chunk(c))).collect();
            handles.into_iter().map(|h| h.join().expect("oracle worker panicked")).collect()
        });
        for (&c, r) in group.iter().zip(solved) {
            results[c] = Some(r);
        }
    }
    let mut out = Vec::with_capacity(signals.len());
    for r in results {
        out.extend(r.expect("every chunk solved")?);
    }
    Ok(out)
}

/// Measured quantities of the tracking bound at one step `t -> t + 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundDiagnostics {
    /// Index of the sample consumed by this step.
    pub t: usize,
    pub q: f64,
    pub q_pred: f64,
    pub q_corr: f64,
    pub m: f64,
    pub l: f64,
    /// `||s_hat_t - s*_t||`.
    pub error_prev: f64,
    /// `||s*_{t+1} - s*_t||`.
    pub d: f64,
    /// `||s*_{t+1|t} - s*_{t+1}||`, against the prediction problem's own optimum.
    pub phi: f64,
    pub c0_estimate: f64,
    /// `||s_hat_{t+1} - s*_{t+1}||`.
    pub lhs: f64,
    /// `q^C (q^P e + q^P d + (1 + q^P) phi)`.
    pub rhs: f64,
    /// `phi` bound `(2L/m) e + (2 C0 h / m)(1 + L/m)`.
    pub phi_bound: f64,
    pub violated: bool,
    /// Oracle or prediction-oracle failed to converge; the step is not checked.
    pub gap: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsReport {
    pub steps: Vec<BoundDiagnostics>,
    pub records: Vec<RunRecord>,
    pub violations: usize,
    pub gaps: usize,
    pub c0_estimate: f64,
}

/// Runs `solver` over `signals` while solving the reference and prediction
/// problems at every step, and checks the per-step tracking bound.
///
/// Curvature constants are the certified bounds on the hull of the points the
/// bound involves: the anchor for the prediction (its Hessian is frozen there),
/// and the correction iterates together with `s*_{t+1}` for the correction.
pub fn diagnose(
    mut solver: OnlineSolver,
    signals: &[DVector<f64>],
    opts: &OracleOptions,
) -> Result<DiagnosticsReport> {
    let h = solver.config().h;
    let (p_steps, c_steps) = (solver.config().p_steps as i32, solver.config().c_steps as i32);
    let kind = solver.model().kind();
    let mut s_star = solve_composite(solver.model(), &solver.state().s_hat, opts)?;
    let mut c0 = 0.0_f64;
    let mut steps = Vec::with_capacity(signals.len());
    let mut records = Vec::with_capacity(signals.len());
    for x in signals {
        let model_t = solver.model().clone();
        let s_t = solver.state().s_hat.clone();
        let sigma_t = solver.state().tracker.sigma().clone();
        let (alpha, beta) = solver.step_sizes();
        let rho_pred = solver.step_factor() * alpha;
        let taylor = TaylorProblem::at(&model_t, &s_t, h)?;
        let pred_star = solve_composite(&taylor, &s_t, opts)?;

        let mut record = solver.step(x)?;
        let model_next = solver.model();
        let next_star = solve_composite(model_next, &s_star.s, opts)?;
        let path = correction_iterates(model_next, &solver.state().s_pred, beta, c_steps as usize)?;

        let pred_ctx = model_t.local_context(&[&s_t], &[&sigma_t]);
        let q_pred = model_constants(kind, &pred_ctx)?.certified.contraction(rho_pred);
        let mut points: Vec<&DVector<f64>> = path.iter().collect();
        points.push(&next_star.s);
        let corr_ctx = model_next.local_context(&points, &[solver.state().tracker.sigma()]);
        let corr = model_constants(kind, &corr_ctx)?.certified;
        let q_corr = corr.contraction(beta);
        let q = q_pred.max(q_corr);

        c0 = c0.max(record.tgrad_norm);
        let e = (&s_t - &s_star.s).norm();
        let d = (&next_star.s - &s_star.s).norm();
        let phi = (&pred_star.s - &next_star.s).norm();
        let lhs = (&solver.state().s_hat - &next_star.s).norm();
        let qp = q.powi(p_steps);
        let rhs = q.powi(c_steps) * (qp * e + qp * d + (1.0 + qp) * phi);
        let (m, l) = (corr.m, corr.l);
        let phi_bound = 2.0 * l / m * e + 2.0 * c0 * h / m * (1.0 + l / m);
        let gap = !(s_star.converged && next_star.converged && pred_star.converged);
        let slack = 1e3 * opts.tol * next_star.s.norm().max(1.0);
        let violated = !gap && lhs > rhs + slack;
        if let Ok(v) = crate::metrics::nse(&record.s_hat, &next_star.s) {
            record.nse = Some(v);
        }
        steps.push(BoundDiagnostics {
            t: record.t,
            q,
            q_pred,
            q_corr,
            m,
            l,
            error_prev: e,
            d,
            phi,
            c0_estimate: c0,
            lhs,
            rhs,
            phi_bound,
            violated,
            gap,
        });
        records.push(record);
        s_star = next_star;
    }
    Ok(DiagnosticsReport {
        violations: steps.iter().filter(|s| s.violated).count(),
        gaps: steps.iter().filter(|s| s.gap).count(),
        c0_estimate: c0,
        steps,
        records,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::ModelSpec;
    use crate::vectorization::{vech_unchecked, vechh_unchecked};

    #[test]
    fn ggm_identity_covariance_gives_identity() {
        let model = ModelSpec::Ggm { xi: 0.1, chi: 10.0 }.build(4).unwrap();
        let sol = solve_offline(&model, &DMatrix::identity(4, 4), None, &OracleOptions::default()).unwrap();
        assert!(sol.converged);
        let target = vech_unchecked(&DMatrix::identity(4, 4));
        assert!((sol.s - target).norm() < 1e-8);
    }

    #[test]
    fn sem_large_penalty_gives_empty_graph() {
        let a = DMatrix::from_fn(5, 5, |i, j| ((i * 3 + j * 5) % 7) as f64 / 7.0);
        let sigma = &a * a.transpose() + DMatrix::identity(5, 5);
        let lambda = vechh_unchecked(&sigma).amax();
        let model = ModelSpec::Sem { lambda }.build(5).unwrap();
        let start = DVector::from_element(10, 0.3);
        let sol = solve_offline(&model, &sigma, Some(&start), &OracleOptions::default()).unwrap();
        assert!(sol.converged);
        assert!(sol.s.amax() < 1e-9);
    }

    #[test]
    fn multi_start_agreement_and_monotone_objective() {
        let a = DMatrix::from_fn(5, 5, |i, j| ((i * 3 + j * 2) % 5) as f64 - 2.0);
        let sigma = &a * a.transpose() / 5.0 + DMatrix::identity(5, 5);
        let model = ModelSpec::Sbm { lambda1: 0.5, lambda2: 1.0 }.build(5).unwrap();
        let opts = OracleOptions { tol: 1e-11, max_iter: 200_000 };
        let s1 = solve_offline(&model, &sigma, Some(&DVector::from_element(10, 0.1)), &opts).unwrap();
        let s2 = solve_offline(&model, &sigma, Some(&DVector::from_element(10, 3.0)), &opts).unwrap();
        assert!(s1.converged && s2.converged);
        assert!((&s1.s - &s2.s).norm() < 1e-7, "{}", (&s1.s - &s2.s).norm());
    }
}
