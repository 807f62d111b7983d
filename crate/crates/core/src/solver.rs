//! Prediction-correction engine.
//!
//! At time `t` the solver extrapolates the next cost with a second-order Taylor
//! model around the current estimate (prediction, `P` proximal steps), then,
//! once the next sample has updated the covariance, descends on the revealed
//! cost (correction, `C` proximal steps).

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;
use std::time::Instant;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::covariance::{CovarianceTracker, ForgettingPolicy};
use crate::error::{check_len, Error, Result};
use crate::metrics::{edge_count, temporal_deviation, RunRecord, DEFAULT_EDGE_THRESHOLD};
use crate::models::{GraphModel, Model, ModelKind, ModelSpec};

/// Algorithm variants compared in the experiments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    /// Prediction-correction, one step each.
    Pc,
    /// Correction only.
    Co,
    /// Two correction steps, matching the per-sample cost of `Pc`.
    Cc,
    /// Correction only, gradient from the last sample alone.
    Sgd,
    /// `Pc` with a memory of one sample.
    Pc1,
    /// `Cc` with a memory of one sample.
    Cc1,
}

impl Variant {
    pub const ALL: [Variant; 6] = [
        Variant::Pc,
        Variant::Co,
        Variant::Cc,
        Variant::Sgd,
        Variant::Pc1,
        Variant::Cc1,
    ];

    /// Default `(P, C)` budget.
    pub fn default_steps(self) -> (usize, usize) {
        match self {
            Variant::Pc | Variant::Pc1 => (1, 1),
            Variant::Co | Variant::Sgd => (0, 1),
            Variant::Cc | Variant::Cc1 => (0, 2),
        }
    }

    pub fn uses_rank_one(self) -> bool {
        matches!(self, Variant::Sgd | Variant::Pc1 | Variant::Cc1)
    }

    /// Covariance policy this variant runs with; `gamma` applies to the
    /// averaging variants.
    pub fn policy(self, gamma: Option<f64>) -> ForgettingPolicy {
        match (self.uses_rank_one(), gamma) {
            (true, _) => ForgettingPolicy::RankOne,
            (false, Some(gamma)) => ForgettingPolicy::Ewma { gamma },
            (false, None) => ForgettingPolicy::InfiniteMemory,
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::Pc => "pc",
            Variant::Co => "co",
            Variant::Cc => "cc",
            Variant::Sgd => "sgd",
            Variant::Pc1 => "pc1",
            Variant::Cc1 => "cc1",
        })
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.to_ascii_lowercase().replace('-', "");
        Variant::ALL
            .into_iter()
            .find(|v| v.to_string() == key)
            .ok_or_else(|| Error::Config(format!("unknown variant '{s}' (expected pc, co, cc, sgd, pc1 or cc1)")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub p_steps: usize,
    pub c_steps: usize,
    /// Prediction step size, scaled by the model's step factor.
    pub alpha: f64,
    /// Correction step size.
    pub beta: f64,
    /// Sampling period.
    pub h: f64,
    pub variant: Variant,
    /// Overrides the model's prediction step factor when set.
    pub step_factor: Option<f64>,
}

impl SolverConfig {
    pub fn for_variant(variant: Variant, alpha: f64, beta: f64) -> Self {
        let (p_steps, c_steps) = variant.default_steps();
        SolverConfig {
            p_steps,
            c_steps,
            alpha,
            beta,
            h: 1.0,
            variant,
            step_factor: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} must be positive and finite, got {v}")))
            }
        };
        positive("alpha", self.alpha)?;
        positive("beta", self.beta)?;
        positive("h", self.h)?;
        if let Some(f) = self.step_factor {
            positive("step factor", f)?;
        }
        if self.p_steps == 0 && self.c_steps == 0 {
            return Err(Error::Config("at least one prediction or correction step is required".into()));
        }
        Ok(())
    }
}

/// Everything needed to continue a run; model caches are rebuilt from the tracker.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverState {
    /// Number of samples consumed so far.
    pub t: usize,
    pub s_hat: DVector<f64>,
    /// Last prediction (equal to `s_hat` before the first step).
    pub s_pred: DVector<f64>,
    pub tracker: CovarianceTracker,
    /// Smallest positive node degree seen along the SBM trajectory.
    pub min_degree: Option<f64>,
}

/// Per-time step sizes `(alpha, beta)` as a function of the step index.
pub type StepSchedule = Arc<dyn Fn(usize) -> (f64, f64) + Send + Sync>;

/// Outcome of the prediction phase.
pub struct Prediction {
    pub s_pred: DVector<f64>,
    pub tgrad_norm: f64,
}

pub struct OnlineSolver {
    model: Model,
    config: SolverConfig,
    state: SolverState,
    schedule: Option<StepSchedule>,
}

impl fmt::Debug for OnlineSolver {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("OnlineSolver")
            .field("model", &self.model.kind())
            .field("config", &self.config)
            .field("t", &self.state.t)
            .finish()
    }
}

impl OnlineSolver {
    /// Starts from the model's default feasible point.
    pub fn new(spec: ModelSpec, config: SolverConfig, tracker: CovarianceTracker) -> Result<Self> {
        let model = spec.build(tracker.n())?;
        let s0 = model.initial_point();
        Self::assemble(model, config, tracker, s0)
    }

    pub fn with_initial(
        spec: ModelSpec,
        config: SolverConfig,
        tracker: CovarianceTracker,
        s0: DVector<f64>,
    ) -> Result<Self> {
        let model = spec.build(tracker.n())?;
        Self::assemble(model, config, tracker, s0)
    }

    fn assemble(
        mut model: Model,
        config: SolverConfig,
        tracker: CovarianceTracker,
        s0: DVector<f64>,
    ) -> Result<Self> {
        config.validate()?;
        if config.variant.uses_rank_one() && tracker.policy() != ForgettingPolicy::RankOne {
            return Err(Error::Config(format!(
                "variant {} requires a rank-one covariance tracker",
                config.variant
            )));
        }
        check_len(model.dim(), s0.len())?;
        if !model.is_feasible(&s0) {
            return Err(Error::Domain("initial estimate is not feasible".into()));
        }
        model.refresh(tracker.sigma(), tracker.prev_sigma())?;
        let min_degree = match &model {
            Model::Sbm(m) => Some(m.min_degree(&s0)),
            _ => None,
        };
        Ok(OnlineSolver {
            model,
            config,
            state: SolverState {
                t: tracker.t(),
                s_pred: s0.clone(),
                s_hat: s0,
                tracker,
                min_degree,
            },
            schedule: None,
        })
    }

    /// Resumes from a saved state.
    pub fn from_state(spec: ModelSpec, config: SolverConfig, state: SolverState) -> Result<Self> {
        config.validate()?;
        let mut model = spec.build(state.tracker.n())?;
        check_len(model.dim(), state.s_hat.len())?;
        model.refresh(state.tracker.sigma(), state.tracker.prev_sigma())?;
        Ok(OnlineSolver {
            model,
            config,
            state,
            schedule: None,
        })
    }

    pub fn set_schedule(&mut self, schedule: StepSchedule) {
        self.schedule = Some(schedule);
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn config(&self) -> &SolverConfig {
        &self.config
    }

    pub fn state(&self) -> &SolverState {
        &self.state
    }

    pub fn into_state(self) -> SolverState {
        self.state
    }

    pub fn step_factor(&self) -> f64 {
        self.config.step_factor.unwrap_or_else(|| self.model.step_factor())
    }

    /// `(alpha, beta)` in effect for the step leaving time `t`.
    pub fn step_sizes(&self) -> (f64, f64) {
        match &self.schedule {
            Some(f) => f(self.state.t),
            None => (self.config.alpha, self.config.beta),
        }
    }

    /// Prediction from time-`t` information, without mutating the state.
    pub fn predict(&self) -> Result<Prediction> {
        let s_t = &self.state.s_hat;
        let tg = self.model.time_gradient(s_t, self.config.h)?;
        let tgrad_norm = tg.norm();
        if self.config.p_steps == 0 {
            return Ok(Prediction { s_pred: s_t.clone(), tgrad_norm });
        }
        let rho = self.step_factor() * self.step_sizes().0;
        let g0 = gradient_with_recovery(&self.model, s_t)?;
        let hess = self.model.hessian_operator(s_t)?;
        let linear = g0 + tg * self.config.h;
        let mut x = s_t.clone();
        for _ in 0..self.config.p_steps {
            let grad = &linear + hess.apply(&(&x - s_t))?;
            x = safeguarded_prox(&self.model, &x, &grad, rho);
        }
        Ok(Prediction { s_pred: x, tgrad_norm })
    }

    /// `C` proximal gradient steps on the current cost starting at `start`.
    pub fn correct(&self, start: &DVector<f64>) -> Result<DVector<f64>> {
        let mut path = self.correction_path(start)?;
        Ok(path.pop().expect("path holds at least the start"))
    }

    /// Every correction iterate, `start` included.
    pub fn correction_path(&self, start: &DVector<f64>) -> Result<Vec<DVector<f64>>> {
        correction_iterates(&self.model, start, self.step_sizes().1, self.config.c_steps)
    }

    /// Consumes one sample: predict at `t`, update statistics, correct at `t + 1`.
    pub fn step(&mut self, x: &DVector<f64>) -> Result<RunRecord> {
        let started = Instant::now();
        let prediction = self.predict()?;
        let mut tracker = self.state.tracker.clone();
        tracker.update(x)?;
        self.model.refresh(tracker.sigma(), tracker.prev_sigma())?;
        self.state.tracker = tracker;
        // step sizes are indexed by the time the step leaves, so `t` is not advanced yet
        let corrected = self.correct(&prediction.s_pred)?;
        if corrected.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical(format!(
                "estimate diverged at sample {}; reduce the step sizes",
                self.state.t + 1
            )));
        }
        let td = temporal_deviation(&corrected, &self.state.s_hat)?;
        if let (Model::Sbm(m), Some(d)) = (&self.model, self.state.min_degree) {
            self.state.min_degree = Some(d.min(m.min_degree(&corrected)));
        }
        self.state.t += 1;
        self.state.s_pred = prediction.s_pred;
        self.state.s_hat = corrected;
        let n = self.model.n();
        Ok(RunRecord {
            t: self.state.t,
            edge_count: edge_count(&self.state.s_hat, self.model.space(), n, DEFAULT_EDGE_THRESHOLD),
            s_hat: self.state.s_hat.clone(),
            nse: None,
            td,
            tgrad_norm: prediction.tgrad_norm,
            step_seconds: started.elapsed().as_secs_f64(),
        })
    }

    /// Streams every signal through [`OnlineSolver::step`]; errors carry the
    /// 1-based sample index.
    pub fn run<I>(&mut self, signals: I) -> Result<Vec<RunRecord>>
    where
        I: IntoIterator<Item = Result<DVector<f64>>>,
    {
        let mut out = Vec::new();
        for (k, x) in signals.into_iter().enumerate() {
            let record = x.and_then(|x| self.step(&x)).map_err(|e| at_sample(k + 1, e))?;
            out.push(record);
        }
        Ok(out)
    }
}

/// `steps` proximal gradient iterations with step `beta` on `model`'s current
/// cost; returns every iterate, `start` included.
pub fn correction_iterates(
    model: &Model,
    start: &DVector<f64>,
    beta: f64,
    steps: usize,
) -> Result<Vec<DVector<f64>>> {
    let mut path = vec![start.clone()];
    for _ in 0..steps {
        let x = path.last().expect("nonempty");
        let grad = gradient_with_recovery(model, x)?;
        let next = safeguarded_prox(model, x, &grad, beta);
        path.push(next);
    }
    Ok(path)
}

fn at_sample(index: usize, e: Error) -> Error {
    match e {
        Error::Domain(m) => Error::Domain(format!("sample {index}: {m}")),
        Error::Numerical(m) => Error::Numerical(format!("sample {index}: {m}")),
        Error::NonFinite(m) => Error::NonFinite(format!("sample {index}: {m}")),
        other => other,
    }
}

/// Gradient evaluation; a failed factorization of a GGM iterate triggers a
/// projection onto the eigenvalue band and one retry.
fn gradient_with_recovery(model: &Model, s: &DVector<f64>) -> Result<DVector<f64>> {
    match model.gradient(s) {
        Err(Error::Domain(_)) if model.kind() == ModelKind::Ggm => model.gradient(&model.prox(s, 0.0)),
        other => other,
    }
}

/// Proximal step `prox(x - rho * grad, rho)`. If the result falls outside the
/// domain of the smooth part (an SBM node losing all its edges), the step is
/// pulled back toward `x` until the domain is regained.
fn safeguarded_prox(model: &Model, x: &DVector<f64>, grad: &DVector<f64>, rho: f64) -> DVector<f64> {
    let y = model.prox(&(x - grad * rho), rho);
    if model.kind() != ModelKind::Sbm || model.in_domain(&y) || !model.in_domain(x) {
        return y;
    }
    let mut theta = 0.5;
    loop {
        let z = x + (&y - x) * theta;
        if model.in_domain(&z) || theta < 1e-12 {
            return z;
        }
        theta *= 0.5;
    }
}
