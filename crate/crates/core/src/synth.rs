//! Synthetic graph trajectories and model-consistent signal streams.
//!
//! Every random draw comes from its own ChaCha substream keyed by purpose and
//! index, so a sample never depends on how many samples were drawn before it.

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::ModelKind;

/// Noise variance of the SEM and SBM generators.
pub const DEFAULT_NOISE_VARIANCE: f64 = 0.5;
/// Default edge probability of an `n`-node seed graph.
///
/// Sparse graphs keep the SEM covariance off-diagonals large after the spectral
/// cap is applied, which is what lets a lasso penalty of order one see edges at
/// all. The logarithmic term stays above the ER connectivity threshold so the
/// rejection loop rarely needs more than a few attempts.
pub fn default_density(n: usize) -> f64 {
    let n = n.max(2) as f64;
    (1.2 * n.ln() / n).clamp(0.1, 1.0)
}
/// Spectral radius cap of every SEM adjacency along the trajectory.
pub const SEM_SPECTRAL_CAP: f64 = 0.95;
const MAX_CONNECT_ATTEMPTS: u64 = 100;

const STREAM_GRAPH: u64 = 1;
const STREAM_SELECTION: u64 = 2;
const STREAM_WARMUP: u64 = 1 << 40;
const STREAM_SIGNAL: u64 = 1 << 41;

fn substream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Scenario {
    /// Edges at half of the nodes double their weight once, after `T/2` samples.
    Piecewise,
    /// `S_t(i, j) = S_0(i, j) (1 + exp(-0.01 i j t))` with 1-based indices.
    Smooth,
    /// `S_t = S_0` throughout.
    Static,
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scenario::Piecewise => "piecewise",
            Scenario::Smooth => "smooth",
            Scenario::Static => "static",
        })
    }
}

impl FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "piecewise" => Ok(Scenario::Piecewise),
            "smooth" => Ok(Scenario::Smooth),
            "static" => Ok(Scenario::Static),
            other => Err(Error::Config(format!(
                "unknown scenario '{other}' (expected piecewise, smooth or static)"
            ))),
        }
    }
}

/// Breadth-first reachability over the nonzero off-diagonal pattern.
pub fn is_connected(w: &DMatrix<f64>) -> bool {
    let n = w.nrows();
    if n == 0 {
        return true;
    }
    let mut seen = vec![false; n];
    let mut queue = VecDeque::from([0]);
    seen[0] = true;
    while let Some(i) = queue.pop_front() {
        for j in 0..n {
            if !seen[j] && i != j && w[(i, j)] != 0.0 {
                seen[j] = true;
                queue.push_back(j);
            }
        }
    }
    seen.into_iter().all(|s| s)
}

/// Connected Erdos-Renyi graph with weights uniform in `[0.5, 1.5]`.
pub fn generate_seed_graph(n: usize, density: f64, seed: u64) -> Result<DMatrix<f64>> {
    if n < 2 {
        return Err(Error::Domain(format!("a graph needs at least 2 nodes, got {n}")));
    }
    if !(density > 0.0 && density <= 1.0) {
        return Err(Error::Config(format!("edge density must lie in (0, 1], got {density}")));
    }
    for attempt in 0..MAX_CONNECT_ATTEMPTS {
        let mut rng = substream(seed, STREAM_GRAPH + (attempt << 8));
        let mut w = DMatrix::zeros(n, n);
        for j in 0..n {
            for i in j + 1..n {
                if rng.random::<f64>() < density {
                    let v = rng.random_range(0.5..=1.5);
                    w[(i, j)] = v;
                    w[(j, i)] = v;
                }
            }
        }
        if is_connected(&w) {
            return Ok(w);
        }
    }
    Err(Error::Generation(format!(
        "no connected graph with {n} nodes at density {density} after {MAX_CONNECT_ATTEMPTS} attempts"
    )))
}

fn spectral_radius(m: &DMatrix<f64>) -> f64 {
    m.clone().symmetric_eigenvalues().amax()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphTrajectory {
    n: usize,
    scenario: Scenario,
    horizon: usize,
    seed: u64,
    s0: DMatrix<f64>,
    /// Nodes whose edges double in the piecewise scenario (0-based, sorted).
    selected: Vec<usize>,
}

impl GraphTrajectory {
    pub fn new(n: usize, scenario: Scenario, horizon: usize, density: f64, seed: u64) -> Result<Self> {
        let s0 = generate_seed_graph(n, density, seed)?;
        Ok(Self::from_seed_graph(s0, scenario, horizon, seed))
    }

    pub fn from_seed_graph(s0: DMatrix<f64>, scenario: Scenario, horizon: usize, seed: u64) -> Self {
        let n = s0.nrows();
        let mut rng = substream(seed, STREAM_SELECTION);
        let mut selected = rand::seq::index::sample(&mut rng, n, n.div_ceil(2)).into_vec();
        selected.sort_unstable();
        GraphTrajectory { n, scenario, horizon, seed, s0, selected }
    }

    /// Multiplies the seed weights by `factor`.
    pub fn scaled(mut self, factor: f64) -> Self {
        self.s0 *= factor;
        self
    }

    /// Rescales the seed graph so that every adjacency along the trajectory has
    /// spectral radius exactly `cap`, keeping `I - S_t` well conditioned.
    pub fn with_spectral_cap(self, cap: f64) -> Result<Self> {
        let worst = self.peak_graph();
        let rho = spectral_radius(&worst);
        if !(rho > 0.0) {
            return Err(Error::Generation("seed graph has no edges".into()));
        }
        Ok(self.scaled(cap / rho))
    }

    /// Entrywise largest graph of the trajectory; every `S_t` is dominated by it.
    fn peak_graph(&self) -> DMatrix<f64> {
        match self.scenario {
            Scenario::Static => self.s0.clone(),
            Scenario::Piecewise => self.doubled(),
            Scenario::Smooth => self.smooth_at(0.0),
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn scenario(&self) -> Scenario {
        self.scenario
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn seed_graph(&self) -> &DMatrix<f64> {
        &self.s0
    }

    pub fn selected_nodes(&self) -> &[usize] {
        &self.selected
    }

    /// Last sample index generated from the seed graph in the piecewise scenario.
    pub fn change_point(&self) -> usize {
        self.horizon / 2
    }

    fn doubled(&self) -> DMatrix<f64> {
        let mut s = self.s0.clone();
        let mut hit = vec![false; self.n];
        for &i in &self.selected {
            hit[i] = true;
        }
        for j in 0..self.n {
            for i in 0..self.n {
                if i != j && (hit[i] || hit[j]) {
                    s[(i, j)] *= 2.0;
                }
            }
        }
        s
    }

    fn smooth_at(&self, t: f64) -> DMatrix<f64> {
        let mut s = DMatrix::zeros(self.n, self.n);
        for j in 0..self.n {
            for i in j + 1..self.n {
                let (a, b) = ((i + 1) as f64, (j + 1) as f64);
                let v = self.s0[(i, j)] * (1.0 + (-0.01 * a * b * t).exp());
                s[(i, j)] = v;
                s[(j, i)] = v;
            }
        }
        s
    }

    /// Graph generating sample `t`, for `0 <= t <= T`.
    pub fn at(&self, t: usize) -> Result<DMatrix<f64>> {
        if t > self.horizon {
            return Err(Error::Domain(format!(
                "time index {t} outside the horizon 0..={}",
                self.horizon
            )));
        }
        Ok(match self.scenario {
            Scenario::Static => self.s0.clone(),
            Scenario::Piecewise if t > self.change_point() => self.doubled(),
            Scenario::Piecewise => self.s0.clone(),
            Scenario::Smooth => self.smooth_at(t as f64),
        })
    }

    /// Shift `delta` making every precision `S_t + delta I` have eigenvalues
    /// in `[1, 1 + 2 max_rowsum]`: Gershgorin with the entrywise peak graph.
    pub fn precision_shift(&self) -> f64 {
        let peak = self.peak_graph();
        peak.row_iter().map(|r| r.sum()).fold(0.0, f64::max) + 1.0
    }
}

/// Draws signals of one model along a trajectory.
#[derive(Debug, Clone)]
pub struct SignalSampler {
    kind: ModelKind,
    noise_variance: f64,
    precision_shift: f64,
    cache: Option<(DMatrix<f64>, DMatrix<f64>)>,
}

impl SignalSampler {
    pub fn new(kind: ModelKind, noise_variance: f64, precision_shift: f64) -> Result<Self> {
        if !(noise_variance > 0.0) {
            return Err(Error::Config(format!("noise variance must be positive, got {noise_variance}")));
        }
        Ok(SignalSampler { kind, noise_variance, precision_shift, cache: None })
    }

    /// Linear map `A` with `x = A z`, `z` standard normal.
    fn mixing(&self, s: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let n = s.nrows();
        match self.kind {
            ModelKind::Ggm => {
                let theta = s + DMatrix::identity(n, n) * self.precision_shift;
                let chol = Cholesky::<f64, Dyn>::new(theta).ok_or_else(|| {
                    Error::Generation("precision matrix is not positive definite".into())
                })?;
                // x = L^{-T} z has covariance (L L^T)^{-1}
                let l_inv_t = chol
                    .l()
                    .solve_lower_triangular(&DMatrix::identity(n, n))
                    .ok_or_else(|| Error::Generation("singular Cholesky factor".into()))?
                    .transpose();
                Ok(l_inv_t)
            }
            ModelKind::Sem => {
                let a = DMatrix::identity(n, n) - s;
                let inv = a.try_inverse().ok_or_else(|| {
                    Error::Generation("I - S is singular; rescale the edge weights".into())
                })?;
                Ok(inv * self.noise_variance.sqrt())
            }
            ModelKind::Sbm => {
                let lap = DMatrix::from_diagonal(&s.column_sum()) - s;
                let pinv = lap
                    .pseudo_inverse(1e-10)
                    .map_err(|e| Error::Generation(format!("Laplacian pseudo-inverse failed: {e}")))?;
                let cov = (&pinv + pinv.transpose()) * 0.5 + DMatrix::identity(n, n) * self.noise_variance;
                let chol = Cholesky::<f64, Dyn>::new(cov)
                    .ok_or_else(|| Error::Generation("signal covariance is not positive definite".into()))?;
                Ok(chol.l())
            }
        }
    }

    /// Covariance of the signals generated by `s`.
    pub fn covariance(&mut self, s: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let a = self.factor(s)?;
        Ok(&a * a.transpose())
    }

    fn factor(&mut self, s: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if let Some((key, a)) = &self.cache {
            if key == s {
                return Ok(a.clone());
            }
        }
        let a = self.mixing(s)?;
        self.cache = Some((s.clone(), a.clone()));
        Ok(a)
    }

    pub fn sample(&mut self, s: &DMatrix<f64>, rng: &mut impl Rng) -> Result<DVector<f64>> {
        let a = self.factor(s)?;
        let z = DVector::from_fn(s.nrows(), |_, _| StandardNormal.sample(rng));
        Ok(a * z)
    }
}

/// One draw for the given graph; see [`SignalSampler`] for the mechanisms.
pub fn sample_signal(
    s: &DMatrix<f64>,
    kind: ModelKind,
    noise_variance: f64,
    rng: &mut impl Rng,
) -> Result<DVector<f64>> {
    SignalSampler::new(kind, noise_variance, 0.0)?.sample(s, rng)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub kind: ModelKind,
    pub scenario: Scenario,
    pub n: usize,
    pub horizon: usize,
    pub warmup: usize,
    pub density: f64,
    pub noise_variance: f64,
    pub seed: u64,
}

impl SynthSpec {
    pub fn new(kind: ModelKind, scenario: Scenario, n: usize, horizon: usize, seed: u64) -> Self {
        SynthSpec {
            kind,
            scenario,
            n,
            horizon,
            warmup: n,
            density: default_density(n),
            noise_variance: DEFAULT_NOISE_VARIANCE,
            seed,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticData {
    pub trajectory: GraphTrajectory,
    /// Pre-stream samples, drawn from the graph at `t = 1`.
    pub warmup: Vec<DVector<f64>>,
    /// `signals[k]` is sample `t = k + 1`.
    pub signals: Vec<DVector<f64>>,
}

/// Builds the trajectory for `spec.kind` and draws warm-up and stream samples.
pub fn generate(spec: &SynthSpec) -> Result<SyntheticData> {
    let mut trajectory = GraphTrajectory::new(spec.n, spec.scenario, spec.horizon, spec.density, spec.seed)?;
    if spec.kind == ModelKind::Sem {
        trajectory = trajectory.with_spectral_cap(SEM_SPECTRAL_CAP)?;
    }
    let mut sampler = SignalSampler::new(spec.kind, spec.noise_variance, trajectory.precision_shift())?;
    let first = trajectory.at(spec.horizon.min(1))?;
    let warmup = (0..spec.warmup as u64)
        .map(|k| sampler.sample(&first, &mut substream(spec.seed, STREAM_WARMUP + k)))
        .collect::<Result<Vec<_>>>()?;
    let mut signals = Vec::with_capacity(spec.horizon);
    for t in 1..=spec.horizon {
        let s = trajectory.at(t)?;
        signals.push(sampler.sample(&s, &mut substream(spec.seed, STREAM_SIGNAL + t as u64))?);
    }
    Ok(SyntheticData { trajectory, warmup, signals })
}
