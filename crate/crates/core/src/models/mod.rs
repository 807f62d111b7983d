//! Model oracles: objective, gradient, Hessian, time-gradient and the
//! proximal step of each graph learning model, in reduced coordinates.

pub mod ggm;
pub mod sbm;
pub mod sem;

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

pub use ggm::GgmOracle;
pub use sbm::SbmOracle;
pub use sem::SemOracle;

use crate::error::{check_len, Error, Result};
use crate::sparse::CsrMatrix;
use crate::vectorization::{unvech, Space, StructuredOperators};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ModelKind {
    Ggm,
    Sem,
    Sbm,
}

impl ModelKind {
    pub fn space(self) -> Space {
        match self {
            ModelKind::Ggm => Space::Half,
            ModelKind::Sem | ModelKind::Sbm => Space::HollowHalf,
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelKind::Ggm => "ggm",
            ModelKind::Sem => "sem",
            ModelKind::Sbm => "sbm",
        })
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ggm" => Ok(ModelKind::Ggm),
            "sem" => Ok(ModelKind::Sem),
            "sbm" => Ok(ModelKind::Sbm),
            other => Err(Error::Config(format!("unknown model '{other}' (expected ggm, sem or sbm)"))),
        }
    }
}

/// Hessian at a point, kept in a form that applies in better than `O(dim^2)`
/// where the structure allows it.
#[derive(Debug, Clone)]
pub enum HessianOp {
    /// `D^T (S^{-1} kron S^{-1}) D`, applied as `D^T vec(S^{-1} V S^{-1})`.
    Ggm {
        ops: Arc<StructuredOperators>,
        s_inv: DMatrix<f64>,
    },
    /// `Q_t`, independent of the point.
    Sem { q: Arc<CsrMatrix> },
    /// `lambda1 I + K^T Diag(weights) K` with `weights = lambda2 / (K s)^2`.
    Sbm {
        ops: Arc<StructuredOperators>,
        lambda1: f64,
        weights: DVector<f64>,
    },
}

impl HessianOp {
    pub fn dim(&self) -> usize {
        match self {
            HessianOp::Ggm { ops, .. } => ops.half_dim(),
            HessianOp::Sem { q } => q.ncols(),
            HessianOp::Sbm { ops, .. } => ops.hollow_dim(),
        }
    }

    pub fn apply(&self, v: &DVector<f64>) -> Result<DVector<f64>> {
        check_len(self.dim(), v.len())?;
        Ok(match self {
            HessianOp::Ggm { ops, s_inv } => {
                let m = unvech(ops.n(), v);
                ops.dup_transpose_sym(&(s_inv * m * s_inv))
            }
            HessianOp::Sem { q } => q.mul_vec(v),
            HessianOp::Sbm { ops, lambda1, weights } => {
                let kv = ops.degree_apply(v).component_mul(weights);
                v * *lambda1 + ops.degree_transpose_apply(&kv)
            }
        })
    }

    /// Column-by-column materialization; meant for diagnostics and tests.
    pub fn to_dense(&self) -> DMatrix<f64> {
        let k = self.dim();
        let mut out = DMatrix::zeros(k, k);
        let mut e = DVector::zeros(k);
        for c in 0..k {
            e[c] = 1.0;
            out.set_column(c, &self.apply(&e).expect("dimension matches by construction"));
            e[c] = 0.0;
        }
        out
    }
}

/// Common interface of the three model oracles.
///
/// The smooth part `f(s; t)` is served by `objective`/`gradient`/`hessian_*`,
/// the nonsmooth part `g(s)` by `regularizer` and `prox`. Covariance-dependent
/// caches are refreshed once per arriving sample.
pub trait GraphModel {
    fn kind(&self) -> ModelKind;
    fn ops(&self) -> &StructuredOperators;
    fn space(&self) -> Space;

    fn n(&self) -> usize {
        self.ops().n()
    }

    fn dim(&self) -> usize {
        self.space().dim(self.n())
    }

    fn refresh(&mut self, sigma: &DMatrix<f64>, prev_sigma: &DMatrix<f64>) -> Result<()>;
    fn objective(&self, s: &DVector<f64>) -> Result<f64>;
    fn regularizer(&self, s: &DVector<f64>) -> f64;
    fn gradient(&self, s: &DVector<f64>) -> Result<DVector<f64>>;
    fn hessian_operator(&self, s: &DVector<f64>) -> Result<HessianOp>;

    fn hessian_vec(&self, s: &DVector<f64>, v: &DVector<f64>) -> Result<DVector<f64>> {
        self.hessian_operator(s)?.apply(v)
    }

    /// Mixed derivative of the gradient with respect to time.
    fn time_gradient(&self, s: &DVector<f64>, h: f64) -> Result<DVector<f64>>;
    fn prox(&self, u: &DVector<f64>, step: f64) -> DVector<f64>;
    /// Multiplier applied to the prediction step size.
    fn step_factor(&self) -> f64;
    fn initial_point(&self) -> DVector<f64>;
    /// Membership in the constraint set (or domain of `g`).
    fn is_feasible(&self, s: &DVector<f64>) -> bool;
    /// Membership in the domain where `f` and its derivatives are defined.
    fn in_domain(&self, s: &DVector<f64>) -> bool;
    /// A local estimate of the gradient Lipschitz constant around `s`.
    fn lipschitz_hint(&self, s: &DVector<f64>) -> f64;
}

/// Hyperparameters sufficient to rebuild a model oracle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ModelSpec {
    Ggm { xi: f64, chi: f64 },
    Sem { lambda: f64 },
    Sbm { lambda1: f64, lambda2: f64 },
}

impl ModelSpec {
    pub fn kind(&self) -> ModelKind {
        match self {
            ModelSpec::Ggm { .. } => ModelKind::Ggm,
            ModelSpec::Sem { .. } => ModelKind::Sem,
            ModelSpec::Sbm { .. } => ModelKind::Sbm,
        }
    }

    pub fn build(&self, n: usize) -> Result<Model> {
        self.build_with(Arc::new(StructuredOperators::new(n)?))
    }

    pub fn build_with(&self, ops: Arc<StructuredOperators>) -> Result<Model> {
        Ok(match *self {
            ModelSpec::Ggm { xi, chi } => Model::Ggm(GgmOracle::with_operators(ops, xi, chi)?),
            ModelSpec::Sem { lambda } => Model::Sem(SemOracle::with_operators(ops, lambda)?),
            ModelSpec::Sbm { lambda1, lambda2 } => {
                Model::Sbm(SbmOracle::with_operators(ops, lambda1, lambda2)?)
            }
        })
    }
}

/// Any of the three oracles behind one concrete type.
#[derive(Debug, Clone)]
pub enum Model {
    Ggm(GgmOracle),
    Sem(SemOracle),
    Sbm(SbmOracle),
}

macro_rules! delegate {
    ($self:ident, $m:ident => $e:expr) => {
        match $self {
            Model::Ggm($m) => $e,
            Model::Sem($m) => $e,
            Model::Sbm($m) => $e,
        }
    };
}

impl GraphModel for Model {
    fn kind(&self) -> ModelKind {
        delegate!(self, m => m.kind())
    }
    fn ops(&self) -> &StructuredOperators {
        delegate!(self, m => m.ops())
    }
    fn space(&self) -> Space {
        delegate!(self, m => m.space())
    }
    fn refresh(&mut self, sigma: &DMatrix<f64>, prev_sigma: &DMatrix<f64>) -> Result<()> {
        delegate!(self, m => m.refresh(sigma, prev_sigma))
    }
    fn objective(&self, s: &DVector<f64>) -> Result<f64> {
        delegate!(self, m => m.objective(s))
    }
    fn regularizer(&self, s: &DVector<f64>) -> f64 {
        delegate!(self, m => m.regularizer(s))
    }
    fn gradient(&self, s: &DVector<f64>) -> Result<DVector<f64>> {
        delegate!(self, m => m.gradient(s))
    }
    fn hessian_operator(&self, s: &DVector<f64>) -> Result<HessianOp> {
        delegate!(self, m => m.hessian_operator(s))
    }
    fn time_gradient(&self, s: &DVector<f64>, h: f64) -> Result<DVector<f64>> {
        delegate!(self, m => m.time_gradient(s, h))
    }
    fn prox(&self, u: &DVector<f64>, step: f64) -> DVector<f64> {
        delegate!(self, m => m.prox(u, step))
    }
    fn step_factor(&self) -> f64 {
        delegate!(self, m => m.step_factor())
    }
    fn initial_point(&self) -> DVector<f64> {
        delegate!(self, m => m.initial_point())
    }
    fn is_feasible(&self, s: &DVector<f64>) -> bool {
        delegate!(self, m => m.is_feasible(s))
    }
    fn in_domain(&self, s: &DVector<f64>) -> bool {
        delegate!(self, m => m.in_domain(s))
    }
    fn lipschitz_hint(&self, s: &DVector<f64>) -> f64 {
        delegate!(self, m => m.lipschitz_hint(s))
    }
}

impl Model {
    pub fn spec(&self) -> ModelSpec {
        match self {
            Model::Ggm(m) => ModelSpec::Ggm { xi: m.xi(), chi: m.chi() },
            Model::Sem(m) => ModelSpec::Sem { lambda: m.lambda() },
            Model::Sbm(m) => ModelSpec::Sbm { lambda1: m.lambda1(), lambda2: m.lambda2() },
        }
    }

    /// Curvature context valid on the convex hull of `points` (and, for SEM,
    /// of the covariances in `sigmas`).
    ///
    /// GGM uses the spectral range of the points, SEM the spectral range of the
    /// covariances, SBM the smallest node degree. Extremes over a segment are
    /// attained at its endpoints for all three, so these are certified bounds.
    pub fn local_context(&self, points: &[&DVector<f64>], sigmas: &[&DMatrix<f64>]) -> ConstantsContext {
        match self {
            Model::Ggm(m) => {
                let (mut lo, mut hi) = (f64::INFINITY, 0.0_f64);
                for p in points {
                    let eig = unvech(m.ops().n(), p).symmetric_eigenvalues();
                    lo = lo.min(eig.min());
                    hi = hi.max(eig.max());
                }
                if points.is_empty() {
                    (lo, hi) = (m.xi(), m.chi());
                }
                ConstantsContext::Ggm { xi: lo.max(m.xi()), chi: hi.min(m.chi()) }
            }
            Model::Sem(_) => {
                let (mut lo, mut hi) = (f64::INFINITY, 0.0_f64);
                for s in sigmas {
                    let eig = (*s).clone().symmetric_eigenvalues();
                    lo = lo.min(eig.min());
                    hi = hi.max(eig.max());
                }
                if sigmas.is_empty() {
                    lo = 0.0;
                }
                ConstantsContext::Sem { lambda_min: lo.max(0.0), lambda_max: hi }
            }
            Model::Sbm(m) => {
                let d_min = points
                    .iter()
                    .map(|p| m.min_degree(p))
                    .fold(f64::INFINITY, f64::min);
                ConstantsContext::Sbm {
                    lambda1: m.lambda1(),
                    lambda2: m.lambda2(),
                    n: m.ops().n(),
                    d_min: if d_min.is_finite() { d_min } else { sbm::DEGREE_FLOOR },
                }
            }
        }
    }
}

/// Strong convexity `m` and gradient Lipschitz `l` constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Curvature {
    pub m: f64,
    pub l: f64,
}

impl Curvature {
    /// Contraction factor `max(|1 - rho m|, |1 - rho L|)` of a gradient step.
    pub fn contraction(&self, rho: f64) -> f64 {
        (1.0 - rho * self.m).abs().max((1.0 - rho * self.l).abs())
    }
}

/// Constants as stated by the convexity claims (`stated`) and as certified by
/// the Hessian spectrum (`certified`). The two differ for GGM and SBM.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelConstants {
    pub stated: Curvature,
    pub certified: Curvature,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ConstantsContext {
    Ggm { xi: f64, chi: f64 },
    Sem { lambda_min: f64, lambda_max: f64 },
    Sbm { lambda1: f64, lambda2: f64, n: usize, d_min: f64 },
}

pub fn model_constants(kind: ModelKind, context: &ConstantsContext) -> Result<ModelConstants> {
    match (kind, *context) {
        (ModelKind::Ggm, ConstantsContext::Ggm { xi, chi }) => {
            if !(xi > 0.0 && chi >= xi) {
                return Err(Error::Domain(format!("invalid eigenvalue band [{xi}, {chi}]")));
            }
            Ok(ModelConstants {
                stated: Curvature { m: 1.0 / chi, l: 2.0 / xi },
                certified: Curvature { m: 1.0 / (chi * chi), l: 2.0 / (xi * xi) },
            })
        }
        (ModelKind::Sem, ConstantsContext::Sem { lambda_min, lambda_max }) => {
            let c = Curvature { m: lambda_min, l: 2.0 * lambda_max };
            Ok(ModelConstants { stated: c, certified: c })
        }
        (ModelKind::Sbm, ConstantsContext::Sbm { lambda1, lambda2, n, d_min }) => {
            if !(d_min > 0.0) {
                return Err(Error::Domain(format!("minimum degree must be positive, got {d_min}")));
            }
            let barrier = 2.0 * lambda2 * (n as f64 - 1.0) / (d_min * d_min);
            Ok(ModelConstants {
                stated: Curvature { m: 2.0 * lambda1, l: barrier },
                certified: Curvature { m: lambda1, l: lambda1 + barrier },
            })
        }
        (kind, ctx) => Err(Error::Config(format!("constants context {ctx:?} does not fit model {kind}"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stated_constants() {
        let c = model_constants(ModelKind::Ggm, &ConstantsContext::Ggm { xi: 0.5, chi: 2.0 }).unwrap();
        assert_eq!((c.stated.m, c.stated.l), (0.5, 4.0));
        assert_eq!((c.certified.m, c.certified.l), (0.25, 8.0));

        let c = model_constants(
            ModelKind::Sem,
            &ConstantsContext::Sem { lambda_min: 0.1, lambda_max: 3.0 },
        )
        .unwrap();
        assert_eq!((c.stated.m, c.stated.l), (0.1, 6.0));

        let ctx = ConstantsContext::Sbm { lambda1: 1.0, lambda2: 10.0, n: 28, d_min: 1.0 };
        let c = model_constants(ModelKind::Sbm, &ctx).unwrap();
        assert_eq!(c.stated.l, 540.0);
        assert_eq!(c.stated.m, 2.0);
        assert_eq!((c.certified.m, c.certified.l), (1.0, 541.0));
    }

    #[test]
    fn mismatched_context_is_rejected() {
        let ctx = ConstantsContext::Ggm { xi: 0.5, chi: 2.0 };
        assert!(matches!(model_constants(ModelKind::Sem, &ctx), Err(Error::Config(_))));
        let ctx = ConstantsContext::Sbm { lambda1: 1.0, lambda2: 1.0, n: 3, d_min: 0.0 };
        assert!(model_constants(ModelKind::Sbm, &ctx).is_err());
    }

    #[test]
    fn contraction_factor() {
        let c = Curvature { m: 1.0, l: 4.0 };
        assert_eq!(c.contraction(0.25), 0.75);
        assert!((c.contraction(0.4) - 0.6).abs() < 1e-15);
        assert!(c.contraction(0.5) >= 1.0);
    }

    #[test]
    fn kind_parsing() {
        assert_eq!("SEM".parse::<ModelKind>().unwrap(), ModelKind::Sem);
        assert!("lasso".parse::<ModelKind>().is_err());
        assert_eq!(ModelKind::Sbm.to_string(), "sbm");
    }

    #[test]
    fn spec_round_trip() {
        for spec in [
            ModelSpec::Ggm { xi: 0.1, chi: 10.0 },
            ModelSpec::Sem { lambda: 0.5 },
            ModelSpec::Sbm { lambda1: 1.0, lambda2: 2.0 },
        ] {
            let m = spec.build(4).unwrap();
            assert_eq!(m.spec(), spec);
            assert_eq!(m.kind(), spec.kind());
            assert_eq!(m.dim(), spec.kind().space().dim(4));
            assert!(m.is_feasible(&m.initial_point()));
        }
    }
}
