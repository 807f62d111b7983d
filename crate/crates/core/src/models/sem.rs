//! Time-varying structural equation model in hh-space with an l1 penalty.
//!
//! The least-squares fit `(1/2T)||X - S X||_F^2` reduces to the quadratic
//! `1/2 s^T Q s - 2 s^T sigma_hh + 1/2 tr(sigma)` with
//! `Q = D_h^T (sigma kron I) D_h`.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use super::{GraphModel, HessianOp, ModelKind};
use crate::error::{check_len, Error, Result};
use crate::sparse::CsrMatrix;
use crate::vectorization::{hollow_index, vechh_unchecked, Space, StructuredOperators};

/// Assembles `Q = D_h^T (sigma kron I) D_h` from the index structure of `D_h`.
///
/// Entry `(e, f)` for edges `e = {i, j}`, `f` is the sum over shared endpoints
/// `v` of `sigma[other_e(v), other_f(v)]`, so each row has `2(N-2) + 1` nonzeros.
pub fn build_q(ops: &StructuredOperators, sigma: &DMatrix<f64>) -> Result<CsrMatrix> {
    let n = ops.n();
    check_len(n, sigma.nrows())?;
    check_len(n, sigma.ncols())?;
    let edge = |a: usize, b: usize| {
        if a > b {
            hollow_index(n, a, b)
        } else {
            hollow_index(n, b, a)
        }
    };
    let rows = ops
        .hollow_pairs()
        .iter()
        .map(|&(i, j)| {
            let mut row = Vec::with_capacity(2 * n);
            row.push((edge(i, j), sigma[(i, i)] + sigma[(j, j)]));
            for m in 0..n {
                if m == i || m == j {
                    continue;
                }
                row.push((edge(i, m), sigma[(j, m)]));
                row.push((edge(j, m), sigma[(i, m)]));
            }
            row
        })
        .collect();
    Ok(CsrMatrix::from_rows(ops.hollow_dim(), rows))
}

/// Soft thresholding `sign(u) * max(|u| - 2 step lambda, 0)`.
pub fn soft_threshold(u: &DVector<f64>, step: f64, lambda: f64) -> DVector<f64> {
    let tau = 2.0 * step * lambda;
    u.map(|v| v.signum() * (v.abs() - tau).max(0.0))
}

#[derive(Debug, Clone)]
struct Snapshot {
    sigma: DMatrix<f64>,
    q: Arc<CsrMatrix>,
    sigma_hh: DVector<f64>,
    sigma_tr: f64,
}

impl Snapshot {
    fn build(ops: &StructuredOperators, sigma: &DMatrix<f64>) -> Result<Self> {
        Ok(Snapshot {
            sigma: sigma.clone(),
            q: Arc::new(build_q(ops, sigma)?),
            sigma_hh: vechh_unchecked(sigma),
            sigma_tr: sigma.trace(),
        })
    }
}

#[derive(Debug, Clone)]
pub struct SemOracle {
    lambda: f64,
    ops: Arc<StructuredOperators>,
    current: Snapshot,
    previous: Snapshot,
}

impl SemOracle {
    pub fn new(n: usize, lambda: f64) -> Result<Self> {
        Self::with_operators(Arc::new(StructuredOperators::new(n)?), lambda)
    }

    pub fn with_operators(ops: Arc<StructuredOperators>, lambda: f64) -> Result<Self> {
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(Error::Config(format!("sparsity weight must be >= 0, got {lambda}")));
        }
        let zero = Snapshot::build(&ops, &DMatrix::zeros(ops.n(), ops.n()))?;
        Ok(SemOracle {
            lambda,
            ops,
            previous: zero.clone(),
            current: zero,
        })
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn q(&self) -> &CsrMatrix {
        &self.current.q
    }

    pub fn q_prev(&self) -> &CsrMatrix {
        &self.previous.q
    }

    pub fn sigma(&self) -> &DMatrix<f64> {
        &self.current.sigma
    }

    pub fn sigma_hh(&self) -> &DVector<f64> {
        &self.current.sigma_hh
    }

    /// Extreme eigenvalues of the current covariance.
    pub fn sigma_eigen_range(&self) -> (f64, f64) {
        let eig = self.current.sigma.clone().symmetric_eigenvalues();
        (eig.min(), eig.max())
    }

    /// `(1/h) [(Q_t - Q_{t-1}) s - 2 (sigma_t - sigma_{t-1})]`.
    pub fn time_gradient_of(
        s: &DVector<f64>,
        q: &CsrMatrix,
        q_prev: &CsrMatrix,
        sigma_hh: &DVector<f64>,
        sigma_hh_prev: &DVector<f64>,
        h: f64,
    ) -> Result<DVector<f64>> {
        check_len(q.ncols(), s.len())?;
        check_len(q_prev.ncols(), s.len())?;
        check_len(s.len(), sigma_hh.len())?;
        check_len(s.len(), sigma_hh_prev.len())?;
        let dq = q.mul_vec(s) - q_prev.mul_vec(s);
        Ok((dq - (sigma_hh - sigma_hh_prev) * 2.0) / h)
    }
}

impl GraphModel for SemOracle {
    fn kind(&self) -> ModelKind {
        ModelKind::Sem
    }

    fn ops(&self) -> &StructuredOperators {
        &self.ops
    }

    fn space(&self) -> Space {
        Space::HollowHalf
    }

    fn refresh(&mut self, sigma: &DMatrix<f64>, prev_sigma: &DMatrix<f64>) -> Result<()> {
        check_len(self.ops.n(), sigma.nrows())?;
        check_len(self.ops.n(), prev_sigma.nrows())?;
        // a stream step shifts the current snapshot into the lag slot
        let previous = if &self.current.sigma == prev_sigma {
            self.current.clone()
        } else {
            Snapshot::build(&self.ops, prev_sigma)?
        };
        let current = if sigma == prev_sigma {
            previous.clone()
        } else {
            Snapshot::build(&self.ops, sigma)?
        };
        self.previous = previous;
        self.current = current;
        Ok(())
    }

    fn objective(&self, s: &DVector<f64>) -> Result<f64> {
        check_len(self.ops.hollow_dim(), s.len())?;
        let c = &self.current;
        Ok(0.5 * s.dot(&c.q.mul_vec(s)) - 2.0 * s.dot(&c.sigma_hh) + 0.5 * c.sigma_tr)
    }

    fn regularizer(&self, s: &DVector<f64>) -> f64 {
        2.0 * self.lambda * s.lp_norm(1)
    }

    fn gradient(&self, s: &DVector<f64>) -> Result<DVector<f64>> {
        check_len(self.ops.hollow_dim(), s.len())?;
        Ok(self.current.q.mul_vec(s) - &self.current.sigma_hh * 2.0)
    }

    fn hessian_operator(&self, s: &DVector<f64>) -> Result<HessianOp> {
        check_len(self.ops.hollow_dim(), s.len())?;
        Ok(HessianOp::Sem {
            q: self.current.q.clone(),
        })
    }

    fn time_gradient(&self, s: &DVector<f64>, h: f64) -> Result<DVector<f64>> {
        Self::time_gradient_of(
            s,
            &self.current.q,
            &self.previous.q,
            &self.current.sigma_hh,
            &self.previous.sigma_hh,
            h,
        )
    }

    fn prox(&self, u: &DVector<f64>, step: f64) -> DVector<f64> {
        soft_threshold(u, step, self.lambda)
    }

    fn step_factor(&self) -> f64 {
        1.0
    }

    fn initial_point(&self) -> DVector<f64> {
        DVector::zeros(self.ops.hollow_dim())
    }

    fn is_feasible(&self, s: &DVector<f64>) -> bool {
        s.len() == self.ops.hollow_dim() && s.iter().all(|v| v.is_finite())
    }

    fn in_domain(&self, s: &DVector<f64>) -> bool {
        self.is_feasible(s)
    }

    fn lipschitz_hint(&self, _s: &DVector<f64>) -> f64 {
        (2.0 * self.sigma_eigen_range().1).max(1e-12)
    }
}
