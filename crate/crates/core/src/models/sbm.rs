//! Smoothness-based model: the Laplacian quadratic form `tr(L sigma)` of a
//! nonnegative weighted graph, with a degree log-barrier and a Frobenius term.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use super::{GraphModel, HessianOp, ModelKind};
use crate::error::{check_len, Error, Result};
use crate::vectorization::{vechh_unchecked, Space, StructuredOperators};

/// Smallest degree ever reported as a curvature context.
pub const DEGREE_FLOOR: f64 = 1e-6;

/// Linear coefficient `z = K^T diag(sigma) - 2 vechh(sigma)`.
pub fn sbm_z(ops: &StructuredOperators, sigma: &DMatrix<f64>) -> Result<DVector<f64>> {
    check_len(ops.n(), sigma.nrows())?;
    check_len(ops.n(), sigma.ncols())?;
    let diag = sigma.diagonal();
    Ok(ops.degree_transpose_apply(&diag) - vechh_unchecked(sigma) * 2.0)
}

/// Node degrees `K s`, rejecting any nonpositive entry when the barrier is active.
fn degrees(ops: &StructuredOperators, s: &DVector<f64>, lambda2: f64) -> Result<DVector<f64>> {
    check_len(ops.hollow_dim(), s.len())?;
    let d = ops.degree_apply(s);
    if lambda2 > 0.0 {
        if let Some(i) = d.iter().position(|&v| !(v > 0.0)) {
            return Err(Error::Domain(format!(
                "degree of node {} is {} but the log barrier needs it positive",
                i + 1,
                d[i]
            )));
        }
    }
    Ok(d)
}

/// `s^T z - lambda2 sum log(K s) + lambda1/2 ||s||^2`.
pub fn sbm_objective(
    ops: &StructuredOperators,
    s: &DVector<f64>,
    z: &DVector<f64>,
    lambda1: f64,
    lambda2: f64,
) -> Result<f64> {
    check_len(s.len(), z.len())?;
    let d = degrees(ops, s, lambda2)?;
    let barrier = if lambda2 > 0.0 {
        lambda2 * d.iter().map(|v| v.ln()).sum::<f64>()
    } else {
        0.0
    };
    Ok(s.dot(z) - barrier + 0.5 * lambda1 * s.norm_squared())
}

/// `lambda1 s - lambda2 K^T (1 / K s) + z`.
pub fn sbm_gradient(
    ops: &StructuredOperators,
    s: &DVector<f64>,
    z: &DVector<f64>,
    lambda1: f64,
    lambda2: f64,
) -> Result<DVector<f64>> {
    check_len(s.len(), z.len())?;
    let d = degrees(ops, s, lambda2)?;
    let mut g = s * lambda1 + z;
    if lambda2 > 0.0 {
        g -= ops.degree_transpose_apply(&d.map(|v| 1.0 / v)) * lambda2;
    }
    Ok(g)
}

/// Dense `lambda1 I + lambda2 K^T Diag(1 / (K s)^2) K`.
pub fn sbm_hessian(
    ops: &StructuredOperators,
    s: &DVector<f64>,
    lambda1: f64,
    lambda2: f64,
) -> Result<DMatrix<f64>> {
    let d = degrees(ops, s, lambda2)?;
    let l = ops.hollow_dim();
    let mut h = DMatrix::identity(l, l) * lambda1;
    if lambda2 > 0.0 {
        let k = ops.degree_dense();
        let w = DMatrix::from_diagonal(&d.map(|v| lambda2 / (v * v)));
        h += k.transpose() * w * k;
    }
    Ok(h)
}

pub fn sbm_time_gradient(z: &DVector<f64>, z_prev: &DVector<f64>, h: f64) -> Result<DVector<f64>> {
    check_len(z.len(), z_prev.len())?;
    Ok((z - z_prev) / h)
}

pub fn project_nonnegative(s: &DVector<f64>) -> DVector<f64> {
    s.map(|v| v.max(0.0))
}

#[derive(Debug, Clone)]
pub struct SbmOracle {
    lambda1: f64,
    lambda2: f64,
    ops: Arc<StructuredOperators>,
    z: DVector<f64>,
    z_prev: DVector<f64>,
}

impl SbmOracle {
    pub fn new(n: usize, lambda1: f64, lambda2: f64) -> Result<Self> {
        Self::with_operators(Arc::new(StructuredOperators::new(n)?), lambda1, lambda2)
    }

    pub fn with_operators(ops: Arc<StructuredOperators>, lambda1: f64, lambda2: f64) -> Result<Self> {
        if !(lambda1 > 0.0 && lambda1.is_finite() && lambda2 > 0.0 && lambda2.is_finite()) {
            return Err(Error::Config(format!(
                "smoothness weights must be positive, got lambda1 = {lambda1}, lambda2 = {lambda2}"
            )));
        }
        let l = ops.hollow_dim();
        Ok(SbmOracle {
            lambda1,
            lambda2,
            ops,
            z: DVector::zeros(l),
            z_prev: DVector::zeros(l),
        })
    }

    pub fn lambda1(&self) -> f64 {
        self.lambda1
    }

    pub fn lambda2(&self) -> f64 {
        self.lambda2
    }

    pub fn z(&self) -> &DVector<f64> {
        &self.z
    }

    pub fn z_prev(&self) -> &DVector<f64> {
        &self.z_prev
    }

    /// Smallest node degree of `s`, floored so it can serve as a curvature bound.
    pub fn min_degree(&self, s: &DVector<f64>) -> f64 {
        self.ops.degree_apply(s).min().max(DEGREE_FLOOR)
    }
}

impl GraphModel for SbmOracle {
    fn kind(&self) -> ModelKind {
        ModelKind::Sbm
    }

    fn ops(&self) -> &StructuredOperators {
        &self.ops
    }

    fn space(&self) -> Space {
        Space::HollowHalf
    }

    fn refresh(&mut self, sigma: &DMatrix<f64>, prev_sigma: &DMatrix<f64>) -> Result<()> {
        self.z_prev = sbm_z(&self.ops, prev_sigma)?;
        self.z = sbm_z(&self.ops, sigma)?;
        Ok(())
    }

    fn objective(&self, s: &DVector<f64>) -> Result<f64> {
        sbm_objective(&self.ops, s, &self.z, self.lambda1, self.lambda2)
    }

    fn regularizer(&self, s: &DVector<f64>) -> f64 {
        if s.iter().all(|&v| v >= 0.0) {
            0.0
        } else {
            f64::INFINITY
        }
    }

    fn gradient(&self, s: &DVector<f64>) -> Result<DVector<f64>> {
        sbm_gradient(&self.ops, s, &self.z, self.lambda1, self.lambda2)
    }

    fn hessian_operator(&self, s: &DVector<f64>) -> Result<HessianOp> {
        let d = degrees(&self.ops, s, self.lambda2)?;
        Ok(HessianOp::Sbm {
            ops: self.ops.clone(),
            lambda1: self.lambda1,
            weights: d.map(|v| self.lambda2 / (v * v)),
        })
    }

    fn time_gradient(&self, _s: &DVector<f64>, h: f64) -> Result<DVector<f64>> {
        sbm_time_gradient(&self.z, &self.z_prev, h)
    }

    fn prox(&self, u: &DVector<f64>, _step: f64) -> DVector<f64> {
        project_nonnegative(u)
    }

    fn step_factor(&self) -> f64 {
        2.0
    }

    fn initial_point(&self) -> DVector<f64> {
        DVector::from_element(self.ops.hollow_dim(), 0.1)
    }

    fn is_feasible(&self, s: &DVector<f64>) -> bool {
        s.len() == self.ops.hollow_dim() && s.iter().all(|&v| v >= 0.0 && v.is_finite())
    }

    fn in_domain(&self, s: &DVector<f64>) -> bool {
        s.len() == self.ops.hollow_dim() && self.ops.degree_apply(s).iter().all(|&v| v > 0.0)
    }

    fn lipschitz_hint(&self, s: &DVector<f64>) -> f64 {
        let d = self.min_degree(s);
        self.lambda1 + 2.0 * self.lambda2 * (self.ops.n() - 1) as f64 / (d * d)
    }
}


#[cfg(test)]
mod props {
    use super::*;
    use proptest::collection::vec;
    use proptest::prelude::{prop_assert, proptest};

    proptest! {
        #[test]
        fn nonnegative_projection_is_nearest_and_non_expansive(
            a in vec(-5.0f64..5.0, 1..15),
            others in vec(vec(0.0f64..5.0, 15), 20),
        ) {
            let s = DVector::from_vec(a.clone());
            let p = project_nonnegative(&s);
            prop_assert!(p.iter().all(|&v| v >= 0.0));
            let best = (&s - &p).norm();
            for o in &others {
                let y = DVector::from_fn(a.len(), |i, _| o[i]);
                prop_assert!(best <= (&s - &y).norm() + 1e-12);
                let gap = (&p - project_nonnegative(&y)).norm();
                prop_assert!(gap <= (&s - &y).norm() + 1e-12);
            }
        }
    }
}
