//! Time-varying Gaussian graphical model: precision matrix estimation by
//! penalized maximum likelihood, in h-space, over the eigenvalue band
//! `xi I <= S <= chi I`.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use super::{GraphModel, HessianOp, ModelKind};
use crate::error::{check_len, Error, Result};
use crate::vectorization::{unvech, vech_unchecked, Space, StructuredOperators};

pub const DEFAULT_XI: f64 = 1e-3;
pub const DEFAULT_CHI: f64 = 1e3;

#[derive(Debug, Clone)]
pub struct GgmOracle {
    xi: f64,
    chi: f64,
    ops: Arc<StructuredOperators>,
    sigma: DMatrix<f64>,
    prev_sigma: DMatrix<f64>,
}

/// Cholesky-based inverse and log-determinant of a symmetric matrix.
pub(crate) fn inverse_logdet(s: &DMatrix<f64>) -> Result<(DMatrix<f64>, f64)> {
    let chol = s
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Domain("precision matrix is not positive definite".into()))?;
    let logdet = 2.0 * chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    Ok((chol.inverse(), logdet))
}

/// `sum_ij A_ij B_ij`, i.e. `tr(A B)` for symmetric arguments.
pub(crate) fn trace_product(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

/// Frobenius projection of a symmetric matrix onto `{xi I <= S <= chi I}`.
pub fn project_band(s: &DMatrix<f64>, xi: f64, chi: f64) -> DMatrix<f64> {
    let eig = s.clone().symmetric_eigen();
    let clipped = eig.eigenvalues.map(|v| v.clamp(xi, chi));
    let scaled = &eig.eigenvectors * DMatrix::from_diagonal(&clipped);
    let out = scaled * eig.eigenvectors.transpose();
    (&out + out.transpose()) * 0.5
}

impl GgmOracle {
    pub fn new(n: usize, xi: f64, chi: f64) -> Result<Self> {
        Self::with_operators(Arc::new(StructuredOperators::new(n)?), xi, chi)
    }

    pub fn with_operators(ops: Arc<StructuredOperators>, xi: f64, chi: f64) -> Result<Self> {
        if !(xi > 0.0 && chi > xi && chi.is_finite()) {
            return Err(Error::Config(format!(
                "eigenvalue band requires 0 < xi < chi < inf, got xi = {xi}, chi = {chi}"
            )));
        }
        let n = ops.n();
        Ok(GgmOracle {
            xi,
            chi,
            ops,
            sigma: DMatrix::zeros(n, n),
            prev_sigma: DMatrix::zeros(n, n),
        })
    }

    pub fn xi(&self) -> f64 {
        self.xi
    }

    pub fn chi(&self) -> f64 {
        self.chi
    }

    pub fn sigma(&self) -> &DMatrix<f64> {
        &self.sigma
    }

    fn precision(&self, s: &DVector<f64>) -> Result<DMatrix<f64>> {
        check_len(self.ops.half_dim(), s.len())?;
        Ok(unvech(self.ops.n(), s))
    }

    /// `D^T vec(sigma_t - sigma_{t-1})`; independent of the graph.
    pub fn time_gradient_of(&self, sigma: &DMatrix<f64>, prev: &DMatrix<f64>) -> Result<DVector<f64>> {
        check_len(self.ops.n(), sigma.nrows())?;
        check_len(self.ops.n(), prev.nrows())?;
        Ok(self.ops.dup_transpose_sym(&(sigma - prev)))
    }

    /// Exact projection onto the eigenvalue band.
    pub fn project(&self, s: &DVector<f64>) -> DVector<f64> {
        let m = unvech(self.ops.n(), s);
        vech_unchecked(&project_band(&m, self.xi, self.chi))
    }
}

impl GraphModel for GgmOracle {
    fn kind(&self) -> ModelKind {
        ModelKind::Ggm
    }

    fn ops(&self) -> &StructuredOperators {
        &self.ops
    }

    fn space(&self) -> Space {
        Space::Half
    }

    fn refresh(&mut self, sigma: &DMatrix<f64>, prev_sigma: &DMatrix<f64>) -> Result<()> {
        check_len(self.ops.n(), sigma.nrows())?;
        check_len(self.ops.n(), prev_sigma.nrows())?;
        self.sigma.copy_from(sigma);
        self.prev_sigma.copy_from(prev_sigma);
        Ok(())
    }

    /// `-log det S + tr(S sigma)`.
    fn objective(&self, s: &DVector<f64>) -> Result<f64> {
        let m = self.precision(s)?;
        let (_, logdet) = inverse_logdet(&m)?;
        Ok(-logdet + trace_product(&m, &self.sigma))
    }

    fn regularizer(&self, s: &DVector<f64>) -> f64 {
        if self.is_feasible(s) {
            0.0
        } else {
            f64::INFINITY
        }
    }

    /// `D^T vec(sigma - S^{-1})`.
    fn gradient(&self, s: &DVector<f64>) -> Result<DVector<f64>> {
        let m = self.precision(s)?;
        let (inv, _) = inverse_logdet(&m)?;
        Ok(self.ops.dup_transpose_sym(&(&self.sigma - inv)))
    }

    fn hessian_operator(&self, s: &DVector<f64>) -> Result<HessianOp> {
        let m = self.precision(s)?;
        let (inv, _) = inverse_logdet(&m)?;
        Ok(HessianOp::Ggm {
            ops: self.ops.clone(),
            s_inv: inv,
        })
    }

    /// The covariance difference is taken per sample; dividing by `h` keeps
    /// `h * time_gradient` equal to that difference for any sampling period.
    fn time_gradient(&self, _s: &DVector<f64>, h: f64) -> Result<DVector<f64>> {
        Ok(self.time_gradient_of(&self.sigma, &self.prev_sigma)? / h)
    }

    fn prox(&self, u: &DVector<f64>, _step: f64) -> DVector<f64> {
        self.project(u)
    }

    fn step_factor(&self) -> f64 {
        2.0
    }

    fn initial_point(&self) -> DVector<f64> {
        let n = self.ops.n();
        let diag = 1.0_f64.clamp(self.xi, self.chi);
        vech_unchecked(&(DMatrix::identity(n, n) * diag))
    }

    fn is_feasible(&self, s: &DVector<f64>) -> bool {
        if s.len() != self.ops.half_dim() || !s.iter().all(|v| v.is_finite()) {
            return false;
        }
        let eig = unvech(self.ops.n(), s).symmetric_eigenvalues();
        let tol = 1e-9 * self.chi;
        eig.min() >= self.xi - tol && eig.max() <= self.chi + tol
    }

    fn in_domain(&self, s: &DVector<f64>) -> bool {
        s.len() == self.ops.half_dim() && unvech(self.ops.n(), s).cholesky().is_some()
    }

    fn lipschitz_hint(&self, s: &DVector<f64>) -> f64 {
        let lo = unvech(self.ops.n(), s).symmetric_eigenvalues().min().max(self.xi);
        2.0 / (lo * lo)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vectorization::vech;

    fn oracle(n: usize, sigma: DMatrix<f64>) -> GgmOracle {
        let mut o = GgmOracle::new(n, 0.1, 10.0).unwrap();
        o.refresh(&sigma, &sigma).unwrap();
        o
    }

    #[test]
    fn objective_examples() {
        let o = oracle(3, DMatrix::identity(3, 3));
        let s = vech(&DMatrix::identity(3, 3)).unwrap().into_values();
        assert!((o.objective(&s).unwrap() - 3.0).abs() < 1e-14);

        let o = oracle(2, DMatrix::identity(2, 2));
        let s = vech(&(DMatrix::identity(2, 2) * 2.0)).unwrap().into_values();
        let expected = -2.0 * 2f64.ln() + 4.0;
        assert!((o.objective(&s).unwrap() - expected).abs() < 1e-14);
    }

    #[test]
    fn gradient_examples() {
        let o = oracle(3, DMatrix::identity(3, 3));
        let s = vech(&DMatrix::identity(3, 3)).unwrap().into_values();
        assert!(o.gradient(&s).unwrap().norm() < 1e-15);

        let o = oracle(2, DMatrix::identity(2, 2));
        let s = vech(&(DMatrix::identity(2, 2) * 2.0)).unwrap().into_values();
        assert_eq!(o.gradient(&s).unwrap().as_slice(), &[0.5, 0.0, 0.5]);
    }

    #[test]
    fn indefinite_precision_is_domain_error() {
        let o = oracle(2, DMatrix::identity(2, 2));
        let s = DVector::from_vec(vec![1.0, 2.0, 1.0]);
        assert!(matches!(o.objective(&s), Err(Error::Domain(_))));
        assert!(matches!(o.gradient(&s), Err(Error::Domain(_))));
        assert!(!o.in_domain(&s));
    }

    #[test]
    fn hessian_at_identity_is_dtd() {
        let o = oracle(3, DMatrix::identity(3, 3));
        let s = vech(&DMatrix::identity(3, 3)).unwrap().into_values();
        let d = o.ops().dup_dense();
        let dtd = d.transpose() * &d;
        let v = DVector::from_fn(6, |i, _| (i as f64) - 2.5);
        let hv = o.hessian_vec(&s, &v).unwrap();
        assert!((hv - &dtd * &v).norm() < 1e-14);
        assert!(o.hessian_vec(&s, &DVector::zeros(6)).unwrap().norm() == 0.0);
    }

    #[test]
    fn time_gradient_examples() {
        let o = GgmOracle::new(2, 0.1, 10.0).unwrap();
        let a = DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]);
        assert!(o.time_gradient_of(&a, &a).unwrap().norm() == 0.0);
        let b = &a - DMatrix::identity(2, 2);
        assert_eq!(o.time_gradient_of(&a, &b).unwrap().as_slice(), &[1.0, 0.0, 1.0]);
        assert!(o.time_gradient_of(&a, &DMatrix::zeros(3, 3)).is_err());
    }

    #[test]
    fn projection_examples() {
        let o = GgmOracle::new(2, 0.1, 10.0).unwrap();
        let s = DVector::from_vec(vec![0.01, 0.0, 5.0]);
        let p = o.project(&s);
        assert!((p - DVector::from_vec(vec![0.1, 0.0, 5.0])).norm() < 1e-14);
        let feasible = DVector::from_vec(vec![2.0, 0.5, 3.0]);
        assert!((o.project(&feasible) - &feasible).norm() < 1e-13);
    }

    #[test]
    fn default_start_is_identity_within_band() {
        let o = GgmOracle::new(3, DEFAULT_XI, DEFAULT_CHI).unwrap();
        assert_eq!(o.initial_point(), vech(&DMatrix::identity(3, 3)).unwrap().into_values());
        let o = GgmOracle::new(3, 2.0, 4.0).unwrap();
        assert_eq!(o.initial_point()[0], 2.0);
        assert!(GgmOracle::new(3, 2.0, 1.0).is_err());
    }
}
