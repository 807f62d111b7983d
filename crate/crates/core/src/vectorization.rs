//! Lifts between symmetric / hollow symmetric `N x N` matrices and their reduced
//! coordinates.
//!
//! Both half-vectorizations scan the lower triangle column by column: for
//! `vech` column `j` contributes rows `j..N`, for `vechh` rows `j+1..N`. Every
//! other module inherits this ordering.
//!
//! The duplication / elimination operators and the degree operator are 0/1
//! matrices with at most two nonzeros per row or column, so they are stored as
//! index maps and applied in `O(N^2)`. Dense materializations exist for testing.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};

/// Relative tolerance for symmetry / hollowness checks.
pub const SYMMETRY_TOL: f64 = 1e-12;

/// Reduced coordinate space of a graph shift operator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Space {
    /// Symmetric matrices, `k = N(N+1)/2` coordinates including the diagonal.
    Half,
    /// Hollow symmetric matrices, `l = N(N-1)/2` strictly-lower coordinates.
    HollowHalf,
}

impl Space {
    pub fn dim(self, n: usize) -> usize {
        match self {
            Space::Half => half_len(n),
            Space::HollowHalf => hollow_len(n),
        }
    }
}

pub fn half_len(n: usize) -> usize {
    n * (n + 1) / 2
}

pub fn hollow_len(n: usize) -> usize {
    n * n.saturating_sub(1) / 2
}

/// Position of `(i, j)`, `i >= j`, in `vech` ordering.
#[inline]
pub fn half_index(n: usize, i: usize, j: usize) -> usize {
    debug_assert!(i >= j && i < n);
    j * n - j * j.saturating_sub(1) / 2 + (i - j)
}

/// Position of `(i, j)`, `i > j`, in `vechh` ordering.
#[inline]
pub fn hollow_index(n: usize, i: usize, j: usize) -> usize {
    debug_assert!(i > j && i < n);
    j * n - j * (j + 1) / 2 + (i - j - 1)
}

/// Half-vectorized symmetric matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HalfVec {
    n: usize,
    values: DVector<f64>,
}

/// Hollow half-vectorized symmetric matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HollowHalfVec {
    n: usize,
    values: DVector<f64>,
}

fn check_finite(values: &DVector<f64>, what: &str) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what.to_string()))
    }
}

impl HalfVec {
    pub fn new(n: usize, values: DVector<f64>) -> Result<Self> {
        check_len(half_len(n), values.len())?;
        check_finite(&values, "h-space vector")?;
        Ok(HalfVec { n, values })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn values(&self) -> &DVector<f64> {
        &self.values
    }

    pub fn into_values(self) -> DVector<f64> {
        self.values
    }

    /// Dense symmetric matrix with these coordinates (`D * vech`).
    pub fn unvech(&self) -> DMatrix<f64> {
        unvech(self.n, &self.values)
    }
}

impl HollowHalfVec {
    pub fn new(n: usize, values: DVector<f64>) -> Result<Self> {
        check_len(hollow_len(n), values.len())?;
        check_finite(&values, "hh-space vector")?;
        Ok(HollowHalfVec { n, values })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn values(&self) -> &DVector<f64> {
        &self.values
    }

    pub fn into_values(self) -> DVector<f64> {
        self.values
    }

    pub fn unvechh(&self) -> DMatrix<f64> {
        unvechh(self.n, &self.values)
    }
}

fn square_dim(s: &DMatrix<f64>) -> Result<usize> {
    if s.nrows() != s.ncols() {
        return Err(Error::Structural(format!(
            "matrix is {}x{}, expected square",
            s.nrows(),
            s.ncols()
        )));
    }
    Ok(s.nrows())
}

fn scale_of(s: &DMatrix<f64>) -> f64 {
    s.iter().fold(1.0_f64, |acc, v| acc.max(v.abs()))
}

/// Checks symmetry within [`SYMMETRY_TOL`] relative to the largest entry and
/// returns `(S + S^T) / 2`.
pub fn symmetrized(s: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = square_dim(s)?;
    let tol = SYMMETRY_TOL * scale_of(s);
    for j in 0..n {
        for i in (j + 1)..n {
            let (a, b) = (s[(i, j)], s[(j, i)]);
            if !a.is_finite() || !b.is_finite() {
                return Err(Error::NonFinite(format!("entry ({i}, {j})")));
            }
            if (a - b).abs() > tol {
                return Err(Error::Structural(format!(
                    "asymmetric entries ({i}, {j}) = {a} and ({j}, {i}) = {b}"
                )));
            }
        }
    }
    Ok((s + s.transpose()) * 0.5)
}

/// Half-vectorization of a symmetric matrix.
pub fn vech(s: &DMatrix<f64>) -> Result<HalfVec> {
    let sym = symmetrized(s)?;
    let n = sym.nrows();
    Ok(HalfVec {
        n,
        values: vech_unchecked(&sym),
    })
}

/// Hollow half-vectorization of a hollow symmetric matrix.
pub fn vechh(s: &DMatrix<f64>) -> Result<HollowHalfVec> {
    let sym = symmetrized(s)?;
    let n = sym.nrows();
    let tol = SYMMETRY_TOL * scale_of(s);
    for i in 0..n {
        if sym[(i, i)].abs() > tol {
            return Err(Error::Structural(format!(
                "nonzero diagonal entry ({i}, {i}) = {}",
                sym[(i, i)]
            )));
        }
    }
    Ok(HollowHalfVec {
        n,
        values: vechh_unchecked(&sym),
    })
}

/// Lower-triangular scan with diagonal; no structure checks.
pub fn vech_unchecked(s: &DMatrix<f64>) -> DVector<f64> {
    let n = s.nrows();
    let mut out = Vec::with_capacity(half_len(n));
    for j in 0..n {
        for i in j..n {
            out.push(s[(i, j)]);
        }
    }
    DVector::from_vec(out)
}

/// Strictly-lower-triangular scan; no structure checks.
pub fn vechh_unchecked(s: &DMatrix<f64>) -> DVector<f64> {
    let n = s.nrows();
    let mut out = Vec::with_capacity(hollow_len(n));
    for j in 0..n {
        for i in (j + 1)..n {
            out.push(s[(i, j)]);
        }
    }
    DVector::from_vec(out)
}

pub fn unvech(n: usize, v: &DVector<f64>) -> DMatrix<f64> {
    let mut s = DMatrix::zeros(n, n);
    let mut r = 0;
    for j in 0..n {
        for i in j..n {
            s[(i, j)] = v[r];
            s[(j, i)] = v[r];
            r += 1;
        }
    }
    s
}

pub fn unvechh(n: usize, v: &DVector<f64>) -> DMatrix<f64> {
    let mut s = DMatrix::zeros(n, n);
    let mut r = 0;
    for j in 0..n {
        for i in (j + 1)..n {
            s[(i, j)] = v[r];
            s[(j, i)] = v[r];
            r += 1;
        }
    }
    s
}

/// Sparse duplication, elimination and degree operators for a fixed `N`.
#[derive(Debug, Clone, PartialEq)]
pub struct StructuredOperators {
    n: usize,
    /// `E`: row `r` selects lower entry `half_pairs[r]`.
    half_pairs: Vec<(usize, usize)>,
    /// `E_h` and the columns of `K`.
    hollow_pairs: Vec<(usize, usize)>,
    /// `D`: row `p` of `vec` has its single one in column `dup[p]`.
    dup: Vec<usize>,
    /// `D_h`: row `p` of `vec` maps to `hollow_dup[p]`, `None` on the diagonal.
    hollow_dup: Vec<Option<usize>>,
}

impl StructuredOperators {
    pub fn new(n: usize) -> Result<Self> {
        if n < 2 {
            return Err(Error::Domain(format!("node count must be at least 2, got {n}")));
        }
        let mut half_pairs = Vec::with_capacity(half_len(n));
        let mut hollow_pairs = Vec::with_capacity(hollow_len(n));
        for j in 0..n {
            for i in j..n {
                half_pairs.push((i, j));
                if i > j {
                    hollow_pairs.push((i, j));
                }
            }
        }
        let mut dup = vec![0; n * n];
        let mut hollow_dup = vec![None; n * n];
        for j in 0..n {
            for i in 0..n {
                let p = i + j * n;
                let (hi, lo) = if i >= j { (i, j) } else { (j, i) };
                dup[p] = half_index(n, hi, lo);
                if hi != lo {
                    hollow_dup[p] = Some(hollow_index(n, hi, lo));
                }
            }
        }
        Ok(StructuredOperators {
            n,
            half_pairs,
            hollow_pairs,
            dup,
            hollow_dup,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn half_dim(&self) -> usize {
        self.half_pairs.len()
    }

    pub fn hollow_dim(&self) -> usize {
        self.hollow_pairs.len()
    }

    /// `(i, j)` with `i >= j` for each h-space coordinate.
    pub fn half_pairs(&self) -> &[(usize, usize)] {
        &self.half_pairs
    }

    /// `(i, j)` with `i > j` for each hh-space coordinate (edges).
    pub fn hollow_pairs(&self) -> &[(usize, usize)] {
        &self.hollow_pairs
    }

    /// `D v`, a vector of length `N^2`.
    pub fn dup_apply(&self, v: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(self.dup.len(), self.dup.iter().map(|&c| v[c]))
    }

    /// `D^T w` for `w` of length `N^2`.
    pub fn dup_transpose_apply(&self, w: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.half_dim());
        for (p, &c) in self.dup.iter().enumerate() {
            out[c] += w[p];
        }
        out
    }

    /// `E w` for `w` of length `N^2`.
    pub fn elim_apply(&self, w: &DVector<f64>) -> DVector<f64> {
        let n = self.n;
        DVector::from_iterator(
            self.half_dim(),
            self.half_pairs.iter().map(|&(i, j)| w[i + j * n]),
        )
    }

    pub fn hollow_dup_apply(&self, v: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(
            self.hollow_dup.len(),
            self.hollow_dup.iter().map(|c| c.map_or(0.0, |c| v[c])),
        )
    }

    pub fn hollow_dup_transpose_apply(&self, w: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.hollow_dim());
        for (p, c) in self.hollow_dup.iter().enumerate() {
            if let Some(c) = c {
                out[*c] += w[p];
            }
        }
        out
    }

    pub fn hollow_elim_apply(&self, w: &DVector<f64>) -> DVector<f64> {
        let n = self.n;
        DVector::from_iterator(
            self.hollow_dim(),
            self.hollow_pairs.iter().map(|&(i, j)| w[i + j * n]),
        )
    }

    /// `D^T vec(M)` for a symmetric `M` without forming `vec(M)`: diagonal
    /// coordinates pick `M_ii`, off-diagonal ones `2 M_ij`.
    pub fn dup_transpose_sym(&self, m: &DMatrix<f64>) -> DVector<f64> {
        DVector::from_iterator(
            self.half_dim(),
            self.half_pairs.iter().map(|&(i, j)| {
                if i == j {
                    m[(i, i)]
                } else {
                    m[(i, j)] + m[(j, i)]
                }
            }),
        )
    }

    /// Degrees `K s = S 1`.
    pub fn degree_apply(&self, s: &DVector<f64>) -> DVector<f64> {
        let mut d = DVector::zeros(self.n);
        for (e, &(i, j)) in self.hollow_pairs.iter().enumerate() {
            d[i] += s[e];
            d[j] += s[e];
        }
        d
    }

    /// `K^T d`: each edge sums the values at its two endpoints.
    pub fn degree_transpose_apply(&self, d: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(
            self.hollow_dim(),
            self.hollow_pairs.iter().map(|&(i, j)| d[i] + d[j]),
        )
    }

    pub fn dup_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.n * self.n, self.half_dim());
        for (p, &c) in self.dup.iter().enumerate() {
            m[(p, c)] = 1.0;
        }
        m
    }

    pub fn elim_dense(&self) -> DMatrix<f64> {
        let n = self.n;
        let mut m = DMatrix::zeros(self.half_dim(), n * n);
        for (r, &(i, j)) in self.half_pairs.iter().enumerate() {
            m[(r, i + j * n)] = 1.0;
        }
        m
    }

    pub fn hollow_dup_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.n * self.n, self.hollow_dim());
        for (p, c) in self.hollow_dup.iter().enumerate() {
            if let Some(c) = c {
                m[(p, *c)] = 1.0;
            }
        }
        m
    }

    pub fn hollow_elim_dense(&self) -> DMatrix<f64> {
        let n = self.n;
        let mut m = DMatrix::zeros(self.hollow_dim(), n * n);
        for (r, &(i, j)) in self.hollow_pairs.iter().enumerate() {
            m[(r, i + j * n)] = 1.0;
        }
        m
    }

    pub fn degree_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.n, self.hollow_dim());
        for (e, &(i, j)) in self.hollow_pairs.iter().enumerate() {
            m[(i, e)] = 1.0;
            m[(j, e)] = 1.0;
        }
        m
    }
}

/// Column-major `vec` of a matrix.
pub fn vec_of(m: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_column_slice(m.as_slice())
}
