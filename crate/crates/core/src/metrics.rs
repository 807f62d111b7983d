//! Tracking metrics recorded at every time step.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::vectorization::Space;

/// Relative edge threshold used when none is given.
pub const DEFAULT_EDGE_THRESHOLD: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    /// 1-based index of the streamed sample this estimate follows.
    pub t: usize,
    pub s_hat: DVector<f64>,
    /// Normalized squared error against the offline solution, when one was computed.
    pub nse: Option<f64>,
    pub td: f64,
    pub edge_count: usize,
    pub tgrad_norm: f64,
    pub step_seconds: f64,
}

/// `||s_hat - s_star||^2 / ||s_star||^2`.
pub fn nse(s_hat: &DVector<f64>, s_star: &DVector<f64>) -> Result<f64> {
    check_len(s_star.len(), s_hat.len())?;
    let denom = s_star.norm_squared();
    if denom == 0.0 {
        return Err(Error::UndefinedMetric(
            "normalized squared error against a zero reference".into(),
        ));
    }
    Ok((s_hat - s_star).norm_squared() / denom)
}

/// Euclidean distance between consecutive estimates.
pub fn temporal_deviation(s: &DVector<f64>, s_prev: &DVector<f64>) -> Result<f64> {
    check_len(s_prev.len(), s.len())?;
    Ok((s - s_prev).norm())
}

/// Edge weights of a reduced-coordinate GSO, skipping the diagonal in h-space.
pub fn off_diagonal_weights(s: &DVector<f64>, space: Space, n: usize) -> Vec<f64> {
    match space {
        Space::HollowHalf => s.iter().copied().collect(),
        Space::Half => {
            let mut out = Vec::with_capacity(n * (n - 1) / 2);
            let mut k = 0;
            for j in 0..n {
                k += 1; // diagonal entry (j, j)
                for _ in j + 1..n {
                    out.push(s[k]);
                    k += 1;
                }
            }
            out
        }
    }
}

/// Number of edges with `|weight| > eps`.
pub fn edge_count_with(s: &DVector<f64>, space: Space, n: usize, eps: f64) -> usize {
    off_diagonal_weights(s, space, n)
        .into_iter()
        .filter(|w| w.abs() > eps)
        .count()
}

/// Edge count with `eps` relative to the largest absolute edge weight.
pub fn edge_count(s: &DVector<f64>, space: Space, n: usize, relative: f64) -> usize {
    let w = off_diagonal_weights(s, space, n);
    let max = w.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
    if max == 0.0 {
        return 0;
    }
    edge_count_with(s, space, n, relative * max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn nse_examples() {
        let s = DVector::from_vec(vec![1.0, -2.0, 0.5]);
        assert_eq!(nse(&s, &s).unwrap(), 0.0);
        assert_eq!(nse(&DVector::zeros(3), &s).unwrap(), 1.0);
        assert_eq!(nse(&(&s * 2.0), &s).unwrap(), 1.0);
        assert!(matches!(nse(&s, &DVector::zeros(3)), Err(Error::UndefinedMetric(_))));
    }

    #[test]
    fn temporal_deviation_examples() {
        let s = DVector::from_vec(vec![1.0, 2.0]);
        assert_eq!(temporal_deviation(&s, &s).unwrap(), 0.0);
        let t = DVector::from_vec(vec![1.0, 5.0]);
        assert_eq!(temporal_deviation(&s, &t).unwrap(), 3.0);
        assert!(temporal_deviation(&s, &DVector::zeros(3)).is_err());
    }

    #[test]
    fn edge_counts_skip_precision_diagonal() {
        // 3x3 precision with a single off-diagonal link (2,1)
        let s = DVector::from_vec(vec![2.0, -0.5, 0.0, 2.0, 0.0, 2.0]);
        assert_eq!(off_diagonal_weights(&s, Space::Half, 3), vec![-0.5, 0.0, 0.0]);
        assert_eq!(edge_count(&s, Space::Half, 3, DEFAULT_EDGE_THRESHOLD), 1);
        let h = DVector::from_vec(vec![1.0, 1e-6, 0.3]);
        assert_eq!(edge_count(&h, Space::HollowHalf, 3, DEFAULT_EDGE_THRESHOLD), 2);
        assert_eq!(edge_count(&DVector::zeros(3), Space::HollowHalf, 3, 1e-4), 0);
    }

    proptest! {
        #[test]
        fn edge_count_monotone_in_threshold(
            w in prop::collection::vec(-2.0f64..2.0, 10),
            a in 0.0f64..2.0,
            b in 0.0f64..2.0,
        ) {
            let s = DVector::from_vec(w);
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            let c_lo = edge_count_with(&s, Space::HollowHalf, 5, lo);
            let c_hi = edge_count_with(&s, Space::HollowHalf, 5, hi);
            prop_assert!(c_hi <= c_lo);
            prop_assert!(c_lo <= 10);
        }
    }
}
