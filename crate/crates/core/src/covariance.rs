//! Recursive second-moment tracking of a stream of graph signals.
//!
//! Signals are assumed centered, so the tracked statistic is the second-moment
//! matrix. The previous estimate is kept alongside the current one because every
//! model's time-gradient is a function of `sigma - prev_sigma`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};

/// How past samples are discounted.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ForgettingPolicy {
    /// `sigma_t = gamma * sigma_{t-1} + (1 - gamma) x x^T`, `gamma` in `(0, 1)`.
    Ewma { gamma: f64 },
    /// Running average over every sample seen so far, warm-up included.
    InfiniteMemory,
    /// `sigma_t = x x^T`: memory of a single sample.
    RankOne,
}

impl ForgettingPolicy {
    pub fn validate(&self) -> Result<()> {
        match *self {
            ForgettingPolicy::Ewma { gamma } if !(gamma > 0.0 && gamma < 1.0) => Err(
                Error::Config(format!("forgetting factor must lie in (0, 1), got {gamma}")),
            ),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovarianceTracker {
    n: usize,
    policy: ForgettingPolicy,
    sigma: DMatrix<f64>,
    prev_sigma: DMatrix<f64>,
    /// Number of streamed updates since initialization.
    t: usize,
    /// Samples averaged into `sigma` under [`ForgettingPolicy::InfiniteMemory`].
    memory: usize,
}

fn outer(x: &DVector<f64>) -> DMatrix<f64> {
    let mut m = x * x.transpose();
    m.fill_upper_triangle_with_lower_triangle();
    m
}

fn check_signal(n: usize, x: &DVector<f64>) -> Result<()> {
    check_len(n, x.len())?;
    if x.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite("graph signal".into()))
    }
}

impl CovarianceTracker {
    /// Initializes from warm-up samples acquired before the stream starts.
    pub fn init(warmup: &[DVector<f64>], policy: ForgettingPolicy) -> Result<Self> {
        policy.validate()?;
        let last = warmup
            .last()
            .ok_or_else(|| Error::Initialization("empty warm-up set".into()))?;
        let n = last.len();
        for x in warmup {
            check_signal(n, x)?;
        }
        let sigma = match policy {
            ForgettingPolicy::RankOne => outer(last),
            _ => {
                let mut acc = DMatrix::zeros(n, n);
                for x in warmup {
                    acc.ger(1.0, x, x, 1.0);
                }
                acc.fill_upper_triangle_with_lower_triangle();
                acc / warmup.len() as f64
            }
        };
        Ok(CovarianceTracker {
            n,
            policy,
            prev_sigma: sigma.clone(),
            sigma,
            t: 0,
            memory: warmup.len(),
        })
    }

    /// Zero statistic with no memory; the first update replaces it entirely
    /// under infinite memory.
    pub fn empty(n: usize, policy: ForgettingPolicy) -> Result<Self> {
        policy.validate()?;
        Ok(CovarianceTracker {
            n,
            policy,
            sigma: DMatrix::zeros(n, n),
            prev_sigma: DMatrix::zeros(n, n),
            t: 0,
            memory: 0,
        })
    }

    /// Tracker seeded with an explicit statistic (used by oracles and tests).
    pub fn from_matrix(sigma: DMatrix<f64>, policy: ForgettingPolicy) -> Result<Self> {
        policy.validate()?;
        let sigma = crate::vectorization::symmetrized(&sigma)?;
        Ok(CovarianceTracker {
            n: sigma.nrows(),
            policy,
            prev_sigma: sigma.clone(),
            sigma,
            t: 0,
            memory: 1,
        })
    }

    pub fn update(&mut self, x: &DVector<f64>) -> Result<()> {
        check_signal(self.n, x)?;
        let next = match self.policy {
            ForgettingPolicy::Ewma { gamma } => {
                let mut s = &self.sigma * gamma;
                s.ger(1.0 - gamma, x, x, 1.0);
                s
            }
            ForgettingPolicy::InfiniteMemory => {
                let count = (self.memory + 1) as f64;
                let mut s = &self.sigma * ((count - 1.0) / count);
                s.ger(1.0 / count, x, x, 1.0);
                s
            }
            ForgettingPolicy::RankOne => outer(x),
        };
        let mut next = next;
        // keep the statistic exactly symmetric despite fused multiply-adds
        next.fill_upper_triangle_with_lower_triangle();
        self.prev_sigma = std::mem::replace(&mut self.sigma, next);
        self.t += 1;
        self.memory += 1;
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn policy(&self) -> ForgettingPolicy {
        self.policy
    }

    pub fn sigma(&self) -> &DMatrix<f64> {
        &self.sigma
    }

    pub fn prev_sigma(&self) -> &DMatrix<f64> {
        &self.prev_sigma
    }

    pub fn t(&self) -> usize {
        self.t
    }

    /// Overwrites both snapshots. Exists to probe memory semantics in tests.
    pub fn set_snapshots(&mut self, sigma: DMatrix<f64>, prev_sigma: DMatrix<f64>) -> Result<()> {
        check_len(self.n, sigma.nrows())?;
        check_len(self.n, prev_sigma.nrows())?;
        self.sigma = sigma;
        self.prev_sigma = prev_sigma;
        Ok(())
    }
}

/// Batch second moment `(1/T) X X^T` of a set of signals.
pub fn second_moment(signals: &[DVector<f64>]) -> Result<DMatrix<f64>> {
    let first = signals
        .first()
        .ok_or_else(|| Error::Initialization("empty signal window".into()))?;
    let n = first.len();
    let mut acc = DMatrix::zeros(n, n);
    for x in signals {
        check_signal(n, x)?;
        acc.ger(1.0, x, x, 1.0);
    }
    acc.fill_upper_triangle_with_lower_triangle();
    Ok(acc / signals.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn gaussian(n: usize, rng: &mut ChaCha8Rng) -> DVector<f64> {
        DVector::from_fn(n, |_, _| StandardNormal.sample(rng))
    }

    #[test]
    fn orthonormal_pair_warmup() {
        let e1 = DVector::from_vec(vec![1.0, 0.0]);
        let e2 = DVector::from_vec(vec![0.0, 1.0]);
        for policy in [ForgettingPolicy::Ewma { gamma: 0.9 }, ForgettingPolicy::InfiniteMemory] {
            let tr = CovarianceTracker::init(&[e1.clone(), e2.clone()], policy).unwrap();
            assert_eq!(tr.sigma(), &(DMatrix::identity(2, 2) * 0.5));
            assert_eq!(tr.prev_sigma(), tr.sigma());
            assert_eq!(tr.t(), 0);
        }
    }

    #[test]
    fn rank_one_warmup_uses_last_signal() {
        let x = DVector::from_vec(vec![1.0, -2.0, 3.0]);
        let tr = CovarianceTracker::init(
            &[DVector::from_element(3, 9.0), x.clone()],
            ForgettingPolicy::RankOne,
        )
        .unwrap();
        assert_eq!(tr.sigma(), &(&x * x.transpose()));
    }

    #[test]
    fn empty_warmup_fails() {
        let err = CovarianceTracker::init(&[], ForgettingPolicy::InfiniteMemory).unwrap_err();
        assert!(matches!(err, Error::Initialization(_)));
    }

    #[test]
    fn warmup_estimate_close_to_truth() {
        // Sigma = A A^T with a fixed A; 100 draws of A z.
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let a = DMatrix::from_fn(5, 5, |i, j| if i >= j { 1.0 / (1 + i + j) as f64 } else { 0.0 })
            + DMatrix::identity(5, 5);
        let truth = &a * a.transpose();
        let samples: Vec<_> = (0..100).map(|_| &a * gaussian(5, &mut rng)).collect();
        let tr = CovarianceTracker::init(&samples, ForgettingPolicy::InfiniteMemory).unwrap();
        let rel = (tr.sigma() - &truth).norm() / truth.norm();
        assert!(rel < 0.5, "relative error {rel}");
    }

    #[test]
    fn ewma_update_formula() {
        let mut tr =
            CovarianceTracker::from_matrix(DMatrix::identity(2, 2), ForgettingPolicy::Ewma { gamma: 0.5 })
                .unwrap();
        tr.update(&DVector::from_vec(vec![1.0, 0.0])).unwrap();
        assert_eq!(tr.sigma(), &DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.5]));
        assert_eq!(tr.prev_sigma(), &DMatrix::identity(2, 2));
        assert_eq!(tr.t(), 1);
    }

    #[test]
    fn ewma_near_one_barely_moves() {
        let gamma = 1.0 - 1e-12;
        let base = DMatrix::identity(3, 3) * 2.0;
        let mut tr = CovarianceTracker::from_matrix(base.clone(), ForgettingPolicy::Ewma { gamma }).unwrap();
        let x = DVector::from_vec(vec![3.0, -1.0, 2.0]);
        tr.update(&x).unwrap();
        let bound = 1e-11 * (&x * x.transpose() - &base).norm();
        assert!((tr.sigma() - &base).norm() <= bound);
    }

    #[test]
    fn infinite_memory_matches_batch() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let xs: Vec<_> = (0..300).map(|_| gaussian(4, &mut rng)).collect();
        let mut tr = CovarianceTracker::empty(4, ForgettingPolicy::InfiniteMemory).unwrap();
        for x in &xs {
            tr.update(x).unwrap();
        }
        let batch = second_moment(&xs).unwrap();
        assert!((tr.sigma() - &batch).amax() < 1e-10);

        // warm-up counts as memory
        let mut tr = CovarianceTracker::init(&xs[..20], ForgettingPolicy::InfiniteMemory).unwrap();
        for x in &xs[20..] {
            tr.update(x).unwrap();
        }
        assert!((tr.sigma() - &batch).amax() < 1e-10);
    }

    #[test]
    fn update_errors() {
        let mut tr = CovarianceTracker::empty(3, ForgettingPolicy::RankOne).unwrap();
        assert!(matches!(
            tr.update(&DVector::zeros(2)),
            Err(Error::Dimension { expected: 3, found: 2 })
        ));
        assert!(matches!(
            tr.update(&DVector::from_vec(vec![0.0, f64::NAN, 1.0])),
            Err(Error::NonFinite(_))
        ));
        assert!(CovarianceTracker::empty(3, ForgettingPolicy::Ewma { gamma: 1.0 }).is_err());
    }

    #[test]
    fn ewma_stays_symmetric_psd_and_rank_one_stays_rank_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let warm: Vec<_> = (0..6).map(|_| gaussian(6, &mut rng)).collect();
        let mut ewma = CovarianceTracker::init(&warm, ForgettingPolicy::Ewma { gamma: 0.97 }).unwrap();
        let mut r1 = CovarianceTracker::init(&warm, ForgettingPolicy::RankOne).unwrap();
        for _ in 0..500 {
            let x = gaussian(6, &mut rng) * 3.0;
            let prev = r1.sigma().clone();
            ewma.update(&x).unwrap();
            r1.update(&x).unwrap();
            assert_eq!(r1.prev_sigma(), &prev);
            let s = ewma.sigma();
            assert_eq!(s, &s.transpose());
            assert!(s.clone().symmetric_eigenvalues().min() >= -1e-10);
            let sv = r1.sigma().singular_values();
            let mut sorted: Vec<f64> = sv.iter().copied().collect();
            sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
            assert!(sorted[1] <= 1e-12 * sorted[0].max(1.0));
        }
    }
}
