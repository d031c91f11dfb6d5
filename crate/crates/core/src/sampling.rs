//! Fixed-covariance Gaussian sampling, cost weighting and self-normalised
//! importance weights.
//!
//! Randomness is counter-based: sample `j` of iteration `k` under run seed
//! `s` always comes from a ChaCha stream keyed by `(s, k, attempt, j)`, so
//! batches do not depend on thread count or scheduling. Every reduction over
//! samples runs sequentially in sample order.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{check_len, Error, Result};
use crate::problems::{ControlSequence, TrajectoryProblem};
use crate::scalar::Real;

/// `N(mean, cov)` with temperature `tau` for the cost weights.
#[derive(Debug, Clone)]
pub struct GaussianPolicy<T: Real> {
    mean: DVector<T>,
    cov: DMatrix<T>,
    chol: Cholesky<T, Dyn>,
    tau: T,
}

impl<T: Real> GaussianPolicy<T> {
    pub fn new(mean: DVector<T>, cov: DMatrix<T>, tau: T) -> Result<Self> {
        check_len("covariance rows", mean.len(), cov.nrows())?;
        check_len("covariance cols", mean.len(), cov.ncols())?;
        if !(tau > T::zero()) {
            return Err(Error::InvalidArgument("temperature must be positive".into()));
        }
        if !crate::linalg::is_symmetric(&cov, T::lit(1e-12)) {
            return Err(Error::NotPositiveDefinite("covariance is not symmetric"));
        }
        let chol = cov
            .clone()
            .cholesky()
            .ok_or(Error::NotPositiveDefinite("covariance Cholesky failed"))?;
        Ok(Self {
            mean,
            cov,
            chol,
            tau,
        })
    }

    /// `Σ = σ² I`.
    pub fn isotropic(mean: DVector<T>, sigma2: T, tau: T) -> Result<Self> {
        let n = mean.len();
        Self::new(mean, DMatrix::identity(n, n) * sigma2, tau)
    }

    pub fn diagonal(mean: DVector<T>, variances: &DVector<T>, tau: T) -> Result<Self> {
        Self::new(mean, DMatrix::from_diagonal(variances), tau)
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &DVector<T> {
        &self.mean
    }

    pub fn covariance(&self) -> &DMatrix<T> {
        &self.cov
    }

    /// Lower Cholesky factor `L` with `Σ = L Lᵀ`.
    pub fn cholesky_factor(&self) -> DMatrix<T> {
        self.chol.l()
    }

    pub fn tau(&self) -> T {
        self.tau
    }

    pub fn is_diagonal(&self) -> bool {
        let n = self.dim();
        (0..n).all(|i| (0..n).all(|j| i == j || self.cov[(i, j)] == T::zero()))
    }

    pub fn with_mean(&self, mean: DVector<T>) -> Result<Self> {
        check_len("policy mean", self.dim(), mean.len())?;
        Ok(Self {
            mean,
            ..self.clone()
        })
    }

    pub fn with_tau(&self, tau: T) -> Result<Self> {
        Self::new(self.mean.clone(), self.cov.clone(), tau)
    }

    /// Covariance scaled by `factor`.
    pub fn inflated(&self, factor: T) -> Result<Self> {
        Self::new(self.mean.clone(), &self.cov * factor, self.tau)
    }

    /// `Σ⁻¹ v` via two triangular solves.
    pub fn precision_times(&self, v: &DVector<T>) -> DVector<T> {
        self.chol.solve(v)
    }

    /// `L⁻¹ v`; `‖L⁻¹ v‖² = vᵀ Σ⁻¹ v`.
    pub fn whiten(&self, v: &DVector<T>) -> DVector<T> {
        self.chol
            .l_dirty()
            .solve_lower_triangular(v)
            .expect("Cholesky factor is nonsingular")
    }

    pub fn log_density(&self, u: &DVector<T>) -> Result<T> {
        check_len("sample", self.dim(), u.len())?;
        let z = self.whiten(&(u - &self.mean));
        let log_det = self
            .chol
            .l_dirty()
            .diagonal()
            .iter()
            .fold(T::zero(), |acc, d| acc + d.ln());
        let n = T::from_usize_lossy(self.dim());
        Ok(-(z.norm_squared() + n * T::two_pi().ln()) * T::lit(0.5) - log_det)
    }

    /// Score of the mean parameter, `∇_μ log π(u) = Σ⁻¹(u − μ)`.
    pub fn score(&self, u: &DVector<T>) -> Result<DVector<T>> {
        check_len("sample", self.dim(), u.len())?;
        Ok(self.precision_times(&(u - &self.mean)))
    }
}

/// Free-function form of [`GaussianPolicy::score`].
pub fn score<T: Real>(policy: &GaussianPolicy<T>, u: &DVector<T>) -> Result<DVector<T>> {
    policy.score(u)
}

/// Identifies one batch of draws: run seed, iteration, retry attempt.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub struct SampleKey {
    pub seed: u64,
    pub iteration: u64,
    pub attempt: u32,
}

impl SampleKey {
    pub fn new(seed: u64, iteration: u64) -> Self {
        Self {
            seed,
            iteration,
            attempt: 0,
        }
    }

    pub fn with_attempt(self, attempt: u32) -> Self {
        Self { attempt, ..self }
    }

    /// Independent stream for sample `index` of this batch.
    pub fn rng(&self, index: u64) -> ChaCha8Rng {
        let mut key = [0u8; 32];
        key[0..8].copy_from_slice(&self.seed.to_le_bytes());
        key[8..16].copy_from_slice(&self.iteration.to_le_bytes());
        key[16..20].copy_from_slice(&self.attempt.to_le_bytes());
        key[24..32].copy_from_slice(&index.to_le_bytes());
        ChaCha8Rng::from_seed(key)
    }
}

/// Mixes a run seed with a sub-index (splitmix64 finaliser), for nested
/// runs such as receding-horizon steps or bias-probe trials.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn standard_normal<T: Real>(rng: &mut ChaCha8Rng, n: usize) -> DVector<T> {
    DVector::from_fn(n, |_, _| {
        let z: f64 = StandardNormal.sample(rng);
        T::lit(z)
    })
}

/// Draws `n` samples from the policy. With `antithetic`, sample `j` and
/// sample `j + n/2` are `μ + Lz_j` and `μ − Lz_j`.
pub fn draw<T: Real>(
    policy: &GaussianPolicy<T>,
    n: usize,
    antithetic: bool,
    key: SampleKey,
) -> Result<Vec<ControlSequence<T>>> {
    if n < 2 {
        return Err(Error::InvalidArgument("need at least two samples".into()));
    }
    if antithetic && !n.is_multiple_of(2) {
        return Err(Error::InvalidArgument(
            "antithetic sampling needs an even sample count".into(),
        ));
    }
    let dim = policy.dim();
    let l = policy.chol.l();
    let base = if antithetic { n / 2 } else { n };
    let offsets: Vec<DVector<T>> = (0..base)
        .into_par_iter()
        .map(|j| {
            let mut rng = key.rng(j as u64);
            &l * standard_normal::<T>(&mut rng, dim)
        })
        .collect();
    let mean = policy.mean();
    let mut out: Vec<ControlSequence<T>> = offsets
        .iter()
        .map(|o| ControlSequence::new(mean + o))
        .collect();
    if antithetic {
        out.extend(offsets.iter().map(|o| ControlSequence::new(mean - o)));
    }
    Ok(out)
}

/// Samples with their costs, feasibility and log-weights `−f0/τ`
/// (`−∞` when infeasible).
#[derive(Debug, Clone, Serialize)]
pub struct SampleBatch<T: Real> {
    pub samples: Vec<ControlSequence<T>>,
    pub costs: Vec<T>,
    pub feasible: Vec<bool>,
    pub log_weights: Vec<T>,
    pub tau: T,
    pub key: Option<SampleKey>,
}

impl<T: Real> SampleBatch<T> {
    pub fn from_parts(
        samples: Vec<ControlSequence<T>>,
        costs: Vec<T>,
        feasible: Vec<bool>,
        tau: T,
        key: Option<SampleKey>,
    ) -> Result<Self> {
        check_len("costs", samples.len(), costs.len())?;
        check_len("feasibility flags", samples.len(), feasible.len())?;
        if !(tau > T::zero()) {
            return Err(Error::InvalidArgument("temperature must be positive".into()));
        }
        let log_weights = costs
            .iter()
            .zip(feasible.iter())
            .map(|(c, ok)| if *ok { -*c / tau } else { T::lit(f64::NEG_INFINITY) })
            .collect();
        Ok(Self {
            samples,
            costs,
            feasible,
            log_weights,
            tau,
            key,
        })
    }

    /// Rolls out every sample (in parallel) against `problem`.
    pub fn evaluate<P: TrajectoryProblem<T> + ?Sized>(
        problem: &P,
        samples: Vec<ControlSequence<T>>,
        tau: T,
        key: Option<SampleKey>,
    ) -> Result<Self> {
        let evals: Vec<_> = samples
            .par_iter()
            .map(|u| problem.evaluate(u))
            .collect::<Result<_>>()?;
        let costs = evals.iter().map(|e| e.cost).collect();
        let feasible = evals.iter().map(|e| e.feasible && e.cost.is_finite()).collect();
        Self::from_parts(samples, costs, feasible, tau, key)
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn best_feasible_cost(&self) -> Option<T> {
        self.costs
            .iter()
            .zip(self.feasible.iter())
            .filter(|(_, ok)| **ok)
            .map(|(c, _)| *c)
            .reduce(|a, b| a.min(b))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WeightSummary<T: Real> {
    pub normalized_weights: Vec<T>,
    pub effective_sample_size: T,
    pub acceptance_rate: T,
    /// `log( (1/N) Σ_j exp(−f0(u_j)/τ) 1_C(u_j) )`, computed stably.
    pub log_mean_weight: T,
}

/// Self-normalised weights `w̄_j ∝ exp(−(f0_j − min f0)/τ)` over the
/// feasible samples, zero elsewhere.
pub fn weigh<T: Real>(batch: &SampleBatch<T>) -> Result<WeightSummary<T>> {
    weigh_log_weights(&batch.log_weights, &batch.feasible)
}

fn weigh_log_weights<T: Real>(log_weights: &[T], feasible: &[bool]) -> Result<WeightSummary<T>> {
    let n = log_weights.len();
    let max = log_weights
        .iter()
        .zip(feasible.iter())
        .filter(|(_, ok)| **ok)
        .map(|(lw, _)| *lw)
        .reduce(|a, b| a.max(b))
        .ok_or(Error::AllInfeasible { samples: n })?;
    let raw: Vec<T> = log_weights
        .iter()
        .zip(feasible.iter())
        .map(|(lw, ok)| if *ok { (*lw - max).exp() } else { T::zero() })
        .collect();
    let total = raw.iter().fold(T::zero(), |acc, w| acc + *w);
    let normalized: Vec<T> = raw.iter().map(|w| *w / total).collect();
    let sum_sq = normalized.iter().fold(T::zero(), |acc, w| acc + *w * *w);
    let accepted = feasible.iter().filter(|ok| **ok).count();
    let n_t = T::from_usize_lossy(n);
    Ok(WeightSummary {
        effective_sample_size: T::one() / sum_sq,
        acceptance_rate: T::from_usize_lossy(accepted) / n_t,
        log_mean_weight: max + total.ln() - n_t.ln(),
        normalized_weights: normalized,
    })
}

/// `Σ_j w̄_j u_j`, accumulated in sample order.
pub fn weighted_mean<T: Real>(batch: &SampleBatch<T>, summary: &WeightSummary<T>) -> Result<ControlSequence<T>> {
    check_len("weights", batch.len(), summary.normalized_weights.len())?;
    let dim = batch.samples.first().map(|s| s.len()).unwrap_or(0);
    let mut acc = DVector::zeros(dim);
    for (u, w) in batch.samples.iter().zip(summary.normalized_weights.iter()) {
        if *w > T::zero() {
            acc.axpy(*w, u.as_vector(), T::one());
        }
    }
    Ok(ControlSequence::new(acc))
}
