//! Preconditioned gradient descent on the free energy of a Gaussian mean:
//! sampled steps (multi-step MPPI), exact-expectation steps for oracle
//! problems, and receding-horizon execution.

mod receding;

pub use receding::{receding_horizon, ClosedLoopStep, ClosedLoopTrace};

use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{check_len, Error, Result};
use crate::problems::{ControlSequence, TrajectoryProblem};
use crate::sampling::{draw, weigh, weighted_mean, GaussianPolicy, SampleBatch, SampleKey, WeightSummary};
use crate::scalar::Real;

/// Preconditioner `P` of the update `μ ← μ − η P ∇F(μ)`.
#[derive(Debug, Clone, PartialEq)]
pub enum Preconditioner<T: Real> {
    /// `P = Σ/τ`; the update becomes `(1 − η)μ + η·E_ρ[u]`.
    SigmaOverTau,
    /// An explicit SPD matrix.
    Matrix(DMatrix<T>),
}

#[derive(Debug, Clone)]
pub struct PgdConfig<T: Real> {
    pub step_size: T,
    pub preconditioner: Preconditioner<T>,
    /// Iteration budget `K`.
    pub iterations: usize,
    /// Samples per iteration `N`.
    pub samples: usize,
    pub antithetic: bool,
    /// Stop once the windowed mean of `‖ĝ‖_P` drops to this value; 0 disables.
    pub stationarity_tol: T,
    pub stationarity_window: usize,
    /// Redraws allowed per iteration when every sample is infeasible.
    pub max_retries: u32,
    /// Covariance scale applied on each redraw.
    pub inflation: T,
}

impl<T: Real> Default for PgdConfig<T> {
    fn default() -> Self {
        Self {
            step_size: T::one(),
            preconditioner: Preconditioner::SigmaOverTau,
            iterations: 1,
            samples: 1000,
            antithetic: false,
            stationarity_tol: T::zero(),
            stationarity_window: 5,
            max_retries: 3,
            inflation: T::lit(2.0),
        }
    }
}

impl<T: Real> PgdConfig<T> {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.to_string()));
        if !(self.step_size >= T::zero()) {
            return bad("step size must be nonnegative");
        }
        if self.iterations == 0 {
            return bad("iteration budget must be at least 1");
        }
        if self.samples < 2 {
            return bad("need at least two samples per iteration");
        }
        if self.antithetic && !self.samples.is_multiple_of(2) {
            return bad("antithetic sampling needs an even sample count");
        }
        if !(self.stationarity_tol >= T::zero()) {
            return bad("stationarity tolerance must be nonnegative");
        }
        if self.stationarity_window == 0 {
            return bad("stationarity window must be at least 1");
        }
        if !(self.inflation >= T::one()) {
            return bad("covariance inflation must be at least 1");
        }
        if let Preconditioner::Matrix(p) = &self.preconditioner {
            if p.clone().cholesky().is_none() {
                return Err(Error::NotPositiveDefinite("preconditioner"));
            }
        }
        Ok(())
    }
}

/// `η = 1/L`, the midpoint of the admissible interval `(0, 2/L)`.
pub fn step_size_rule<T: Real>(l_sigma: T) -> Result<T> {
    if !(l_sigma > T::zero()) || !l_sigma.is_finite() {
        return Err(Error::InvalidArgument(
            "smoothness constant must be positive and finite".into(),
        ));
    }
    Ok(T::one() / l_sigma)
}

/// Self-normalised plug-in `−τ Σ⁻¹(Σ_j w̄_j u_j − μ)`.
pub fn grad_estimate<T: Real>(
    policy: &GaussianPolicy<T>,
    batch: &SampleBatch<T>,
    summary: &WeightSummary<T>,
) -> Result<DVector<T>> {
    let ybar = weighted_mean(batch, summary)?;
    check_len("weighted mean", policy.dim(), ybar.len())?;
    Ok(gradient_from_mean(policy, ybar.as_vector()))
}

fn gradient_from_mean<T: Real>(policy: &GaussianPolicy<T>, tilted_mean: &DVector<T>) -> DVector<T> {
    policy.precision_times(&(tilted_mean - policy.mean())) * (-policy.tau())
}

/// `‖g‖²_P = gᵀ P g`, where `g = −τΣ⁻¹(ȳ − μ)`.
fn grad_norm_sq<T: Real>(
    policy: &GaussianPolicy<T>,
    preconditioner: &Preconditioner<T>,
    tilted_mean: &DVector<T>,
) -> T {
    let diff = tilted_mean - policy.mean();
    match preconditioner {
        Preconditioner::SigmaOverTau => policy.whiten(&diff).norm_squared() * policy.tau(),
        Preconditioner::Matrix(p) => {
            let g = gradient_from_mean(policy, tilted_mean);
            g.dot(&(p * &g))
        }
    }
}

fn apply_update<T: Real>(
    policy: &GaussianPolicy<T>,
    step: T,
    preconditioner: &Preconditioner<T>,
    tilted_mean: &DVector<T>,
) -> DVector<T> {
    let mu = policy.mean();
    match preconditioner {
        Preconditioner::SigmaOverTau => {
            let keep = T::one() - step;
            DVector::from_fn(mu.len(), |i, _| keep * mu[i] + step * tilted_mean[i])
        }
        Preconditioner::Matrix(p) => {
            let g = gradient_from_mean(policy, tilted_mean);
            mu - p * g * step
        }
    }
}

/// One row of an optimizer trace.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IterationRecord<T: Real> {
    pub k: usize,
    /// `μ_k`, the mean the batch was drawn around.
    pub mean: DVector<T>,
    /// Monte Carlo estimate of `‖∇F(μ_k)‖_P`.
    pub grad_norm_p: T,
    pub ess: T,
    pub acceptance: T,
    pub best_cost: Option<T>,
    /// Estimate of `log Z(μ_k)`, so `−τ` times it estimates `F(μ_k)`.
    pub log_mean_weight: T,
    pub retries: u32,
    pub evaluations: usize,
    pub elapsed: Duration,
}

/// Draws around `policy`, weighs the batch and takes one step.
///
/// When every sample is infeasible the batch is redrawn, up to
/// `max_retries` times, with covariance scaled by `inflation^attempt`; the
/// gradient is then formed for the inflated family. The returned policy
/// keeps the original covariance.
pub fn pgd_step<T: Real, P: TrajectoryProblem<T> + ?Sized>(
    problem: &P,
    policy: &GaussianPolicy<T>,
    config: &PgdConfig<T>,
    key: SampleKey,
) -> Result<(GaussianPolicy<T>, IterationRecord<T>)> {
    check_len("policy mean", problem.sequence_len(), policy.dim())?;
    let start = Instant::now();
    let mut evaluations = 0;
    let mut attempt = 0u32;
    let mut scale = T::one();
    loop {
        let sampler = if attempt == 0 {
            policy.clone()
        } else {
            policy.inflated(scale)?
        };
        let key = key.with_attempt(attempt);
        let samples = draw(&sampler, config.samples, config.antithetic, key)?;
        let batch = SampleBatch::evaluate(problem, samples, sampler.tau(), Some(key))?;
        evaluations += batch.len();
        match weigh(&batch) {
            Ok(summary) => {
                let ybar = weighted_mean(&batch, &summary)?.into_vector();
                let mean = apply_update(&sampler, config.step_size, &config.preconditioner, &ybar);
                let record = IterationRecord {
                    k: key.iteration as usize,
                    mean: policy.mean().clone(),
                    grad_norm_p: grad_norm_sq(&sampler, &config.preconditioner, &ybar).sqrt(),
                    ess: summary.effective_sample_size,
                    acceptance: summary.acceptance_rate,
                    best_cost: batch.best_feasible_cost(),
                    log_mean_weight: summary.log_mean_weight,
                    retries: attempt,
                    evaluations,
                    elapsed: start.elapsed(),
                };
                return Ok((policy.with_mean(mean)?, record));
            }
            Err(Error::AllInfeasible { .. }) if attempt < config.max_retries => {
                attempt += 1;
                scale *= config.inflation;
            }
            Err(e) => return Err(e),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Termination {
    /// The full iteration budget was used.
    Completed,
    /// The windowed gradient norm met the stationarity tolerance.
    Converged,
    /// A step failed; the trace holds every completed iteration.
    Aborted(Error),
}

#[derive(Debug, Clone)]
pub struct RunOutcome<T: Real> {
    pub policy: GaussianPolicy<T>,
    pub trace: Vec<IterationRecord<T>>,
    pub termination: Termination,
}

impl<T: Real> RunOutcome<T> {
    pub fn evaluations(&self) -> usize {
        self.trace.iter().map(|r| r.evaluations).sum()
    }
}

/// Up to `K` sampled steps from `initial`. Iteration `k` draws with key
/// `(seed, k)`.
pub fn run<T: Real, P: TrajectoryProblem<T> + ?Sized>(
    problem: &P,
    initial: &GaussianPolicy<T>,
    config: &PgdConfig<T>,
    seed: u64,
) -> Result<RunOutcome<T>> {
    config.validate()?;
    check_len("policy mean", problem.sequence_len(), initial.dim())?;
    let mut policy = initial.clone();
    let mut trace: Vec<IterationRecord<T>> = Vec::with_capacity(config.iterations);
    let window = config.stationarity_window;
    for k in 0..config.iterations {
        match pgd_step(problem, &policy, config, SampleKey::new(seed, k as u64)) {
            Ok((next, record)) => {
                policy = next;
                trace.push(record);
            }
            Err(e) => {
                return Ok(RunOutcome {
                    policy,
                    trace,
                    termination: Termination::Aborted(e),
                })
            }
        }
        if config.stationarity_tol > T::zero() && trace.len() >= window {
            let recent = &trace[trace.len() - window..];
            let avg = recent.iter().fold(T::zero(), |a, r| a + r.grad_norm_p)
                / T::from_usize_lossy(window);
            if avg <= config.stationarity_tol {
                return Ok(RunOutcome {
                    policy,
                    trace,
                    termination: Termination::Converged,
                });
            }
        }
    }
    Ok(RunOutcome {
        policy,
        trace,
        termination: Termination::Completed,
    })
}

/// Exact tilted statistics for a fixed objective and feasible set.
pub trait ExactOracle<T: Real> {
    /// `E_ρ[u]` for the tilt of `policy`.
    fn tilted_mean(&self, policy: &GaussianPolicy<T>) -> Result<DVector<T>>;
    /// `F(μ) = −τ log Z(μ)`, up to an additive constant fixed per oracle.
    fn free_energy(&self, policy: &GaussianPolicy<T>) -> Result<T>;
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExactTrace<T: Real> {
    /// `μ_0..μ_K`.
    pub means: Vec<DVector<T>>,
    /// `F(μ_0)..F(μ_K)`.
    pub free_energy: Vec<T>,
    /// `‖∇F(μ_0)‖²_P..‖∇F(μ_K)‖²_P`.
    pub grad_norm_sq: Vec<T>,
}

/// Deterministic iteration with `E_ρ[u]` taken from an oracle. Runs all
/// `K` steps and records `K + 1` points.
pub fn run_exact<T: Real, O: ExactOracle<T> + ?Sized>(
    oracle: &O,
    initial: &GaussianPolicy<T>,
    config: &PgdConfig<T>,
) -> Result<ExactTrace<T>> {
    config.validate()?;
    let mut policy = initial.clone();
    let mut trace = ExactTrace {
        means: Vec::with_capacity(config.iterations + 1),
        free_energy: Vec::with_capacity(config.iterations + 1),
        grad_norm_sq: Vec::with_capacity(config.iterations + 1),
    };
    for k in 0..=config.iterations {
        let m = oracle.tilted_mean(&policy)?;
        check_len("tilted mean", policy.dim(), m.len())?;
        trace.means.push(policy.mean().clone());
        trace.free_energy.push(oracle.free_energy(&policy)?);
        trace
            .grad_norm_sq
            .push(grad_norm_sq(&policy, &config.preconditioner, &m));
        if k < config.iterations {
            let next = apply_update(&policy, config.step_size, &config.preconditioner, &m);
            policy = policy.with_mean(next)?;
        }
    }
    Ok(trace)
}

/// `ControlSequence` view of a policy mean.
pub fn mean_sequence<T: Real>(policy: &GaussianPolicy<T>) -> ControlSequence<T> {
    ControlSequence::new(policy.mean().clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::LqrProblem;
    use crate::problems::LqrSpec;
    use approx::assert_relative_eq;

    fn lqr() -> LqrProblem<f64> {
        LqrProblem::new(LqrSpec::double_integrator()).unwrap()
    }

    fn config(step: f64, samples: usize) -> PgdConfig<f64> {
        PgdConfig {
            step_size: step,
            samples,
            antithetic: true,
            ..PgdConfig::default()
        }
    }

    #[test]
    fn step_size_rule_examples() {
        assert_relative_eq!(step_size_rule(0.1).unwrap(), 10.0, epsilon = 1e-12);
        assert_eq!(step_size_rule(2.0).unwrap(), 0.5);
        assert_eq!(step_size_rule(1.0).unwrap(), 1.0);
        assert!(step_size_rule(0.0).is_err());
        assert!(step_size_rule(-1.0).is_err());
    }

    #[test]
    fn unit_step_is_the_weighted_mean() {
        let p = lqr();
        let policy = GaussianPolicy::isotropic(DVector::zeros(10), 0.01, 1.0).unwrap();
        let key = SampleKey::new(5, 0);
        let (next, _) = pgd_step(&p, &policy, &config(1.0, 64), key).unwrap();
        let samples = draw(&policy, 64, true, key).unwrap();
        let batch = SampleBatch::evaluate(&p, samples, 1.0, Some(key)).unwrap();
        let ybar = weighted_mean(&batch, &weigh(&batch).unwrap()).unwrap();
        assert_eq!(next.mean(), ybar.as_vector());
    }

    #[test]
    fn zero_and_half_steps() {
        let p = lqr();
        let mu = DVector::from_element(10, 0.1);
        let policy = GaussianPolicy::isotropic(mu.clone(), 0.01, 1.0).unwrap();
        let key = SampleKey::new(1, 4);
        let (stay, _) = pgd_step(&p, &policy, &config(0.0, 32), key).unwrap();
        assert_eq!(stay.mean(), &mu);
        let (full, _) = pgd_step(&p, &policy, &config(1.0, 32), key).unwrap();
        let (half, _) = pgd_step(&p, &policy, &config(0.5, 32), key).unwrap();
        assert_relative_eq!(half.mean().clone(), (&mu + full.mean()) * 0.5, epsilon = 1e-14);
    }

    #[test]
    fn explicit_preconditioner_matches_sigma_over_tau() {
        let p = lqr();
        let tau = 0.7;
        let sigma2 = 0.02;
        let policy = GaussianPolicy::isotropic(DVector::zeros(10), sigma2, tau).unwrap();
        let key = SampleKey::new(2, 0);
        let mut cfg = config(0.8, 64);
        let (a, ra) = pgd_step(&p, &policy, &cfg, key).unwrap();
        cfg.preconditioner = Preconditioner::Matrix(DMatrix::identity(10, 10) * (sigma2 / tau));
        let (b, rb) = pgd_step(&p, &policy, &cfg, key).unwrap();
        assert_relative_eq!(a.mean().clone(), b.mean().clone(), epsilon = 1e-12);
        assert_relative_eq!(ra.grad_norm_p, rb.grad_norm_p, max_relative = 1e-10);
    }

    #[test]
    fn grad_estimate_zero_when_mean_is_fixed() {
        let policy = GaussianPolicy::isotropic(DVector::from_column_slice(&[1.0]), 1.0, 1.0).unwrap();
        let samples = vec![ControlSequence::from_slice(&[0.0]), ControlSequence::from_slice(&[2.0])];
        let batch = SampleBatch::from_parts(samples, vec![1.0, 1.0], vec![true, true], 1.0, None).unwrap();
        let g = grad_estimate(&policy, &batch, &weigh(&batch).unwrap()).unwrap();
        assert_eq!(g[0], 0.0);
    }

    #[test]
    fn run_is_deterministic_and_counts() {
        let p = lqr();
        let policy = GaussianPolicy::isotropic(DVector::zeros(10), 1e-4, 1.0).unwrap();
        let cfg = PgdConfig {
            iterations: 7,
            ..config(1.0, 100)
        };
        let a = run(&p, &policy, &cfg, 9).unwrap();
        let b = run(&p, &policy, &cfg, 9).unwrap();
        assert_eq!(a.termination, Termination::Completed);
        assert_eq!(a.trace.len(), 7);
        assert_eq!(a.evaluations(), 700);
        assert_eq!(a.policy.mean(), b.policy.mean());
        for (x, y) in a.trace.iter().zip(b.trace.iter()) {
            assert_eq!(x.mean, y.mean);
            assert_eq!(x.grad_norm_p, y.grad_norm_p);
        }
    }

    #[test]
    fn rejects_bad_config() {
        let p = lqr();
        let policy = GaussianPolicy::isotropic(DVector::zeros(10), 1e-4, 1.0).unwrap();
        let mut cfg = config(1.0, 100);
        cfg.iterations = 0;
        assert!(run(&p, &policy, &cfg, 0).is_err());
        let mut cfg = config(1.0, 101);
        cfg.iterations = 1;
        assert!(run(&p, &policy, &cfg, 0).is_err());
    }

    #[test]
    fn stationarity_stops_early() {
        // Zero objective: the tilt equals the sampling law and the estimate
        // is the sample-mean noise of an antithetic batch, exactly zero.
        let mut spec = LqrSpec::<f64>::double_integrator();
        spec.x0 = DVector::zeros(2);
        spec.q = DMatrix::zeros(2, 2);
        spec.r = DMatrix::zeros(1, 1);
        let p = LqrProblem::new(spec).unwrap();
        let policy = GaussianPolicy::isotropic(DVector::zeros(10), 1e-4, 1.0).unwrap();
        let cfg = PgdConfig {
            iterations: 100,
            stationarity_tol: 1e-12,
            ..config(1.0, 50)
        };
        let out = run(&p, &policy, &cfg, 3).unwrap();
        assert_eq!(out.termination, Termination::Converged);
        assert_eq!(out.trace.len(), 5);
    }
}
