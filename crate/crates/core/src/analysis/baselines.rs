use nalgebra::DVector;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{check_len, Error, Result};
use crate::optimizer::grad_estimate;
use crate::problems::{ControlSequence, TrajectoryProblem};
use crate::sampling::{derive_seed, draw, weigh, GaussianPolicy, SampleBatch, SampleKey};
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FdOptions<T> {
    /// Forward-difference perturbation `h`.
    pub perturbation: T,
    /// Gradient step `α`.
    pub step_size: T,
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FdTrace<T: Real> {
    /// `f0(u_k)` for `k = 0..K`.
    pub costs: Vec<T>,
    /// Objective evaluations spent once `costs[k]` is known.
    pub evaluations: Vec<usize>,
    pub last: DVector<T>,
}

/// Projected gradient descent with forward-difference gradients:
/// `u ← Π(u − α ĝ)`, `ĝ_i = (f0(u + h e_i) − f0(u))/h`. Each iteration costs
/// `n + 1` evaluations.
pub fn fd_baseline<T: Real>(
    objective: impl Fn(&DVector<T>) -> Result<T>,
    project: impl Fn(&DVector<T>) -> Result<DVector<T>>,
    u0: &DVector<T>,
    options: &FdOptions<T>,
) -> Result<FdTrace<T>> {
    if !(options.perturbation > T::zero()) || !(options.step_size > T::zero()) {
        return Err(Error::InvalidArgument(
            "perturbation and step size must be positive".into(),
        ));
    }
    let n = u0.len();
    let mut u = project(u0)?;
    let mut trace = FdTrace {
        costs: Vec::with_capacity(options.iterations + 1),
        evaluations: Vec::with_capacity(options.iterations + 1),
        last: u.clone(),
    };
    let mut spent = 0;
    for _ in 0..options.iterations {
        let f = objective(&u)?;
        spent += 1;
        trace.costs.push(f);
        trace.evaluations.push(spent);
        let mut g = DVector::zeros(n);
        for i in 0..n {
            let mut up = u.clone();
            up[i] += options.perturbation;
            g[i] = (objective(&up)? - f) / options.perturbation;
        }
        spent += n;
        u = project(&(&u - g * options.step_size))?;
    }
    trace.costs.push(objective(&u)?);
    trace.evaluations.push(spent + 1);
    trace.last = u;
    Ok(trace)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BiasRow<T> {
    pub samples: usize,
    pub trials: usize,
    /// `‖mean_t ĝ_N − ∇F‖`.
    pub bias_norm: T,
    /// Standard error of the trial mean, combined over coordinates.
    pub std_error: T,
    pub ci_low: T,
    pub ci_high: T,
}

/// Two-sided 95% normal quantile.
const Z95: f64 = 1.959963984540054;

/// Measures `‖E[ĝ_N] − ∇F‖` for each `N` over independent trials. Within a
/// trial every `N` uses a prefix of one shared draw of `max N` samples
/// (common random numbers). Trial `t` draws with seed `derive_seed(seed, t)`.
pub fn bias_probe<T: Real, P: TrajectoryProblem<T> + ?Sized>(
    problem: &P,
    policy: &GaussianPolicy<T>,
    exact_gradient: &DVector<T>,
    sample_sizes: &[usize],
    trials: usize,
    seed: u64,
) -> Result<Vec<BiasRow<T>>> {
    check_len("exact gradient", policy.dim(), exact_gradient.len())?;
    if trials < 2 || sample_sizes.is_empty() {
        return Err(Error::InvalidArgument("need at least two trials and one sample size".into()));
    }
    let max_n = *sample_sizes.iter().max().expect("non-empty");
    let per_trial: Vec<Vec<DVector<T>>> = (0..trials)
        .into_par_iter()
        .map(|t| -> Result<Vec<DVector<T>>> {
            let key = SampleKey::new(derive_seed(seed, t as u64), 0);
            let samples = draw(policy, max_n, false, key)?;
            let full = SampleBatch::evaluate(problem, samples, policy.tau(), Some(key))?;
            sample_sizes
                .iter()
                .map(|&n| {
                    let batch = SampleBatch::from_parts(
                        full.samples[..n].to_vec(),
                        full.costs[..n].to_vec(),
                        full.feasible[..n].to_vec(),
                        policy.tau(),
                        Some(key),
                    )?;
                    grad_estimate(policy, &batch, &weigh(&batch)?)
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    let t_count = T::from_usize_lossy(trials);
    let z = T::lit(Z95);
    let rows = sample_sizes
        .iter()
        .enumerate()
        .map(|(idx, &n)| {
            let mean = per_trial
                .iter()
                .fold(DVector::zeros(policy.dim()), |a, g| a + &g[idx])
                / t_count;
            let var = per_trial.iter().fold(DVector::zeros(policy.dim()), |a: DVector<T>, g| {
                let d = &g[idx] - &mean;
                a + d.component_mul(&d)
            }) / (t_count - T::one());
            let std_error = (var.sum() / t_count).sqrt();
            let bias_norm = (&mean - exact_gradient).norm();
            BiasRow {
                samples: n,
                trials,
                bias_norm,
                std_error,
                ci_low: (bias_norm - z * std_error).max(T::zero()),
                ci_high: bias_norm + z * std_error,
            }
        })
        .collect();
    Ok(rows)
}

/// Convenience wrapper: the rolled-out cost of a mean, as a closure target
/// for [`fd_baseline`].
pub fn sequence_objective<T: Real, P: TrajectoryProblem<T> + ?Sized>(
    problem: &P,
) -> impl Fn(&DVector<T>) -> Result<T> + '_ {
    move |u| problem.objective(&ControlSequence::new(u.clone()))
}
