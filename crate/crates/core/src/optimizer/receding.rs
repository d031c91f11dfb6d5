use std::time::Duration;

use nalgebra::DVector;
use serde::Serialize;

use super::{run, PgdConfig, Termination};
use crate::error::{check_len, Error, Result};
use crate::problems::{ControlSequence, Reroot};
use crate::sampling::{derive_seed, GaussianPolicy};
use crate::scalar::Real;

/// Metrics for one simulation step of a receding-horizon run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClosedLoopStep<T: Real> {
    /// Mean the optimizer started from.
    pub warm_start: DVector<T>,
    /// Mean the optimizer returned.
    pub plan: DVector<T>,
    pub applied: Vec<T>,
    pub stage_cost: T,
    /// Mean acceptance rate over the step's iterations.
    pub acceptance: T,
    pub iterations: usize,
    pub evaluations: usize,
    pub elapsed: Duration,
}

#[derive(Debug, Clone, Serialize)]
pub struct ClosedLoopTrace<T: Real> {
    /// `x_0, x_1, ...`, one more than the completed steps.
    pub states: Vec<DVector<T>>,
    pub steps: Vec<ClosedLoopStep<T>>,
    /// A realised state or applied control left the feasible set, or the
    /// optimizer aborted.
    pub unsafe_run: bool,
    #[serde(skip)]
    pub aborted: Option<Error>,
}

impl<T: Real> ClosedLoopTrace<T> {
    /// Mean realised stage cost.
    pub fn average_cost(&self) -> T {
        mean(self.steps.iter().map(|s| s.stage_cost))
    }

    pub fn average_acceptance(&self) -> T {
        mean(self.steps.iter().map(|s| s.acceptance))
    }

    pub fn total_elapsed(&self) -> Duration {
        self.steps.iter().map(|s| s.elapsed).sum()
    }
}

fn mean<T: Real>(values: impl Iterator<Item = T>) -> T {
    let (sum, n) = values.fold((T::zero(), 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        T::zero()
    } else {
        sum / T::from_usize_lossy(n)
    }
}

/// Closed-loop execution: at each step, optimise from the warm-started
/// mean, apply the first control, advance the true state and shift the
/// solution one block left with zero padding. Step `s` uses the run seed
/// `derive_seed(seed, s)`.
pub fn receding_horizon<T: Real, P: Reroot<T>>(
    problem: &P,
    initial: &GaussianPolicy<T>,
    config: &PgdConfig<T>,
    sim_steps: usize,
    seed: u64,
) -> Result<ClosedLoopTrace<T>> {
    config.validate()?;
    check_len("policy mean", problem.sequence_len(), initial.dim())?;
    let d = problem.control_dim();
    let mut x = problem.initial_state().clone();
    let mut warm = initial.clone();
    let mut trace = ClosedLoopTrace {
        states: vec![x.clone()],
        steps: Vec::with_capacity(sim_steps),
        unsafe_run: false,
        aborted: None,
    };
    for s in 0..sim_steps {
        let local = problem.reroot(x.clone());
        let outcome = run(&local, &warm, config, derive_seed(seed, s as u64))?;
        if let Termination::Aborted(e) = outcome.termination {
            trace.unsafe_run = true;
            trace.aborted = Some(e);
            break;
        }
        let plan = ControlSequence::new(outcome.policy.mean().clone());
        let applied = plan.step(0, d).to_vec();
        let next = local.step(&x, &applied);
        let stage_cost = local.state_cost(&next) + local.control_cost(&applied);
        if !local.control_admissible(&applied) || !local.state_admissible(&next) {
            trace.unsafe_run = true;
        }
        let acceptance = mean(outcome.trace.iter().map(|r| r.acceptance));
        trace.steps.push(ClosedLoopStep {
            warm_start: warm.mean().clone(),
            plan: plan.as_vector().clone(),
            applied,
            stage_cost,
            acceptance,
            iterations: outcome.trace.len(),
            evaluations: outcome.evaluations(),
            elapsed: outcome.trace.iter().map(|r| r.elapsed).sum(),
        });
        warm = warm.with_mean(plan.shifted(d).into_vector())?;
        x = next;
        trace.states.push(x.clone());
    }
    Ok(trace)
}
