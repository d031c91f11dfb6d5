//! Trajectory optimisation problems: dynamics, costs, feasible sets.
//!
//! Every problem has the same shape: a deterministic rollout
//! `x_{t+1} = F(x_t, u_t)` from a fixed initial state, an objective that
//! sums a state cost over `x_1..x_T` and a control cost over
//! `u_0..u_{T-1}`, and a hard feasible set given by per-step control and
//! state admissibility.

mod dubins;
mod lqr;
mod quadratic;

pub use dubins::{Circle, DubinsProblem, DubinsSpec};
pub use lqr::{LqrProblem, LqrSpec};
pub use quadratic::QuadraticProblem;

use std::ops::Deref;

use nalgebra::DVector;
use serde::Serialize;

use crate::error::{check_len, Result};
use crate::scalar::Real;

/// Stacked open-loop controls `(u_0, ..., u_{T-1})`, length `d·T`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ControlSequence<T: Real>(DVector<T>);

impl<T: Real> ControlSequence<T> {
    pub fn new(values: DVector<T>) -> Self {
        Self(values)
    }

    pub fn zeros(len: usize) -> Self {
        Self(DVector::zeros(len))
    }

    pub fn from_slice(values: &[T]) -> Self {
        Self(DVector::from_column_slice(values))
    }

    /// Control block `u_t` for a control dimension `d`.
    pub fn step(&self, t: usize, d: usize) -> &[T] {
        &self.0.as_slice()[t * d..(t + 1) * d]
    }

    pub fn as_vector(&self) -> &DVector<T> {
        &self.0
    }

    pub fn into_vector(self) -> DVector<T> {
        self.0
    }

    /// Drops the first control block and pads the tail with zeros.
    pub fn shifted(&self, d: usize) -> Self {
        let n = self.0.len();
        let mut out = DVector::zeros(n);
        if n > d {
            out.rows_mut(0, n - d).copy_from(&self.0.rows(d, n - d));
        }
        Self(out)
    }
}

impl<T: Real> Deref for ControlSequence<T> {
    type Target = DVector<T>;
    fn deref(&self) -> &DVector<T> {
        &self.0
    }
}

impl<T: Real> From<DVector<T>> for ControlSequence<T> {
    fn from(v: DVector<T>) -> Self {
        Self(v)
    }
}

/// States `x_0..x_T` of a deterministic rollout.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StateTrajectory<T: Real> {
    pub states: Vec<DVector<T>>,
}

/// Objective value and feasibility from a single rollout.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation<T> {
    pub cost: T,
    pub feasible: bool,
}

pub trait TrajectoryProblem<T: Real>: Sync {
    fn control_dim(&self) -> usize;
    fn state_dim(&self) -> usize;
    fn horizon(&self) -> usize;
    fn initial_state(&self) -> &DVector<T>;

    fn step(&self, x: &DVector<T>, u: &[T]) -> DVector<T>;

    /// Cost charged on each of `x_1..x_T`.
    fn state_cost(&self, x: &DVector<T>) -> T;
    /// Cost charged on each of `u_0..u_{T-1}`.
    fn control_cost(&self, u: &[T]) -> T;

    fn state_admissible(&self, x: &DVector<T>) -> bool;
    fn control_admissible(&self, u: &[T]) -> bool;

    fn sequence_len(&self) -> usize {
        self.control_dim() * self.horizon()
    }

    fn rollout(&self, u: &ControlSequence<T>) -> Result<StateTrajectory<T>> {
        check_len("control sequence", self.sequence_len(), u.len())?;
        let d = self.control_dim();
        let mut states = Vec::with_capacity(self.horizon() + 1);
        states.push(self.initial_state().clone());
        for t in 0..self.horizon() {
            let next = self.step(&states[t], u.step(t, d));
            states.push(next);
        }
        Ok(StateTrajectory { states })
    }

    fn objective(&self, u: &ControlSequence<T>) -> Result<T> {
        Ok(self.evaluate(u)?.cost)
    }

    /// Membership in the feasible set. Total: wrong lengths are infeasible.
    fn feasible(&self, u: &ControlSequence<T>) -> bool {
        self.evaluate(u).map(|e| e.feasible).unwrap_or(false)
    }

    fn evaluate(&self, u: &ControlSequence<T>) -> Result<Evaluation<T>> {
        check_len("control sequence", self.sequence_len(), u.len())?;
        let d = self.control_dim();
        let mut x = self.initial_state().clone();
        let mut cost = T::zero();
        let mut feasible = true;
        for t in 0..self.horizon() {
            let ut = u.step(t, d);
            feasible &= self.control_admissible(ut);
            x = self.step(&x, ut);
            feasible &= self.state_admissible(&x);
            cost += self.state_cost(&x) + self.control_cost(ut);
        }
        Ok(Evaluation { cost, feasible })
    }
}

/// Problems that can be re-posed from a different initial state, as needed
/// by receding-horizon execution.
pub trait Reroot<T: Real>: TrajectoryProblem<T> + Sized {
    fn reroot(&self, initial_state: DVector<T>) -> Self;
}

/// Free-function form of [`TrajectoryProblem::rollout`].
pub fn rollout<T: Real, P: TrajectoryProblem<T> + ?Sized>(
    problem: &P,
    u: &ControlSequence<T>,
) -> Result<StateTrajectory<T>> {
    problem.rollout(u)
}

/// Free-function form of [`TrajectoryProblem::feasible`].
pub fn feasible<T: Real, P: TrajectoryProblem<T> + ?Sized>(
    problem: &P,
    u: &ControlSequence<T>,
) -> bool {
    problem.feasible(u)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shift_drops_first_block() {
        let u = ControlSequence::from_slice(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let s = u.shifted(2);
        assert_eq!(s.as_slice(), &[3.0, 4.0, 5.0, 6.0, 0.0, 0.0]);
    }
}
