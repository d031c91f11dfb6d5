use nalgebra::DVector;
use serde::Serialize;

use super::{ControlSequence, Reroot, TrajectoryProblem};
use crate::error::{Error, Result};
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Circle<T> {
    pub center: [T; 2],
    pub radius: T,
}

impl<T: Real> Circle<T> {
    /// Closed-disc membership: touching the boundary counts as collision.
    pub fn contains(&self, px: T, py: T) -> bool {
        let dx = px - self.center[0];
        let dy = py - self.center[1];
        dx * dx + dy * dy <= self.radius * self.radius
    }
}

/// Unicycle at constant speed, state `(p_x, p_y, heading)`, control the
/// turn rate `w_t`:
/// `x_{t+1} = x_t + [v cos θ_t, v sin θ_t, w_t] Δt`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DubinsSpec<T: Real> {
    pub speed: T,
    pub dt: T,
    pub horizon: usize,
    pub x0: [T; 3],
    pub target: [T; 3],
    pub q_diag: [T; 3],
    pub r: T,
    pub max_turn_rate: T,
    pub obstacles: Vec<Circle<T>>,
}

impl<T: Real> DubinsSpec<T> {
    /// Default task: `T = 20`, `v = 4`, `Δt = 0.1`, start `(0, 0, π/2)`,
    /// target `(6, 6, 0)`, `Q = diag(1, 1, 0.01)`, `R = 0.001`,
    /// `|w| <= 3π/2`, with [`Self::default_obstacles`].
    pub fn reach_task() -> Self {
        let l = T::lit;
        Self {
            speed: l(4.0),
            dt: l(0.1),
            horizon: 20,
            x0: [l(0.0), l(0.0), T::frac_pi_2()],
            target: [l(6.0), l(6.0), l(0.0)],
            q_diag: [l(1.0), l(1.0), l(0.01)],
            r: l(0.001),
            max_turn_rate: l(1.5) * T::pi(),
            obstacles: Self::default_obstacles(),
        }
    }

    /// Six discs of radius 0.6 on the grid `x ∈ {0, 2, 4}`, `y ∈ {3, 5}`.
    /// The disc at `(0, 3)` sits on the initial heading, so driving
    /// straight is infeasible.
    pub fn default_obstacles() -> Vec<Circle<T>> {
        let mut out = Vec::with_capacity(6);
        for cx in [0.0, 2.0, 4.0] {
            for cy in [3.0, 5.0] {
                out.push(Circle {
                    center: [T::lit(cx), T::lit(cy)],
                    radius: T::lit(0.6),
                });
            }
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        if self.speed <= T::zero() || self.dt <= T::zero() {
            return Err(Error::InvalidArgument("speed and dt must be positive".into()));
        }
        if self.horizon == 0 {
            return Err(Error::InvalidArgument("horizon must be positive".into()));
        }
        if self.max_turn_rate <= T::zero() {
            return Err(Error::InvalidArgument("turn-rate bound must be positive".into()));
        }
        if self.obstacles.iter().any(|o| o.radius <= T::zero()) {
            return Err(Error::InvalidArgument("obstacle radii must be positive".into()));
        }
        if self.q_diag.iter().any(|q| *q < T::zero()) || self.r < T::zero() {
            return Err(Error::InvalidArgument("cost weights must be nonnegative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct DubinsProblem<T: Real> {
    spec: DubinsSpec<T>,
    x0: DVector<T>,
    known_feasible: Option<ControlSequence<T>>,
}

impl<T: Real> DubinsProblem<T> {
    /// Builds the problem and registers the first feasible constant
    /// turn-rate sequence among `0, ±1, ±2, ...` (up to the bound).
    pub fn new(spec: DubinsSpec<T>) -> Result<Self> {
        spec.validate()?;
        let mut problem = Self::unchecked(spec);
        let mut candidates = vec![T::zero()];
        let mut w = T::one();
        while w <= problem.spec.max_turn_rate {
            candidates.push(-w);
            candidates.push(w);
            w += T::one();
        }
        let horizon = problem.spec.horizon;
        let found = candidates
            .into_iter()
            .map(|w| ControlSequence::new(DVector::from_element(horizon, w)))
            .find(|u| problem.feasible(u));
        match found {
            Some(u) => {
                problem.known_feasible = Some(u);
                Ok(problem)
            }
            None => Err(Error::Infeasible(
                "no constant turn-rate sequence clears the obstacles".into(),
            )),
        }
    }

    pub fn with_known_feasible(spec: DubinsSpec<T>, known: ControlSequence<T>) -> Result<Self> {
        spec.validate()?;
        let mut problem = Self::unchecked(spec);
        if !problem.feasible(&known) {
            return Err(Error::Infeasible(
                "registered control sequence collides or exceeds the turn-rate bound".into(),
            ));
        }
        problem.known_feasible = Some(known);
        Ok(problem)
    }

    fn unchecked(spec: DubinsSpec<T>) -> Self {
        let x0 = DVector::from_column_slice(&spec.x0);
        Self {
            spec,
            x0,
            known_feasible: None,
        }
    }

    pub fn spec(&self) -> &DubinsSpec<T> {
        &self.spec
    }

    /// `None` for re-rooted problems, which are not re-validated.
    pub fn known_feasible(&self) -> Option<&ControlSequence<T>> {
        self.known_feasible.as_ref()
    }

    pub fn collides(&self, x: &DVector<T>) -> bool {
        self.spec.obstacles.iter().any(|o| o.contains(x[0], x[1]))
    }

    pub fn without_obstacle(&self, index: usize) -> Self {
        let mut spec = self.spec.clone();
        spec.obstacles.remove(index);
        Self {
            spec,
            x0: self.x0.clone(),
            known_feasible: self.known_feasible.clone(),
        }
    }
}

impl<T: Real> TrajectoryProblem<T> for DubinsProblem<T> {
    fn control_dim(&self) -> usize {
        1
    }

    fn state_dim(&self) -> usize {
        3
    }

    fn horizon(&self) -> usize {
        self.spec.horizon
    }

    fn initial_state(&self) -> &DVector<T> {
        &self.x0
    }

    fn step(&self, x: &DVector<T>, u: &[T]) -> DVector<T> {
        let (v, dt) = (self.spec.speed, self.spec.dt);
        let heading = x[2];
        DVector::from_column_slice(&[
            x[0] + v * heading.cos() * dt,
            x[1] + v * heading.sin() * dt,
            x[2] + u[0] * dt,
        ])
    }

    fn state_cost(&self, x: &DVector<T>) -> T {
        (0..3).fold(T::zero(), |acc, i| {
            let e = x[i] - self.spec.target[i];
            acc + self.spec.q_diag[i] * e * e
        })
    }

    fn control_cost(&self, u: &[T]) -> T {
        self.spec.r * u[0] * u[0]
    }

    fn state_admissible(&self, x: &DVector<T>) -> bool {
        !self.collides(x)
    }

    fn control_admissible(&self, u: &[T]) -> bool {
        u[0].abs() <= self.spec.max_turn_rate
    }
}

impl<T: Real> Reroot<T> for DubinsProblem<T> {
    fn reroot(&self, initial_state: DVector<T>) -> Self {
        Self {
            spec: self.spec.clone(),
            x0: initial_state,
            known_feasible: None,
        }
    }
}
