use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use super::{ControlSequence, Reroot, TrajectoryProblem};
use crate::error::{check_len, Error, Result};
use crate::linalg::check_psd;
use crate::scalar::Real;

/// Linear dynamics `x_{t+1} = A x_t + B u_t` with quadratic stage costs
/// `x_tᵀ Q x_t + u_tᵀ R u_t` and box bounds on controls and states.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LqrSpec<T: Real> {
    pub a: DMatrix<T>,
    pub b: DMatrix<T>,
    pub q: DMatrix<T>,
    pub r: DMatrix<T>,
    pub horizon: usize,
    pub x0: DVector<T>,
    pub u_min: DVector<T>,
    pub u_max: DVector<T>,
    pub x_min: DVector<T>,
    pub x_max: DVector<T>,
}

impl<T: Real> LqrSpec<T> {
    /// Double integrator, `T = 10`, `x_0 = (2.5, 0)`, `|u| <= 1`,
    /// `x ∈ [-5, 5] × [-1, 1]`, identity weights.
    pub fn double_integrator() -> Self {
        let l = T::lit;
        Self {
            a: DMatrix::from_row_slice(2, 2, &[l(1.0), l(1.0), l(0.0), l(1.0)]),
            b: DMatrix::from_row_slice(2, 1, &[l(0.5), l(1.0)]),
            q: DMatrix::identity(2, 2),
            r: DMatrix::identity(1, 1),
            horizon: 10,
            x0: DVector::from_column_slice(&[l(2.5), l(0.0)]),
            u_min: DVector::from_element(1, l(-1.0)),
            u_max: DVector::from_element(1, l(1.0)),
            x_min: DVector::from_column_slice(&[l(-5.0), l(-1.0)]),
            x_max: DVector::from_column_slice(&[l(5.0), l(1.0)]),
        }
    }

    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn control_dim(&self) -> usize {
        self.b.ncols()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.state_dim();
        let m = self.control_dim();
        if !self.a.is_square() {
            return Err(Error::InvalidArgument("A must be square".into()));
        }
        if self.horizon == 0 || m == 0 || n == 0 {
            return Err(Error::InvalidArgument(
                "horizon and dimensions must be positive".into(),
            ));
        }
        check_len("B rows", n, self.b.nrows())?;
        check_len("Q rows", n, self.q.nrows())?;
        check_len("Q cols", n, self.q.ncols())?;
        check_len("R rows", m, self.r.nrows())?;
        check_len("R cols", m, self.r.ncols())?;
        check_len("x0", n, self.x0.len())?;
        check_len("u_min", m, self.u_min.len())?;
        check_len("u_max", m, self.u_max.len())?;
        check_len("x_min", n, self.x_min.len())?;
        check_len("x_max", n, self.x_max.len())?;
        check_psd("Q", &self.q, T::lit(1e-10))?;
        check_psd("R", &self.r, T::lit(1e-10))?;
        let ordered = |lo: &DVector<T>, hi: &DVector<T>| lo.iter().zip(hi.iter()).all(|(a, b)| a <= b);
        if !ordered(&self.u_min, &self.u_max) || !ordered(&self.x_min, &self.x_max) {
            return Err(Error::InvalidArgument("bounds must satisfy min <= max".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct LqrProblem<T: Real> {
    spec: LqrSpec<T>,
    known_feasible: ControlSequence<T>,
}

impl<T: Real> LqrProblem<T> {
    /// Builds the problem, registering the zero sequence as the known
    /// feasible point.
    pub fn new(spec: LqrSpec<T>) -> Result<Self> {
        let zeros = ControlSequence::zeros(spec.horizon * spec.control_dim());
        Self::with_known_feasible(spec, zeros)
    }

    pub fn with_known_feasible(spec: LqrSpec<T>, known: ControlSequence<T>) -> Result<Self> {
        spec.validate()?;
        let problem = Self {
            spec,
            known_feasible: known,
        };
        if !problem.feasible(&problem.known_feasible) {
            return Err(Error::Infeasible(
                "registered control sequence violates the LQR constraints".into(),
            ));
        }
        Ok(problem)
    }

    pub fn spec(&self) -> &LqrSpec<T> {
        &self.spec
    }

    pub fn known_feasible(&self) -> &ControlSequence<T> {
        &self.known_feasible
    }
}

fn within<T: Real>(v: &[T], lo: &DVector<T>, hi: &DVector<T>) -> bool {
    v.iter()
        .zip(lo.iter().zip(hi.iter()))
        .all(|(x, (l, h))| *x >= *l && *x <= *h)
}

impl<T: Real> TrajectoryProblem<T> for LqrProblem<T> {
    fn control_dim(&self) -> usize {
        self.spec.control_dim()
    }

    fn state_dim(&self) -> usize {
        self.spec.state_dim()
    }

    fn horizon(&self) -> usize {
        self.spec.horizon
    }

    fn initial_state(&self) -> &DVector<T> {
        &self.spec.x0
    }

    fn step(&self, x: &DVector<T>, u: &[T]) -> DVector<T> {
        let mut next = &self.spec.a * x;
        for (j, uj) in u.iter().enumerate() {
            next.axpy(*uj, &self.spec.b.column(j), T::one());
        }
        next
    }

    fn state_cost(&self, x: &DVector<T>) -> T {
        (x.transpose() * &self.spec.q * x)[(0, 0)]
    }

    fn control_cost(&self, u: &[T]) -> T {
        let r = &self.spec.r;
        let mut acc = T::zero();
        for i in 0..u.len() {
            for j in 0..u.len() {
                acc += u[i] * r[(i, j)] * u[j];
            }
        }
        acc
    }

    fn state_admissible(&self, x: &DVector<T>) -> bool {
        within(x.as_slice(), &self.spec.x_min, &self.spec.x_max)
    }

    fn control_admissible(&self, u: &[T]) -> bool {
        within(u, &self.spec.u_min, &self.spec.u_max)
    }
}

impl<T: Real> Reroot<T> for LqrProblem<T> {
    fn reroot(&self, initial_state: DVector<T>) -> Self {
        let mut spec = self.spec.clone();
        spec.x0 = initial_state;
        Self {
            spec,
            known_feasible: self.known_feasible.clone(),
        }
    }
}
