use nalgebra::{DMatrix, DVector};

use super::{ControlSequence, Reroot, TrajectoryProblem};
use crate::error::{check_len, Error, Result};
use crate::linalg::check_psd;
use crate::scalar::Real;

/// `f0(u) = ½uᵀQu + cᵀu` on a box, posed as a one-step problem whose
/// state is the control itself (`x_1 = u_0`). Infinite bounds are allowed.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticProblem<T: Real> {
    q: DMatrix<T>,
    c: DVector<T>,
    lower: DVector<T>,
    upper: DVector<T>,
    x0: DVector<T>,
}

impl<T: Real> QuadraticProblem<T> {
    pub fn new(q: DMatrix<T>, c: DVector<T>, lower: DVector<T>, upper: DVector<T>) -> Result<Self> {
        let n = c.len();
        check_len("Q rows", n, q.nrows())?;
        check_len("Q cols", n, q.ncols())?;
        check_len("lower bound", n, lower.len())?;
        check_len("upper bound", n, upper.len())?;
        check_psd("Q", &q, T::lit(1e-10))?;
        if lower.iter().zip(upper.iter()).any(|(l, u)| !(l < u)) {
            return Err(Error::InvalidArgument("box bounds must satisfy lower < upper".into()));
        }
        Ok(Self {
            q,
            c,
            lower,
            upper,
            x0: DVector::zeros(n),
        })
    }

    /// No constraints: `C = ℝⁿ`.
    pub fn unconstrained(q: DMatrix<T>, c: DVector<T>) -> Result<Self> {
        let n = c.len();
        let inf = T::lit(f64::INFINITY);
        Self::new(q, c, DVector::from_element(n, -inf), DVector::from_element(n, inf))
    }

    /// One-dimensional `½qu² + cu` on `[lower, upper]`.
    pub fn scalar(q: T, c: T, lower: T, upper: T) -> Result<Self> {
        Self::new(
            DMatrix::from_element(1, 1, q),
            DVector::from_element(1, c),
            DVector::from_element(1, lower),
            DVector::from_element(1, upper),
        )
    }

    pub fn dim(&self) -> usize {
        self.c.len()
    }

    pub fn q(&self) -> &DMatrix<T> {
        &self.q
    }

    pub fn c(&self) -> &DVector<T> {
        &self.c
    }

    pub fn lower(&self) -> &DVector<T> {
        &self.lower
    }

    pub fn upper(&self) -> &DVector<T> {
        &self.upper
    }

    pub fn value(&self, u: &[T]) -> T {
        let v = DVector::from_column_slice(u);
        (self.q.clone() * &v).dot(&v) * T::lit(0.5) + self.c.dot(&v)
    }

    pub fn contains(&self, u: &[T]) -> bool {
        u.iter()
            .zip(self.lower.iter().zip(self.upper.iter()))
            .all(|(x, (l, h))| *l <= *x && *x <= *h)
    }

    /// The box projection of the origin, which is always feasible.
    pub fn known_feasible(&self) -> ControlSequence<T> {
        ControlSequence::new(DVector::from_fn(self.dim(), |i, _| {
            T::zero().max(self.lower[i]).min(self.upper[i])
        }))
    }
}

impl<T: Real> TrajectoryProblem<T> for QuadraticProblem<T> {
    fn control_dim(&self) -> usize {
        self.dim()
    }

    fn state_dim(&self) -> usize {
        self.dim()
    }

    fn horizon(&self) -> usize {
        1
    }

    fn initial_state(&self) -> &DVector<T> {
        &self.x0
    }

    fn step(&self, _x: &DVector<T>, u: &[T]) -> DVector<T> {
        DVector::from_column_slice(u)
    }

    fn state_cost(&self, x: &DVector<T>) -> T {
        self.value(x.as_slice())
    }

    fn control_cost(&self, _u: &[T]) -> T {
        T::zero()
    }

    fn state_admissible(&self, _x: &DVector<T>) -> bool {
        true
    }

    fn control_admissible(&self, u: &[T]) -> bool {
        self.contains(u)
    }
}

impl<T: Real> Reroot<T> for QuadraticProblem<T> {
    fn reroot(&self, _initial_state: DVector<T>) -> Self {
        self.clone()
    }
}
