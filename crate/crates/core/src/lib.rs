//! Model predictive path integral control viewed as preconditioned gradient
//! descent on a Gaussian-smoothed free energy.
//!
//! The crate is generic over the scalar type (`f32` or `f64`, see [`Real`]);
//! the aliases at the bottom fix it to `f64`.

// Argument checks are written `!(x > 0)` on purpose so that NaN is rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod error;
pub mod linalg;
pub mod optimizer;
pub mod problems;
pub mod qp;
pub mod sampling;
pub mod scalar;

pub use error::{Error, Result};
pub use problems::{
    Circle, ControlSequence, DubinsProblem, DubinsSpec, Evaluation, LqrProblem, LqrSpec, QuadraticProblem, Reroot,
    StateTrajectory, TrajectoryProblem,
};
pub use sampling::{draw, weigh, weighted_mean, GaussianPolicy, SampleBatch, SampleKey, WeightSummary};
pub use scalar::Real;

pub type Policy = GaussianPolicy<f64>;
pub type Controls = ControlSequence<f64>;
pub type Lqr = LqrProblem<f64>;
pub type Dubins = DubinsProblem<f64>;
pub type Qp = qp::QpProblem<f64>;
