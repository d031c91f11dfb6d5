//! Exact oracles and theory checks: closed-form tilted statistics for
//! quadratics, quadrature in one and two dimensions, Hessians of the free
//! energy, smoothness constants and their diameter bound, a
//! finite-difference baseline and an empirical bias probe.

mod baselines;
mod quadrature;
mod report;
mod smoothness;
mod tilt;

pub use baselines::{bias_probe, fd_baseline, sequence_objective, BiasRow, FdOptions, FdTrace};
pub use quadrature::{
    free_energy_quadrature, gibbs_identity_check, tilted_moments_quadrature, BoxedObjective, FnObjective,
    GibbsResidual, QuadratureMoments, QuadratureOptions, QuadratureOracle, RhoSpec,
};
pub use report::{render_table, CheckRow};
pub use smoothness::{
    diameter_bound_value, l_sigma_diameter_bound, l_sigma_numeric, l_sigma_quadratic, l_sigma_quadratic_scalar,
    two_point_variance_max, DiameterBound, DiameterRoute, SmoothnessEstimate, SmoothnessMethod, TwoPointMax,
};
pub use tilt::{
    free_energy_quadratic, hessian_f_gaussian, preconditioned_hessian_direct, tilted_moments_quadratic,
    FreeEnergyHessian, QuadraticOracle, TiltedGaussian,
};
