use mppi_core::analysis::{
    free_energy_quadrature, hessian_f_gaussian, l_sigma_diameter_bound, l_sigma_quadratic, preconditioned_hessian_direct,
    tilted_moments_quadratic, tilted_moments_quadrature, QuadratureOptions,
};
use mppi_core::sampling::GaussianPolicy;
use mppi_core::QuadraticProblem;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn temperature_cancels_after_preconditioning(
        entries in prop::collection::vec(-1.0..1.0f64, 9),
        diag in prop::collection::vec(0.1..3.0f64, 3),
        tau in 0.05..20.0f64,
    ) {
        let a = DMatrix::from_iterator(3, 3, entries.iter().copied());
        let q = &a * a.transpose();
        let sigma = DMatrix::from_diagonal(&DVector::from_column_slice(&diag));
        let policy = GaussianPolicy::new(DVector::zeros(3), sigma.clone(), tau).unwrap();
        let t = tilted_moments_quadratic(&policy, &q, &DVector::zeros(3)).unwrap();
        let via_hessian = hessian_f_gaussian(&policy, &t.covariance).unwrap().preconditioned;
        let direct = preconditioned_hessian_direct(&sigma, &t.covariance).unwrap();
        prop_assert!((via_hessian - direct).amax() <= 1e-12);
    }

    #[test]
    fn closed_form_never_exceeds_diameter_bound(
        widths in prop::collection::vec(0.1..10.0f64, 2),
        diag in prop::collection::vec(0.01..4.0f64, 2),
        entries in prop::collection::vec(-3.0..3.0f64, 4),
        tau in 0.01..10.0f64,
    ) {
        let a = DMatrix::from_iterator(2, 2, entries.iter().copied());
        let q = &a * a.transpose();
        let sigma = DMatrix::from_diagonal(&DVector::from_column_slice(&diag));
        let lo = DVector::zeros(2);
        let hi = DVector::from_column_slice(&widths);
        let closed = l_sigma_quadratic(&sigma, &q, tau).unwrap().l_sigma;
        let bound = l_sigma_diameter_bound(&sigma, &lo, &hi).unwrap();
        prop_assert!(closed <= bound.estimate.l_sigma);
        prop_assert_eq!(bound.unit_step_admissible, bound.d2 < 12.0);
    }

    #[test]
    fn free_energy_upper_bounds_box_minimum(
        q in 0.0..5.0f64,
        c in -3.0..3.0f64,
        lo in -3.0..0.0f64,
        width in 0.2..4.0f64,
        mu in -2.0..2.0f64,
        sigma2 in 0.05..2.0f64,
        tau in 0.05..3.0f64,
    ) {
        let hi = lo + width;
        let p = QuadraticProblem::scalar(q, c, lo, hi).unwrap();
        let policy = GaussianPolicy::isotropic(DVector::from_element(1, mu), sigma2, tau).unwrap();
        let f = free_energy_quadrature(&p, &policy, &QuadratureOptions::default()).unwrap();
        let grid_min = (0..=10_000)
            .map(|i| lo + width * i as f64 / 10_000.0)
            .map(|u| 0.5 * q * u * u + c * u)
            .fold(f64::INFINITY, f64::min);
        prop_assert!(f >= grid_min - 1e-9, "F = {} < min f0 = {}", f, grid_min);
    }
}

#[test]
fn quadrature_gradient_matches_finite_differences_in_2d() {
    let q = DMatrix::from_row_slice(2, 2, &[1.5, 0.4, 0.4, 0.8]);
    let c = DVector::from_column_slice(&[0.2, -0.3]);
    let p = QuadraticProblem::new(q, c, DVector::from_column_slice(&[-1.5, -2.0]), DVector::from_column_slice(&[2.0, 1.5])).unwrap();
    let tau: f64 = 0.7;
    let sigma = DMatrix::from_row_slice(2, 2, &[0.6, 0.1, 0.1, 0.5]);
    let mu = DVector::from_column_slice(&[0.4, -0.6]);
    let opts = QuadratureOptions::with_tol(1e-10);
    let policy = GaussianPolicy::new(mu.clone(), sigma.clone(), tau).unwrap();
    let m = tilted_moments_quadrature(&p, &policy, &opts).unwrap();
    let g: DVector<f64> = policy.precision_times(&(&m.mean - &mu)) * (-tau);
    let h: f64 = 1e-3;
    for i in 0..2 {
        let mut up = mu.clone();
        up[i] += h;
        let mut dn = mu.clone();
        dn[i] -= h;
        let fu = free_energy_quadrature(&p, &policy.with_mean(up).unwrap(), &opts).unwrap();
        let fd = free_energy_quadrature(&p, &policy.with_mean(dn).unwrap(), &opts).unwrap();
        let fd_grad: f64 = (fu - fd) / (2.0 * h);
        assert!((fd_grad - g[i]).abs() <= 1e-5 * g[i].abs(), "{fd_grad} vs {}", g[i]);
    }
}
