//! Battery of exact checks on small instances: gradient and Hessian of the
//! free energy, descent and stationarity in exact mode, the diameter bound,
//! the variational identity and the weight invariants.

use mppi_core::analysis::{
    diameter_bound_value, free_energy_quadratic, gibbs_identity_check, hessian_f_gaussian, l_sigma_diameter_bound,
    l_sigma_quadratic, l_sigma_quadratic_scalar, preconditioned_hessian_direct, tilted_moments_quadrature,
    two_point_variance_max, CheckRow, QuadraticOracle, QuadratureOptions, RhoSpec,
};
use mppi_core::linalg::lambda_max;
use mppi_core::optimizer::{run_exact, PgdConfig};
use mppi_core::sampling::{derive_seed, weigh, SampleBatch};
use mppi_core::{ControlSequence, GaussianPolicy, QuadraticProblem};
use nalgebra::{DMatrix, DVector};

use crate::config::TheoryConfig;

/// Deterministic uniform stream on `[lo, hi)`.
pub struct Uniform {
    seed: u64,
    counter: u64,
}

impl Uniform {
    pub fn new(seed: u64) -> Self {
        Self { seed, counter: 0 }
    }

    pub fn next(&mut self, lo: f64, hi: f64) -> f64 {
        let bits = derive_seed(self.seed, self.counter) >> 11;
        self.counter += 1;
        lo + (hi - lo) * (bits as f64 / (1u64 << 53) as f64)
    }
}

/// A random 1-D quadratic on a box with a policy whose tilt is well inside
/// the box.
pub struct ScalarInstance {
    pub problem: QuadraticProblem<f64>,
    pub policy: GaussianPolicy<f64>,
    pub sigma2: f64,
    pub tau: f64,
}

pub fn scalar_instance(rng: &mut Uniform) -> ScalarInstance {
    let q = rng.next(0.5, 5.0);
    let c = rng.next(-2.0, 2.0);
    let lo = rng.next(-3.0, -0.5);
    let hi = rng.next(0.5, 3.0);
    let mu = rng.next(-1.0, 1.0);
    let sigma2 = rng.next(0.2, 2.0);
    let tau = rng.next(0.2, 2.0);
    ScalarInstance {
        problem: QuadraticProblem::scalar(q, c, lo, hi).expect("valid instance"),
        policy: GaussianPolicy::isotropic(DVector::from_element(1, mu), sigma2, tau).expect("valid policy"),
        sigma2,
        tau,
    }
}

fn at(policy: &GaussianPolicy<f64>, mu: f64) -> GaussianPolicy<f64> {
    policy.with_mean(DVector::from_element(1, mu)).expect("1-D mean")
}

fn quad_f(inst: &ScalarInstance, mu: f64, opts: &QuadratureOptions<f64>) -> f64 {
    tilted_moments_quadrature(&inst.problem, &at(&inst.policy, mu), opts)
        .expect("quadrature converges")
        .free_energy
}

/// `−τ(m − μ)/σ²` from quadrature moments against central differences of
/// quadrature `F`.
pub fn gradient_check(inst: &ScalarInstance, flip_sign: bool) -> (f64, f64) {
    let opts = QuadratureOptions::with_tol(1e-12);
    let mu = inst.policy.mean()[0];
    let m = tilted_moments_quadrature(&inst.problem, &inst.policy, &opts).expect("quadrature converges");
    let mut exact = -inst.tau * (m.mean[0] - mu) / inst.sigma2;
    if flip_sign {
        exact = -exact;
    }
    let h = 1e-3;
    let fd = (quad_f(inst, mu + h, &opts) - quad_f(inst, mu - h, &opts)) / (2.0 * h);
    (exact, fd)
}

/// Preconditioned Hessian `1 − Var/σ²` against `(σ²/τ)` times the second
/// difference of quadrature `F`, plus the two algebraic routes.
pub fn hessian_check(inst: &ScalarInstance) -> (f64, f64, f64) {
    let opts = QuadratureOptions::with_tol(1e-12);
    let mu = inst.policy.mean()[0];
    let m = tilted_moments_quadrature(&inst.problem, &inst.policy, &opts).expect("quadrature converges");
    let via_hessian = hessian_f_gaussian(&inst.policy, &m.covariance).expect("1-D").preconditioned[(0, 0)];
    let direct = preconditioned_hessian_direct(inst.policy.covariance(), &m.covariance).expect("1-D")[(0, 0)];
    let h = 5e-3;
    let second = (quad_f(inst, mu + h, &opts) - 2.0 * quad_f(inst, mu, &opts) + quad_f(inst, mu - h, &opts)) / (h * h);
    (via_hessian, direct, inst.sigma2 / inst.tau * second)
}

/// Random SPD `Q` of size `n`.
pub fn random_spd(rng: &mut Uniform, n: usize, scale: f64) -> DMatrix<f64> {
    let a = DMatrix::from_fn(n, n, |_, _| rng.next(-1.0, 1.0));
    (&a * a.transpose() + DMatrix::identity(n, n) * 0.05) * scale
}

/// Worst descent-inequality slack and worst ratio of the running minimum
/// of `‖∇F‖²_P` to the ergodic bound, for an exact run.
pub fn descent_check(q: &DMatrix<f64>, c: &DVector<f64>, policy: &GaussianPolicy<f64>, eta: f64, l: f64, k: usize) -> (f64, f64) {
    let oracle = QuadraticOracle::new(q.clone(), c.clone());
    let cfg = PgdConfig {
        step_size: eta,
        iterations: k,
        ..PgdConfig::default()
    };
    let t = run_exact(&oracle, policy, &cfg).expect("quadratic oracle");
    let coef = eta * (1.0 - eta * l / 2.0);
    let mut min_slack = f64::INFINITY;
    for i in 0..k {
        min_slack = min_slack.min(t.free_energy[i] - coef * t.grad_norm_sq[i] - t.free_energy[i + 1]);
    }
    let mu_star = -q.clone().try_inverse().expect("Q is SPD") * c;
    let f_star = free_energy_quadratic(&policy.with_mean(mu_star).expect("dimension"), q, c).expect("valid");
    let mut best = f64::INFINITY;
    let mut worst_ratio: f64 = 0.0;
    for kk in 1..=k {
        best = best.min(t.grad_norm_sq[kk - 1]);
        let bound = (t.free_energy[0] - f_star) / (kk as f64 * coef);
        worst_ratio = worst_ratio.max(if bound > 0.0 { best / bound } else { 0.0 });
    }
    (min_slack, worst_ratio)
}

pub fn run_theory_suite(cfg: &TheoryConfig, seed: u64) -> Vec<CheckRow> {
    let mut rows = Vec::new();
    let mut rng = Uniform::new(seed);
    for i in 0..cfg.instances {
        let inst = scalar_instance(&mut rng);
        let (exact, fd) = gradient_check(&inst, cfg.inject_sign_bug);
        rows.push(CheckRow::relative(format!("gradient[{i}]"), exact, fd, 1e-5));
        let (via_h, direct, fd2) = hessian_check(&inst);
        rows.push(CheckRow::relative(format!("precond_hessian[{i}]"), via_h, fd2, 1e-4));
        rows.push(CheckRow::absolute(format!("temperature_cancel[{i}]"), via_h, direct, 1e-12));
        for (j, rho) in [
            RhoSpec::Tilt,
            RhoSpec::RestrictedBase,
            RhoSpec::ShiftedGaussian { mean: 0.3, std: 0.7 },
        ]
        .into_iter()
        .enumerate()
        {
            let r = gibbs_identity_check(&inst.problem, &inst.policy, rho, &QuadratureOptions::with_tol(1e-10))
                .expect("bounded 1-D instance");
            rows.push(CheckRow::absolute(format!("gibbs_identity[{i}][rho{j}]"), r.lhs, r.rhs, 1e-6));
        }
    }
    for i in 0..cfg.instances {
        let q = random_spd(&mut rng, 3, 2.0);
        let c = DVector::from_fn(3, |_, _| rng.next(-2.0, 2.0));
        let sigma2 = rng.next(0.05, 2.0);
        let tau = rng.next(0.1, 5.0);
        let policy = GaussianPolicy::isotropic(DVector::from_fn(3, |_, _| rng.next(-3.0, 3.0)), sigma2, tau).expect("valid");
        let l = l_sigma_quadratic(&(DMatrix::identity(3, 3) * sigma2), &q, tau).expect("valid").l_sigma;
        rows.push(CheckRow::absolute(
            format!("l_sigma_routes[{i}]"),
            l_sigma_quadratic_scalar(sigma2, lambda_max(&q), tau),
            l,
            1e-12,
        ));
        for factor in [0.5, 1.0, 1.9] {
            let (slack, ratio) = descent_check(&q, &c, &policy, factor / l, l, 200);
            rows.push(CheckRow::upper_bound(format!("descent_deficit[{i}][{factor}/L]"), 0.0, (-slack).max(0.0), 1e-9));
            rows.push(CheckRow::upper_bound(format!("stationarity_ratio[{i}][{factor}/L]"), 1.0, ratio, 1e-12));
        }
    }
    let one = DMatrix::from_element(1, 1, 1.0);
    let unit = l_sigma_diameter_bound(&one, &DVector::from_element(1, -1.0), &DVector::from_element(1, 1.0)).expect("bounded");
    rows.push(CheckRow::absolute("diameter_bound[D2=4]", 1.0, unit.estimate.l_sigma, 0.0));
    rows.push(CheckRow::flag("unit_step_flag[D2=4]", unit.unit_step_admissible));
    rows.push(CheckRow::absolute("diameter_bound[D2=20]", 4.0, diameter_bound_value(20.0), 0.0));
    let tp = two_point_variance_max(2.0, 40).expect("valid");
    rows.push(CheckRow::absolute("two_point_variance[D=2]", 1.0, tp.variance, 1e-8));

    let costs: Vec<f64> = (0..64).map(|_| rng.next(-50.0, 50.0)).collect();
    let feasible: Vec<bool> = (0..64).map(|j| j % 3 != 1).collect();
    let samples: Vec<ControlSequence<f64>> = (0..64).map(|j| ControlSequence::from_slice(&[j as f64])).collect();
    let batch = SampleBatch::from_parts(samples.clone(), costs.clone(), feasible.clone(), 0.3, None).expect("valid");
    let w = weigh(&batch).expect("some feasible");
    rows.push(CheckRow::absolute("weights_sum", 1.0, w.normalized_weights.iter().sum(), 1e-12));
    let shifted: Vec<f64> = costs.iter().map(|c| c + 123.0).collect();
    let w2 = weigh(&SampleBatch::from_parts(samples, shifted, feasible, 0.3, None).expect("valid")).expect("some feasible");
    let shift_err = w
        .normalized_weights
        .iter()
        .zip(w2.normalized_weights.iter())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    rows.push(CheckRow::absolute("weights_shift_invariance", 0.0, shift_err, 1e-12));

    let (mu0, s2, tau) = (2.0, 0.5, 1.5);
    let oracle = QuadraticOracle::new(DMatrix::from_element(1, 1, 1.0), DVector::zeros(1));
    let policy = GaussianPolicy::isotropic(DVector::from_element(1, mu0), s2, tau).expect("valid");
    let t = run_exact(&oracle, &policy, &PgdConfig { iterations: 50, ..PgdConfig::default() }).expect("exact");
    let r: f64 = tau / (tau + s2);
    let err = t
        .means
        .iter()
        .enumerate()
        .map(|(k, m)| (m[0] - r.powi(k as i32) * mu0).abs())
        .fold(0.0, f64::max);
    rows.push(CheckRow::absolute("conjugate_recursion", 0.0, err, 1e-10));
    rows
}
