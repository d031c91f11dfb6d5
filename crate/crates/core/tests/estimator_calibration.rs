//! The per-step spread of the sampled update around the exact recursion
//! matches the asymptotic standard error of the self-normalised estimator.

use mppi_core::optimizer::{run, PgdConfig};
use mppi_core::{GaussianPolicy, QuadraticProblem};
use nalgebra::{DMatrix, DVector};

/// `E_π[exp(−a u²/2)]` for `π = N(μ, σ²)`, with the tilted mean and variance.
fn gaussian_tilt(mu: f64, s2: f64, a: f64) -> (f64, f64, f64) {
    let d = 1.0 + a * s2;
    ((-a * mu * mu / (2.0 * d)).exp() / d.sqrt(), mu / d, s2 / d)
}

#[test]
fn standardized_step_errors_have_unit_variance() {
    let (mu0, s2, tau) = (2.0, 0.5, 1.5);
    let ratio = tau / (tau + s2);
    let policy = GaussianPolicy::isotropic(DVector::from_element(1, mu0), s2, tau).unwrap();
    let problem = QuadraticProblem::unconstrained(DMatrix::from_element(1, 1, 1.0), DVector::zeros(1)).unwrap();
    let n = 2_000;
    let cfg = PgdConfig {
        iterations: 20,
        samples: n,
        antithetic: false,
        ..PgdConfig::default()
    };
    let mut zs = Vec::new();
    for seed in 0..100 {
        let out = run(&problem, &policy, &cfg, seed).unwrap();
        let mut means: Vec<f64> = out.trace.iter().map(|r| r.mean[0]).collect();
        means.push(out.policy.mean()[0]);
        for w in means.windows(2) {
            let (z1, m, _) = gaussian_tilt(w[0], s2, 1.0 / tau);
            let (z2, m2, v2) = gaussian_tilt(w[0], s2, 2.0 / tau);
            let se = (z2 * (v2 + (m2 - m) * (m2 - m)) / (n as f64 * z1 * z1)).sqrt();
            zs.push((w[1] - ratio * w[0]) / se);
        }
    }
    let k = zs.len() as f64;
    let mean = zs.iter().sum::<f64>() / k;
    let var = zs.iter().map(|z| (z - mean).powi(2)).sum::<f64>() / k;
    // 2000 draws: the sample variance has standard error about 0.03.
    assert!(mean.abs() < 0.1, "mean {mean}");
    assert!((var - 1.0).abs() < 0.15, "variance {var}");
}
