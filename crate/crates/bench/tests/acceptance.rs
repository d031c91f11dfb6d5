//! Acceptance suite. Prints one `AC<n> PASS|FAIL` line per criterion and a
//! final count. Failures do not abort `cargo test` unless
//! `ACCEPTANCE_STRICT=1` is set, in which case any failure exits non-zero.
//! Tolerances, instance counts and runtime limits are fixed here and never
//! adjusted to the outcome.

use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use mppi_bench::config::{EtaRule, Experiment, RunConfig};
use mppi_bench::theory::{descent_check, gradient_check, hessian_check, random_spd, scalar_instance, Uniform};
use mppi_bench::{dubins, execute, lqr};
use mppi_core::analysis::{
    bias_probe, gibbs_identity_check, l_sigma_diameter_bound, l_sigma_numeric, l_sigma_quadratic,
    l_sigma_quadratic_scalar, two_point_variance_max, FnObjective, QuadraticOracle, QuadratureOptions,
    QuadratureOracle, RhoSpec,
};
use mppi_core::linalg::lambda_max;
use mppi_core::optimizer::{run, run_exact, PgdConfig, Termination};
use mppi_core::{GaussianPolicy, QuadraticProblem};
use nalgebra::{DMatrix, DVector};

type Check = anyhow::Result<(bool, String)>;

fn criterion(id: u32, limit: Option<Duration>, body: impl FnOnce() -> Check) -> bool {
    let start = Instant::now();
    let result = body();
    let elapsed = start.elapsed();
    let in_time = limit.is_none_or(|l| elapsed < l);
    let budget = limit.map(|l| format!(" < {}s", l.as_secs())).unwrap_or_default();
    let (pass, detail) = match result {
        Ok((ok, detail)) => (ok && in_time, detail),
        Err(e) => (false, format!("error: {e:#}")),
    };
    let timing = format!("{:.2}s{budget}", elapsed.as_secs_f64());
    let timing = if in_time { timing } else { format!("{timing} EXCEEDED") };
    println!("AC{id} {} [{timing}] {detail}", if pass { "PASS" } else { "FAIL" });
    pass
}

fn secs(s: u64) -> Option<Duration> {
    Some(Duration::from_secs(s))
}

/// Instances whose gradient is too small for a relative comparison are
/// skipped and replaced, so every family has its full count.
fn scalar_instances(count: usize, seed: u64) -> Vec<mppi_bench::theory::ScalarInstance> {
    let mut rng = Uniform::new(seed);
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let inst = scalar_instance(&mut rng);
        if gradient_check(&inst, false).0.abs() >= 1e-3 {
            out.push(inst);
        }
    }
    out
}

fn ac1() -> Check {
    let mut worst: f64 = 0.0;
    for inst in scalar_instances(20, 101) {
        let (exact, fd) = gradient_check(&inst, false);
        worst = worst.max((exact - fd).abs() / exact.abs());
    }
    Ok((worst <= 1e-5, format!("20 instances, max rel err {worst:.3e} (tol 1e-5)")))
}

fn ac2() -> Check {
    let (mut worst_fd, mut worst_routes): (f64, f64) = (0.0, 0.0);
    for inst in scalar_instances(20, 202) {
        let (via_hessian, direct, fd) = hessian_check(&inst);
        worst_fd = worst_fd.max((via_hessian - fd).abs() / via_hessian.abs());
        worst_routes = worst_routes.max((via_hessian - direct).abs());
    }
    Ok((
        worst_fd <= 1e-4 && worst_routes <= 1e-12,
        format!("20 instances, max rel err vs second differences {worst_fd:.3e} (tol 1e-4), routes {worst_routes:.3e} (tol 1e-12)"),
    ))
}

/// `E_π[exp(−a u²/2)]` for `π = N(μ, σ²)`, and the mean and variance of the
/// tilted law.
fn gaussian_tilt(mu: f64, s2: f64, a: f64) -> (f64, f64, f64) {
    let d = 1.0 + a * s2;
    ((-a * mu * mu / (2.0 * d)).exp() / d.sqrt(), mu / d, s2 / d)
}

fn ac3() -> Check {
    let (mu0, s2, tau) = (2.0, 0.5, 1.5);
    let ratio: f64 = tau / (tau + s2);
    let oracle = QuadraticOracle::new(DMatrix::from_element(1, 1, 1.0), DVector::zeros(1));
    let policy = GaussianPolicy::isotropic(DVector::from_element(1, mu0), s2, tau)?;
    let exact = run_exact(&oracle, &policy, &PgdConfig { iterations: 50, ..PgdConfig::default() })?;
    let exact_err = exact
        .means
        .iter()
        .enumerate()
        .map(|(k, m)| (m[0] - ratio.powi(k as i32) * mu0).abs())
        .fold(0.0, f64::max);

    // Per step, the self-normalised estimate of the tilted mean has
    // asymptotic variance E_π[w²(u − m)²] / (N E_π[w]²).
    let problem = QuadraticProblem::unconstrained(DMatrix::from_element(1, 1, 1.0), DVector::zeros(1))?;
    let n = 10_000;
    let cfg = PgdConfig {
        iterations: 20,
        samples: n,
        antithetic: false,
        ..PgdConfig::default()
    };
    let (mut worst_z, mut outside): (f64, usize) = (0.0, 0);
    for seed in 0..10 {
        let out = run(&problem, &policy, &cfg, seed)?;
        if !matches!(out.termination, Termination::Completed) {
            anyhow::bail!("seed {seed} did not complete");
        }
        let mut means: Vec<f64> = out.trace.iter().map(|r| r.mean[0]).collect();
        means.push(out.policy.mean()[0]);
        for w in means.windows(2) {
            let (z1, m, _) = gaussian_tilt(w[0], s2, 1.0 / tau);
            let (z2, m2, v2) = gaussian_tilt(w[0], s2, 2.0 / tau);
            let se = (z2 * (v2 + (m2 - m) * (m2 - m)) / (n as f64 * z1 * z1)).sqrt();
            let z = (w[1] - ratio * w[0]).abs() / se;
            worst_z = worst_z.max(z);
            if z > 3.0 {
                outside += 1;
            }
        }
    }
    Ok((
        exact_err <= 1e-10 && outside == 0,
        format!(
            "exact max err {exact_err:.3e} (tol 1e-10); sampled N=1e4, 10 seeds x 20 steps: {outside} step(s) beyond 3 SE, max |z| {worst_z:.2}"
        ),
    ))
}

fn ac4() -> Check {
    let mut rng = Uniform::new(404);
    let (mut worst_slack, mut worst_ratio) = (f64::INFINITY, 0.0_f64);
    for _ in 0..10 {
        let dim = 3;
        let q = random_spd(&mut rng, dim, 2.0);
        let c = DVector::from_fn(dim, |_, _| rng.next(-2.0, 2.0));
        let sigma2 = rng.next(0.05, 2.0);
        let tau = rng.next(0.1, 5.0);
        let policy = GaussianPolicy::isotropic(DVector::from_fn(dim, |_, _| rng.next(-3.0, 3.0)), sigma2, tau)?;
        let l = l_sigma_quadratic(&(DMatrix::identity(dim, dim) * sigma2), &q, tau)?.l_sigma;
        for factor in [0.5, 1.0, 1.9] {
            let (slack, ratio) = descent_check(&q, &c, &policy, factor / l, l, 200);
            worst_slack = worst_slack.min(slack);
            worst_ratio = worst_ratio.max(ratio);
        }
    }
    let positive = worst_slack >= -1e-9 && worst_ratio <= 1.0;

    // Double well on [−3, 3]: non-convex, so L_Σ can exceed 1.
    let well = FnObjective::new(DVector::from_element(1, -3.0), DVector::from_element(1, 3.0), |u: &[f64]| {
        (u[0] * u[0] - 1.6 * 1.6).powi(2)
    })?;
    let opts = QuadratureOptions::with_tol(1e-10);
    let grid: Vec<f64> = (0..=60).map(|i| -3.0 + 0.1 * i as f64).collect();
    let l = l_sigma_numeric(&well, 1.0, 1.0, &grid, &opts)?.l_sigma;
    let policy = GaussianPolicy::isotropic(DVector::from_element(1, 0.3), 1.0, 1.0)?;
    let cfg = PgdConfig {
        step_size: 4.0 / l,
        iterations: 30,
        ..PgdConfig::default()
    };
    let trace = run_exact(&QuadratureOracle::new(&well, opts), &policy, &cfg)?;
    let increases = trace.free_energy.windows(2).filter(|w| w[1] > w[0]).count();
    let negative = l >= 1.0 && increases > 0;
    Ok((
        positive && negative,
        format!(
            "30 runs x 200 steps: min descent slack {worst_slack:.3e} (tol -1e-9), max min-grad/bound ratio {worst_ratio:.3}; \
             double well L={l:.4}, eta=4/L: F increased on {increases} of 30 steps"
        ),
    ))
}

/// `max (a − b)ᵀ Σ⁻¹ (a − b)` over all corner pairs of the box.
fn corner_d2(sigma_inv: &DMatrix<f64>, lower: &DVector<f64>, upper: &DVector<f64>) -> f64 {
    let n = lower.len();
    let corner = |mask: usize| DVector::from_fn(n, |i, _| if mask >> i & 1 == 1 { upper[i] } else { lower[i] });
    let mut best: f64 = 0.0;
    for a in 0..1usize << n {
        for b in 0..1usize << n {
            let d = corner(a) - corner(b);
            best = best.max((d.transpose() * sigma_inv * &d)[(0, 0)]);
        }
    }
    best
}

fn ac5() -> Check {
    let mut worst_tp: f64 = 0.0;
    for d in [0.5_f64, 1.0, 2.0, 3.7] {
        let tp = two_point_variance_max(d, 200)?;
        worst_tp = worst_tp.max((tp.variance - d * d / 4.0).abs());
    }
    let mut rng = Uniform::new(505);
    let (mut bound_ok, mut flag_ok, mut fired) = (true, true, 0);
    let (mut d2_lo, mut d2_hi) = (f64::INFINITY, 0.0_f64);
    for i in 0..50 {
        let n = 1 + i % 3;
        let lower = DVector::from_fn(n, |_, _| rng.next(-2.0, 0.0));
        let upper = DVector::from_fn(n, |r, _| lower[r] + rng.next(0.3, 3.0));
        let variances = DVector::from_fn(n, |_, _| rng.next(0.3, 3.0));
        let sigma = DMatrix::from_diagonal(&variances);
        let q = random_spd(&mut rng, n, 2.0);
        let tau = rng.next(0.1, 5.0);
        let bound = l_sigma_diameter_bound(&sigma, &lower, &upper)?;
        let closed = l_sigma_quadratic(&sigma, &q, tau)?.l_sigma;
        let brute = corner_d2(&DMatrix::from_diagonal(&variances.map(|v| 1.0 / v)), &lower, &upper);
        bound_ok &= closed <= bound.estimate.l_sigma;
        flag_ok &= bound.unit_step_admissible == (brute < 12.0) && (bound.d2 - brute).abs() <= 1e-9 * brute;
        fired += usize::from(bound.unit_step_admissible);
        d2_lo = d2_lo.min(brute);
        d2_hi = d2_hi.max(brute);
    }
    Ok((
        worst_tp <= 1e-8 && bound_ok && flag_ok,
        format!(
            "two-point max err {worst_tp:.3e} (tol 1e-8); 50 instances, D2 in [{d2_lo:.2}, {d2_hi:.2}]: bound holds={bound_ok}, \
             flag matches D2<12={flag_ok} ({fired} fired)"
        ),
    ))
}

fn ac6() -> Check {
    let mut rng = Uniform::new(606);
    let mut worst: f64 = 0.0;
    for i in 0..100 {
        let n = 1 + i % 6;
        let scale = rng.next(0.1, 10.0);
        let q = random_spd(&mut rng, n, scale);
        let sigma2 = rng.next(1e-3, 3.0);
        let tau = rng.next(0.05, 10.0);
        let general = l_sigma_quadratic(&(DMatrix::identity(n, n) * sigma2), &q, tau)?.l_sigma;
        let scalar = l_sigma_quadratic_scalar(sigma2, lambda_max(&q), tau);
        worst = worst.max((general - scalar).abs());
    }
    Ok((worst <= 1e-12, format!("100 instances, max |scalar - eigen route| {worst:.3e} (tol 1e-12)")))
}

fn ac7() -> Check {
    let mut worst: f64 = 0.0;
    let mut rng = Uniform::new(707);
    for inst in scalar_instances(5, 707) {
        let rhos = [
            RhoSpec::Tilt,
            RhoSpec::RestrictedBase,
            RhoSpec::ShiftedGaussian {
                mean: rng.next(-1.0, 1.0),
                std: rng.next(0.3, 1.5),
            },
        ];
        for rho in rhos {
            let r = gibbs_identity_check(&inst.problem, &inst.policy, rho, &QuadratureOptions::with_tol(1e-10))?;
            worst = worst.max(r.residual.abs());
        }
    }
    Ok((worst <= 1e-6, format!("5 problems x 3 rho, max residual {worst:.3e} (tol 1e-6)")))
}

const GAP_THRESHOLD: f64 = 1.0;

fn ac8() -> Check {
    let cfg = RunConfig::default();
    let report = lqr::run_lqr(&cfg).map_err(|e| anyhow::anyhow!("{e}"))?;
    let unit: Vec<&lqr::LqrCell> = report.cells.iter().filter(|c| c.rule == EtaRule::Unit).collect();
    let inv: Vec<&lqr::LqrCell> = report.cells.iter().filter(|c| c.rule == EtaRule::InverseL).collect();
    let budget = cfg.lqr.iterations;

    let mut monotone = true;
    for c in &unit {
        let windows: Vec<f64> = c.rows.chunks(50).map(|w| w.iter().map(|r| r.gap).sum::<f64>() / w.len() as f64).collect();
        monotone &= windows.windows(2).all(|w| w[1] <= w[0]);
    }

    let mut faster = true;
    let mut hits = Vec::new();
    for u in &unit {
        let i = inv.iter().find(|c| c.seed == u.seed).ok_or_else(|| anyhow::anyhow!("missing 1/L cell"))?;
        let small_l = i.l_sigma <= 0.2;
        let ku = u.iterations_to(GAP_THRESHOLD).unwrap_or(budget + 1);
        let ki = i.iterations_to(GAP_THRESHOLD).unwrap_or(budget + 1);
        faster &= small_l && ki < ku;
        hits.push(format!("seed {}: {ki} vs {ku}", u.seed));
    }

    let fd = report.fd.as_ref().ok_or_else(|| anyhow::anyhow!("finite-difference baseline disabled"))?;
    let fd_last = fd.rows.last().ok_or_else(|| anyhow::anyhow!("empty baseline"))?;
    let mut beats = true;
    let mut worst_mppi = f64::NEG_INFINITY;
    for c in &report.cells {
        let g = c.gap_at_budget(fd_last.evaluations).unwrap_or(f64::INFINITY);
        worst_mppi = worst_mppi.max(g);
        beats &= g < fd_last.gap;
    }
    let min_gap = report.cells.iter().flat_map(|c| c.rows.iter().map(|r| r.gap)).fold(f64::INFINITY, f64::min);
    Ok((
        monotone && faster && beats,
        format!(
            "(a) eta=1 50-iteration window means monotone={monotone}; (b) L={:.4}, iterations to gap<={GAP_THRESHOLD} 1/L vs 1: {}; \
             (c) at {} evaluations worst MPPI gap {worst_mppi:.3} vs FD {:.3}; min reported gap {min_gap:.3e}",
            inv.first().map(|c| c.l_sigma).unwrap_or(f64::NAN),
            hits.join(", "),
            fd_last.evaluations,
            fd_last.gap
        ),
    ))
}

fn ac9() -> Check {
    let mut cfg = RunConfig {
        experiment: Experiment::Dubins,
        ..RunConfig::default()
    };
    cfg.dubins.k = vec![1, 10];
    let report = dubins::run_dubins(&cfg).map_err(|e| anyhow::anyhow!("{e}"))?;
    let (k1, k10) = (
        report.row(1).ok_or_else(|| anyhow::anyhow!("missing K=1"))?,
        report.row(10).ok_or_else(|| anyhow::anyhow!("missing K=10"))?,
    );
    let cost = k10.average_cost < k1.average_cost;
    let acceptance = k10.acceptance >= k1.acceptance;
    Ok((
        cost && acceptance,
        format!(
            "seeds {:?}: cost K=10 {:.3} vs K=1 {:.3} (lower={cost}); acceptance K=10 {:.4} vs K=1 {:.4} (not lower={acceptance})",
            cfg.seeds, k10.average_cost, k1.average_cost, k10.acceptance, k1.acceptance
        ),
    ))
}

fn ac10() -> Check {
    let (mu, s2, q, tau) = (3.0, 1.0, 1.0, 0.5);
    let problem = QuadraticProblem::unconstrained(DMatrix::from_element(1, 1, q), DVector::zeros(1))?;
    let policy = GaussianPolicy::isotropic(DVector::from_element(1, mu), s2, tau)?;
    let exact = QuadraticOracle::new(DMatrix::from_element(1, 1, q), DVector::zeros(1)).gradient(&policy)?;
    let rows = bias_probe(&problem, &policy, &exact, &[100, 10_000], 2000, 10)?;
    let (small, large) = (&rows[0], &rows[1]);
    Ok((
        large.ci_high < small.ci_low,
        format!(
            "2000 trials: N=100 bias {:.4} [{:.4}, {:.4}], N=1e4 bias {:.4} [{:.4}, {:.4}]",
            small.bias_norm, small.ci_low, small.ci_high, large.bias_norm, large.ci_low, large.ci_high
        ),
    ))
}

fn csv_files(root: &Path, dir: &Path, out: &mut Vec<std::path::PathBuf>) -> anyhow::Result<()> {
    for entry in std::fs::read_dir(dir)? {
        let path = entry?.path();
        if path.is_dir() {
            csv_files(root, &path, out)?;
        } else if path.extension().is_some_and(|e| e == "csv") {
            out.push(path.strip_prefix(root)?.to_path_buf());
        }
    }
    out.sort();
    Ok(())
}

fn csv_set(root: &Path) -> anyhow::Result<Vec<std::path::PathBuf>> {
    let mut out = Vec::new();
    csv_files(root, root, &mut out)?;
    Ok(out)
}

fn ac11() -> Check {
    let tmp = tempfile::tempdir()?;
    let mut compared = 0;
    for experiment in [Experiment::Lqr, Experiment::Dubins, Experiment::Theory] {
        let mut cfg = RunConfig {
            experiment,
            ..RunConfig::default()
        };
        cfg.lqr.iterations = 200;
        cfg.lqr.fd.iterations = 200;
        cfg.dubins.sim_steps = 10;
        let first = tmp.path().join(format!("{experiment:?}-first"));
        let second = tmp.path().join(format!("{experiment:?}-second"));
        execute(&cfg, &first).map_err(|e| anyhow::anyhow!("{e}"))?;
        let snapshot = RunConfig::load(&first.join(mppi_bench::emit::SNAPSHOT_FILE))?;
        execute(&snapshot, &second).map_err(|e| anyhow::anyhow!("{e}"))?;
        let files = csv_set(&first)?;
        if files != csv_set(&second)? || files.is_empty() {
            return Ok((false, format!("{experiment:?}: different CSV file sets")));
        }
        for f in files {
            if std::fs::read(first.join(&f))? != std::fs::read(second.join(&f))? {
                return Ok((false, format!("{experiment:?}: {} differs", f.display())));
            }
            compared += 1;
        }
    }
    Ok((true, format!("{compared} CSV files byte-identical across lqr, dubins and theory re-runs")))
}

fn main() -> ExitCode {
    let results = [
        criterion(1, secs(10), ac1),
        criterion(2, secs(10), ac2),
        criterion(3, secs(30), ac3),
        criterion(4, secs(60), ac4),
        criterion(5, secs(30), ac5),
        criterion(6, secs(5), ac6),
        criterion(7, secs(20), ac7),
        criterion(8, secs(600), ac8),
        criterion(9, secs(900), ac9),
        criterion(10, secs(120), ac10),
        criterion(11, None, ac11),
    ];
    let failed = results.iter().filter(|p| !**p).count();
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    let strict = std::env::var("ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");
    if failed == 0 || !strict {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
