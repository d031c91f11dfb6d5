//! Constrained LQR ablation: multi-step MPPI over a grid of `σ²`, `τ` and
//! step-size rules, scored against the certified QP optimum, plus the
//! projected finite-difference baseline.

use std::time::Instant;

use anyhow::{anyhow, Context};
use mppi_core::analysis::{fd_baseline, l_sigma_quadratic, sequence_objective, FdOptions};
use mppi_core::optimizer::{run, PgdConfig, Termination};
use mppi_core::qp::{certified_optimum, lift, project, LqrLift};
use mppi_core::{ControlSequence, GaussianPolicy, LqrProblem, LqrSpec, TrajectoryProblem};
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{EtaRule, LqrConfig, RunConfig};
use crate::Failure;

/// One row of a cell's per-iteration trace.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IterRow {
    pub k: usize,
    /// Objective evaluations spent producing `μ_k`.
    pub evaluations: usize,
    /// `J(μ_k) − f*`.
    pub gap: f64,
    pub mean_feasible: bool,
    pub grad_norm_p: f64,
    pub ess: f64,
    pub acceptance: f64,
    pub best_cost: Option<f64>,
    pub ms: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct LqrCell {
    pub sigma2: f64,
    pub tau: f64,
    pub rule: EtaRule,
    pub eta: f64,
    pub l_sigma: f64,
    pub l_sigma_method: &'static str,
    pub seed: u64,
    pub rows: Vec<IterRow>,
    /// `J(μ_K) − f*` for the mean after the last update.
    pub final_gap: f64,
    pub termination: String,
    pub infeasible_means: usize,
    pub runtime_seconds: f64,
}

impl LqrCell {
    pub fn label(&self) -> String {
        format!(
            "sigma2={}_tau={}_eta={}_seed={}",
            self.sigma2, self.tau, self.rule, self.seed
        )
    }

    /// First iteration whose gap is at or below `threshold`.
    pub fn iterations_to(&self, threshold: f64) -> Option<usize> {
        self.rows.iter().find(|r| r.gap <= threshold).map(|r| r.k)
    }

    /// Gap of the last mean reached within `evaluations` evaluations.
    pub fn gap_at_budget(&self, evaluations: usize) -> Option<f64> {
        self.rows
            .iter()
            .take_while(|r| r.evaluations <= evaluations)
            .last()
            .map(|r| r.gap)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct FdRow {
    pub k: usize,
    /// Objective evaluations spent producing `u_k`.
    pub evaluations: usize,
    pub gap: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct FdResult {
    pub perturbation: f64,
    pub step_size: f64,
    pub rows: Vec<FdRow>,
    pub runtime_seconds: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct QpReference {
    /// Optimal trajectory cost, including the lift constant.
    pub f_star: f64,
    pub kkt_residual: f64,
    pub iterations: usize,
    pub u_star: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct LqrReport {
    pub reference: QpReference,
    pub cells: Vec<LqrCell>,
    pub fd: Option<FdResult>,
}

fn matrix(rows: &[Vec<f64>], what: &str) -> anyhow::Result<DMatrix<f64>> {
    let r = rows.len();
    let c = rows.first().map(|x| x.len()).unwrap_or(0);
    if r == 0 || c == 0 || rows.iter().any(|x| x.len() != c) {
        return Err(anyhow!("matrix `{what}` must be a non-empty rectangular list of rows"));
    }
    Ok(DMatrix::from_fn(r, c, |i, j| rows[i][j]))
}

pub fn build_spec(cfg: &LqrConfig) -> anyhow::Result<LqrSpec<f64>> {
    let spec = LqrSpec {
        a: matrix(&cfg.a, "a")?,
        b: matrix(&cfg.b, "b")?,
        q: matrix(&cfg.q, "q")?,
        r: matrix(&cfg.r, "r")?,
        horizon: cfg.horizon,
        x0: DVector::from_column_slice(&cfg.x0),
        u_min: DVector::from_column_slice(&cfg.u_min),
        u_max: DVector::from_column_slice(&cfg.u_max),
        x_min: DVector::from_column_slice(&cfg.x_min),
        x_max: DVector::from_column_slice(&cfg.x_max),
    };
    spec.validate().context("invalid lqr problem")?;
    Ok(spec)
}

pub fn reference(lifted: &LqrLift<f64>, tol: f64) -> Result<QpReference, Failure> {
    let sol = certified_optimum(&lifted.qp, tol).map_err(|e| Failure::Oracle(anyhow!(e)))?;
    Ok(QpReference {
        f_star: sol.f_star + lifted.qp.constant,
        kkt_residual: sol.kkt_residual,
        iterations: sol.iterations,
        u_star: sol.u_star.as_slice().to_vec(),
    })
}

struct CellSpec {
    sigma2: f64,
    tau: f64,
    rule: EtaRule,
    seed: u64,
}

fn run_cell(
    problem: &LqrProblem<f64>,
    lifted: &LqrLift<f64>,
    cfg: &LqrConfig,
    f_star: f64,
    cell: &CellSpec,
    timing: bool,
) -> Result<LqrCell, Failure> {
    let n = problem.sequence_len();
    let sigma = DMatrix::identity(n, n) * cell.sigma2;
    let l = l_sigma_quadratic(&sigma, &lifted.qp.q, cell.tau).map_err(|e| Failure::Oracle(anyhow!(e)))?;
    let eta = match cell.rule {
        EtaRule::Unit => 1.0,
        EtaRule::InverseL => mppi_core::optimizer::step_size_rule(l.l_sigma).map_err(|e| Failure::Oracle(anyhow!(e)))?,
        EtaRule::Fixed(v) => v,
    };
    let pgd = PgdConfig {
        step_size: eta,
        iterations: cfg.iterations,
        samples: cfg.samples,
        antithetic: cfg.antithetic,
        stationarity_tol: cfg.stationarity_tol,
        max_retries: cfg.max_retries,
        inflation: cfg.inflation,
        ..PgdConfig::default()
    };
    let policy = GaussianPolicy::isotropic(DVector::zeros(n), cell.sigma2, cell.tau)
        .map_err(|e| Failure::Config(anyhow!(e)))?;
    let start = Instant::now();
    let outcome = run(problem, &policy, &pgd, cell.seed).map_err(|e| Failure::Config(anyhow!(e)))?;
    let runtime_seconds = start.elapsed().as_secs_f64();
    let mut spent = 0;
    let mut infeasible_means = 0;
    let rows = outcome
        .trace
        .iter()
        .map(|r| {
            let before = spent;
            spent += r.evaluations;
            let u = ControlSequence::new(r.mean.clone());
            let eval = problem.evaluate(&u).expect("trace means have the sequence length");
            if !eval.feasible {
                infeasible_means += 1;
            }
            IterRow {
                k: r.k,
                evaluations: before,
                gap: eval.cost - f_star,
                mean_feasible: eval.feasible,
                grad_norm_p: r.grad_norm_p,
                ess: r.ess,
                acceptance: r.acceptance,
                best_cost: r.best_cost,
                ms: if timing { r.elapsed.as_secs_f64() * 1e3 } else { 0.0 },
            }
        })
        .collect();
    let final_gap = problem
        .objective(&ControlSequence::new(outcome.policy.mean().clone()))
        .expect("policy mean has the sequence length")
        - f_star;
    let termination = match &outcome.termination {
        Termination::Completed => "completed".to_string(),
        Termination::Converged => "converged".to_string(),
        Termination::Aborted(e) => format!("aborted: {e}"),
    };
    Ok(LqrCell {
        sigma2: cell.sigma2,
        tau: cell.tau,
        rule: cell.rule,
        eta,
        l_sigma: l.l_sigma,
        l_sigma_method: "closed_form_quadratic",
        seed: cell.seed,
        rows,
        final_gap,
        termination,
        infeasible_means,
        runtime_seconds,
    })
}

pub fn run_fd(problem: &LqrProblem<f64>, lifted: &LqrLift<f64>, cfg: &LqrConfig, f_star: f64) -> Result<FdResult, Failure> {
    let start = Instant::now();
    let opts = FdOptions {
        perturbation: cfg.fd.perturbation,
        step_size: cfg.fd.step_size,
        iterations: cfg.fd.iterations,
    };
    let tol = cfg.reference_tol;
    let trace = fd_baseline(
        sequence_objective(problem),
        |v| project(&lifted.qp, v, tol),
        &DVector::zeros(problem.sequence_len()),
        &opts,
    )
    .map_err(|e| Failure::Oracle(anyhow!(e).context("finite-difference baseline")))?;
    let rows = trace
        .costs
        .iter()
        .zip(trace.evaluations.iter())
        .enumerate()
        .map(|(k, (c, e))| FdRow {
            k,
            evaluations: *e - 1,
            gap: c - f_star,
        })
        .collect();
    Ok(FdResult {
        perturbation: opts.perturbation,
        step_size: opts.step_size,
        rows,
        runtime_seconds: start.elapsed().as_secs_f64(),
    })
}

/// Runs every `(σ², τ, η-rule, seed)` cell concurrently, then the FD
/// baseline if enabled.
pub fn run_lqr(cfg: &RunConfig) -> Result<LqrReport, Failure> {
    let lc = &cfg.lqr;
    let spec = build_spec(lc).map_err(Failure::Config)?;
    let lifted = lift(&spec).map_err(|e| Failure::Config(anyhow!(e)))?;
    let problem = LqrProblem::new(spec).map_err(|e| Failure::Config(anyhow!(e)))?;
    let reference = reference(&lifted, lc.reference_tol)?;
    let mut cells = Vec::new();
    for &sigma2 in &lc.sigma2 {
        for &tau in &lc.tau {
            for &rule in &lc.eta_rules {
                for &seed in &cfg.seeds {
                    cells.push(CellSpec { sigma2, tau, rule, seed });
                }
            }
        }
    }
    let timing = cfg.output.timing;
    let cells = cells
        .par_iter()
        .map(|c| run_cell(&problem, &lifted, lc, reference.f_star, c, timing))
        .collect::<Result<Vec<_>, _>>()?;
    let fd = if lc.fd.enabled {
        Some(run_fd(&problem, &lifted, lc, reference.f_star)?)
    } else {
        None
    };
    Ok(LqrReport { reference, cells, fd })
}
