//! Dubins car reach task: receding-horizon MPPI for each inner iteration
//! count `K` and seed.

use std::time::Instant;

use anyhow::anyhow;
use mppi_core::optimizer::{receding_horizon, ClosedLoopTrace, PgdConfig};
use mppi_core::{Circle, DubinsProblem, DubinsSpec, GaussianPolicy};
use nalgebra::DVector;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{DubinsConfig, RunConfig};
use crate::Failure;

#[derive(Debug, Clone, Serialize)]
pub struct DubinsRun {
    pub k: usize,
    pub seed: u64,
    pub trace: ClosedLoopTrace<f64>,
    /// Mean realised stage cost.
    pub average_cost: f64,
    pub acceptance: f64,
    pub unsafe_run: bool,
    pub aborted: Option<String>,
    pub runtime_seconds: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct DubinsSummaryRow {
    pub k: usize,
    pub average_cost: f64,
    pub acceptance: f64,
    pub runtime_seconds: f64,
    pub unsafe_runs: usize,
    pub seeds: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct DubinsReport {
    pub runs: Vec<DubinsRun>,
    pub summary: Vec<DubinsSummaryRow>,
}

impl DubinsReport {
    pub fn row(&self, k: usize) -> Option<&DubinsSummaryRow> {
        self.summary.iter().find(|r| r.k == k)
    }
}

pub fn build_spec(cfg: &DubinsConfig) -> DubinsSpec<f64> {
    DubinsSpec {
        speed: cfg.speed,
        dt: cfg.dt,
        horizon: cfg.horizon,
        x0: cfg.x0,
        target: cfg.target,
        q_diag: cfg.q_diag,
        r: cfg.r,
        max_turn_rate: cfg.max_turn_rate,
        obstacles: cfg
            .obstacles
            .iter()
            .map(|o| Circle {
                center: o.center,
                radius: o.radius,
            })
            .collect(),
    }
}

fn run_one(problem: &DubinsProblem<f64>, cfg: &DubinsConfig, k: usize, seed: u64) -> Result<DubinsRun, Failure> {
    let pgd = PgdConfig {
        step_size: cfg.step_size,
        iterations: k,
        samples: cfg.samples,
        antithetic: cfg.antithetic,
        max_retries: cfg.max_retries,
        inflation: cfg.inflation,
        ..PgdConfig::default()
    };
    let policy = GaussianPolicy::isotropic(DVector::from_element(cfg.horizon, cfg.initial_mean), cfg.sigma2, cfg.tau)
        .map_err(|e| Failure::Config(anyhow!(e)))?;
    let start = Instant::now();
    let trace = receding_horizon(problem, &policy, &pgd, cfg.sim_steps, seed).map_err(|e| Failure::Config(anyhow!(e)))?;
    Ok(DubinsRun {
        k,
        seed,
        average_cost: trace.average_cost(),
        acceptance: trace.average_acceptance(),
        unsafe_run: trace.unsafe_run,
        aborted: trace.aborted.as_ref().map(|e| e.to_string()),
        runtime_seconds: start.elapsed().as_secs_f64(),
        trace,
    })
}

pub fn run_dubins(cfg: &RunConfig) -> Result<DubinsReport, Failure> {
    let dc = &cfg.dubins;
    let problem = DubinsProblem::new(build_spec(dc)).map_err(|e| Failure::Config(anyhow!(e)))?;
    let jobs: Vec<(usize, u64)> = dc
        .k
        .iter()
        .flat_map(|&k| cfg.seeds.iter().map(move |&s| (k, s)))
        .collect();
    let runs = jobs
        .par_iter()
        .map(|&(k, s)| run_one(&problem, dc, k, s))
        .collect::<Result<Vec<_>, _>>()?;
    let summary = dc
        .k
        .iter()
        .map(|&k| {
            let group: Vec<&DubinsRun> = runs.iter().filter(|r| r.k == k).collect();
            let n = group.len() as f64;
            DubinsSummaryRow {
                k,
                average_cost: group.iter().map(|r| r.average_cost).sum::<f64>() / n,
                acceptance: group.iter().map(|r| r.acceptance).sum::<f64>() / n,
                runtime_seconds: group.iter().map(|r| r.runtime_seconds).sum::<f64>() / n,
                unsafe_runs: group.iter().filter(|r| r.unsafe_run).count(),
                seeds: group.len(),
            }
        })
        .collect();
    Ok(DubinsReport { runs, summary })
}
