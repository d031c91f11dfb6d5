//! Result files. CSVs hold only quantities fixed by `(config, seed)`, so a
//! re-run from the snapshot reproduces them byte for byte; wall-clock
//! figures go to `summary.json`, and to the `ms` column only when
//! `output.timing` is set.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;
use mppi_core::analysis::{render_table, CheckRow};
use serde::Serialize;
use serde_json::json;

use crate::config::RunConfig;
use crate::dubins::DubinsReport;
use crate::lqr::{LqrCell, LqrReport};
use crate::{Failure, TOOL_VERSION};

pub const SNAPSHOT_FILE: &str = "config.snapshot.toml";
pub const SUMMARY_FILE: &str = "summary.json";
pub const ITER_HEADER: [&str; 7] = ["k", "gap", "grad_norm_P", "ess", "acceptance", "best_cost", "ms"];

fn io(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Io(e.into())
}

fn ensure_dir(dir: &Path) -> Result<(), Failure> {
    fs::create_dir_all(dir)
        .with_context(|| format!("creating {}", dir.display()))
        .map_err(io)
}

fn writer(path: &Path) -> Result<csv::Writer<fs::File>, Failure> {
    csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(path)
        .with_context(|| format!("creating {}", path.display()))
        .map_err(io)
}

fn write_rows<I, R>(path: &Path, header: &[&str], rows: I) -> Result<(), Failure>
where
    I: IntoIterator<Item = R>,
    R: IntoIterator<Item = String>,
{
    let mut w = writer(path)?;
    w.write_record(header).map_err(io)?;
    for r in rows {
        w.write_record(r).map_err(io)?;
    }
    w.flush().with_context(|| format!("writing {}", path.display())).map_err(io)
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), Failure> {
    let text = serde_json::to_string_pretty(value).map_err(io)?;
    fs::write(path, text + "\n")
        .with_context(|| format!("writing {}", path.display()))
        .map_err(io)
}

fn series(path: &Path, points: impl IntoIterator<Item = (f64, f64)>) -> Result<(), Failure> {
    write_rows(
        path,
        &["x", "y"],
        points.into_iter().map(|(x, y)| [x.to_string(), y.to_string()]),
    )
}

pub fn write_snapshot(cfg: &RunConfig, dir: &Path) -> Result<PathBuf, Failure> {
    ensure_dir(dir)?;
    let path = dir.join(SNAPSHOT_FILE);
    let text = cfg.to_toml().map_err(Failure::Config)?;
    fs::write(&path, text)
        .with_context(|| format!("writing {}", path.display()))
        .map_err(io)?;
    Ok(path)
}

pub fn lqr_cell_file(cell: &LqrCell) -> String {
    format!("lqr_{}.csv", cell.label())
}

pub fn write_lqr(report: &LqrReport, cfg: &RunConfig, dir: &Path) -> Result<(), Failure> {
    let plots = dir.join("plot");
    ensure_dir(&plots)?;
    for cell in &report.cells {
        write_rows(
            &dir.join(lqr_cell_file(cell)),
            &ITER_HEADER,
            cell.rows.iter().map(|r| {
                [
                    r.k.to_string(),
                    r.gap.to_string(),
                    r.grad_norm_p.to_string(),
                    r.ess.to_string(),
                    r.acceptance.to_string(),
                    r.best_cost.map(|c| c.to_string()).unwrap_or_default(),
                    r.ms.to_string(),
                ]
            }),
        )?;
        let label = cell.label();
        series(
            &plots.join(format!("gap_vs_iteration_{label}.csv")),
            cell.rows.iter().map(|r| (r.k as f64, r.gap)),
        )?;
        series(
            &plots.join(format!("gap_vs_evaluations_{label}.csv")),
            cell.rows.iter().map(|r| (r.evaluations as f64, r.gap)),
        )?;
    }
    write_rows(
        &dir.join("lqr_summary.csv"),
        &[
            "cell", "sigma2", "tau", "eta_rule", "eta", "l_sigma", "seed", "iterations", "final_gap", "infeasible_means",
            "termination",
        ],
        report.cells.iter().map(|c| {
            [
                c.label(),
                c.sigma2.to_string(),
                c.tau.to_string(),
                c.rule.label(),
                c.eta.to_string(),
                c.l_sigma.to_string(),
                c.seed.to_string(),
                c.rows.len().to_string(),
                c.final_gap.to_string(),
                c.infeasible_means.to_string(),
                c.termination.clone(),
            ]
        }),
    )?;
    if let Some(fd) = &report.fd {
        write_rows(
            &dir.join("lqr_fd.csv"),
            &["k", "evaluations", "gap"],
            fd.rows
                .iter()
                .map(|r| [r.k.to_string(), r.evaluations.to_string(), r.gap.to_string()]),
        )?;
        series(
            &plots.join("fd_gap_vs_evaluations.csv"),
            fd.rows.iter().map(|r| (r.evaluations as f64, r.gap)),
        )?;
    }
    let cells: Vec<_> = report
        .cells
        .iter()
        .map(|c| {
            json!({
                "cell": c.label(),
                "file": lqr_cell_file(c),
                "seed": c.seed,
                "sigma2": c.sigma2,
                "tau": c.tau,
                "eta_rule": c.rule.label(),
                "eta": c.eta,
                "l_sigma": c.l_sigma,
                "l_sigma_method": c.l_sigma_method,
                "iterations": c.rows.len(),
                "final_gap": c.final_gap,
                "min_gap": c.rows.iter().map(|r| r.gap).fold(c.final_gap, f64::min),
                "infeasible_means": c.infeasible_means,
                "termination": c.termination,
                "runtime_seconds": c.runtime_seconds,
            })
        })
        .collect();
    let fd = report.fd.as_ref().map(|fd| {
        json!({
            "file": "lqr_fd.csv",
            "perturbation": fd.perturbation,
            "step_size": fd.step_size,
            "iterations": fd.rows.len() - 1,
            "final_gap": fd.rows.last().map(|r| r.gap),
            "runtime_seconds": fd.runtime_seconds,
        })
    });
    write_json(
        &dir.join(SUMMARY_FILE),
        &json!({
            "tool_version": TOOL_VERSION,
            "experiment": "lqr",
            "seeds": cfg.seeds,
            "config": cfg,
            "reference": {
                "f_star": report.reference.f_star,
                "kkt_residual": report.reference.kkt_residual,
                "iterations": report.reference.iterations,
            },
            "cells": cells,
            "finite_difference": fd,
        }),
    )
}

pub fn dubins_run_file(k: usize, seed: u64) -> String {
    format!("dubins_K={k}_seed={seed}.csv")
}

pub fn write_dubins(report: &DubinsReport, cfg: &RunConfig, dir: &Path) -> Result<(), Failure> {
    let plots = dir.join("plot");
    ensure_dir(&plots)?;
    let timing = cfg.output.timing;
    for run in &report.runs {
        let t = &run.trace;
        write_rows(
            &dir.join(dubins_run_file(run.k, run.seed)),
            &[
                "step", "stage_cost", "acceptance", "iterations", "evaluations", "px", "py", "heading", "applied", "ms",
            ],
            t.steps.iter().enumerate().map(|(s, step)| {
                let x = &t.states[s + 1];
                let applied: Vec<String> = step.applied.iter().map(|v| v.to_string()).collect();
                let ms = if timing { step.elapsed.as_secs_f64() * 1e3 } else { 0.0 };
                [
                    s.to_string(),
                    step.stage_cost.to_string(),
                    step.acceptance.to_string(),
                    step.iterations.to_string(),
                    step.evaluations.to_string(),
                    x[0].to_string(),
                    x[1].to_string(),
                    x[2].to_string(),
                    applied.join(";"),
                    ms.to_string(),
                ]
            }),
        )?;
        series(
            &plots.join(format!("path_K={}_seed={}.csv", run.k, run.seed)),
            t.states.iter().map(|x| (x[0], x[1])),
        )?;
    }
    write_rows(
        &dir.join("dubins_summary.csv"),
        &["K", "average_cost", "acceptance", "unsafe_runs", "seeds"],
        report.summary.iter().map(|r| {
            [
                r.k.to_string(),
                r.average_cost.to_string(),
                r.acceptance.to_string(),
                r.unsafe_runs.to_string(),
                r.seeds.to_string(),
            ]
        }),
    )?;
    let obstacles: Vec<_> = cfg.dubins.obstacles.iter().map(|o| json!([o.center, o.radius])).collect();
    let runs: Vec<_> = report
        .runs
        .iter()
        .map(|r| {
            json!({
                "K": r.k,
                "seed": r.seed,
                "file": dubins_run_file(r.k, r.seed),
                "average_cost": r.average_cost,
                "acceptance": r.acceptance,
                "unsafe": r.unsafe_run,
                "aborted": r.aborted,
                "steps": r.trace.steps.len(),
                "runtime_seconds": r.runtime_seconds,
            })
        })
        .collect();
    write_json(
        &dir.join(SUMMARY_FILE),
        &json!({
            "tool_version": TOOL_VERSION,
            "experiment": "dubins",
            "seeds": cfg.seeds,
            "config": cfg,
            "obstacles": obstacles,
            "summary": report.summary,
            "runs": runs,
        }),
    )
}

pub fn write_theory(rows: &[CheckRow], cfg: &RunConfig, dir: &Path) -> Result<(), Failure> {
    ensure_dir(dir)?;
    fs::write(dir.join("theory_report.txt"), render_table(rows))
        .context("writing theory_report.txt")
        .map_err(io)?;
    write_rows(
        &dir.join("theory_checks.csv"),
        &["quantity", "exact", "estimate", "abs_error", "rel_error", "tolerance", "pass"],
        rows.iter().map(|r| {
            [
                r.quantity.clone(),
                r.exact.to_string(),
                r.estimate.to_string(),
                r.abs_error.to_string(),
                r.rel_error.to_string(),
                r.tolerance.to_string(),
                r.pass.to_string(),
            ]
        }),
    )?;
    let failed = rows.iter().filter(|r| !r.pass).count();
    write_json(
        &dir.join(SUMMARY_FILE),
        &json!({
            "tool_version": TOOL_VERSION,
            "experiment": "theory",
            "seeds": cfg.seeds,
            "config": cfg,
            "checks": rows.len(),
            "failed": failed,
            "rows": rows,
        }),
    )
}

