//! Experiment harness: the constrained LQR ablation, the Dubins
//! receding-horizon comparison and the theory check battery, with
//! versioned configs and deterministic CSV/JSON emission.

pub mod config;
pub mod dubins;
pub mod emit;
pub mod lqr;
pub mod theory;

use std::path::{Path, PathBuf};

use mppi_core::analysis::CheckRow;

use crate::config::{Experiment, RunConfig};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Why a run stopped, mapped onto process exit codes.
#[derive(Debug, thiserror::Error)]
pub enum Failure {
    #[error("config error: {0:#}")]
    Config(anyhow::Error),
    #[error("reference solver failure: {0:#}")]
    Oracle(anyhow::Error),
    #[error("{} theory check(s) failed", .0.iter().filter(|r| !r.pass).count())]
    Theory(Vec<CheckRow>),
    #[error("output error: {0:#}")]
    Io(anyhow::Error),
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Config(_) | Failure::Io(_) => 1,
            Failure::Oracle(_) => 2,
            Failure::Theory(_) => 3,
        }
    }
}

/// What a completed run produced.
#[derive(Debug)]
pub enum Outcome {
    Lqr(lqr::LqrReport),
    Dubins(dubins::DubinsReport),
    Theory(Vec<CheckRow>),
}

/// Output directory: `out` if given, else the one named in the config.
pub fn resolve_out_dir(cfg: &RunConfig, out: Option<&Path>) -> PathBuf {
    out.map(Path::to_path_buf).unwrap_or_else(|| cfg.output.dir.clone())
}

/// Validates `cfg`, snapshots it into `out_dir`, runs the experiment and
/// writes every output file. Theory failures are written before the error
/// is returned.
pub fn execute(cfg: &RunConfig, out_dir: &Path) -> Result<Outcome, Failure> {
    cfg.validate().map_err(Failure::Config)?;
    let mut resolved = cfg.clone();
    resolved.output.dir = out_dir.to_path_buf();
    let cfg = &resolved;
    emit::write_snapshot(cfg, out_dir)?;
    match cfg.experiment {
        Experiment::Lqr => {
            let report = lqr::run_lqr(cfg)?;
            emit::write_lqr(&report, cfg, out_dir)?;
            Ok(Outcome::Lqr(report))
        }
        Experiment::Dubins => {
            let report = dubins::run_dubins(cfg)?;
            emit::write_dubins(&report, cfg, out_dir)?;
            Ok(Outcome::Dubins(report))
        }
        Experiment::Theory => {
            let seed = cfg.seeds.first().copied().unwrap_or(0);
            let rows = theory::run_theory_suite(&cfg.theory, seed);
            emit::write_theory(&rows, cfg, out_dir)?;
            if rows.iter().all(|r| r.pass) {
                Ok(Outcome::Theory(rows))
            } else {
                Err(Failure::Theory(rows))
            }
        }
    }
}
