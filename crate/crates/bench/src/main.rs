use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Parser, Subcommand};
use mppi_bench::config::{Experiment, RunConfig};
use mppi_bench::{execute, resolve_out_dir, Failure, Outcome};
use mppi_core::analysis::render_table;

#[derive(Parser)]
#[command(name = "mppi-bench", version, about = "MPPI as preconditioned gradient descent: experiments and checks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment and write its outputs.
    Run {
        #[arg(long)]
        experiment: Option<Experiment>,
        /// TOML config; defaults are used for anything it omits.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Replace the seed list with a single seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Override a grid, e.g. `lqr.sigma2=1e-4,1e-3` or `dubins.k=1,10`.
        #[arg(long = "grid", value_name = "KEY=V1,V2,...")]
        grids: Vec<String>,
    },
    /// Print the default config as TOML.
    Defaults,
}

fn load(
    experiment: Option<Experiment>,
    config: Option<PathBuf>,
    seed: Option<u64>,
    grids: &[String],
) -> anyhow::Result<RunConfig> {
    let mut cfg = match &config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(e) = experiment {
        cfg.experiment = e;
    }
    if let Some(s) = seed {
        cfg.seeds = vec![s];
    }
    for g in grids {
        let (key, values) = g
            .split_once('=')
            .ok_or_else(|| anyhow!("--grid expects KEY=V1,V2,..., got `{g}`"))?;
        let values: Vec<&str> = values.split(',').map(str::trim).collect();
        cfg = cfg.with_grid(key.trim(), &values).with_context(|| format!("--grid {g}"))?;
    }
    Ok(cfg)
}

fn report(outcome: &Outcome) {
    match outcome {
        Outcome::Lqr(r) => {
            println!("f* = {}", r.reference.f_star);
            for c in &r.cells {
                println!(
                    "{}  eta={}  L={}  final_gap={}  infeasible_means={}  {}",
                    c.label(),
                    c.eta,
                    c.l_sigma,
                    c.final_gap,
                    c.infeasible_means,
                    c.termination
                );
            }
            if let Some(fd) = &r.fd {
                if let Some(last) = fd.rows.last() {
                    println!("finite differences: gap {} after {} evaluations", last.gap, last.evaluations);
                }
            }
        }
        Outcome::Dubins(r) => {
            for s in &r.summary {
                println!(
                    "K={}  average_cost={}  acceptance={}  runtime_s={}  unsafe_runs={}/{}",
                    s.k, s.average_cost, s.acceptance, s.runtime_seconds, s.unsafe_runs, s.seeds
                );
            }
        }
        Outcome::Theory(rows) => print!("{}", render_table(rows)),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Defaults => match RunConfig::default().to_toml() {
            Ok(text) => {
                print!("{text}");
                ExitCode::SUCCESS
            }
            Err(e) => {
                eprintln!("{e:#}");
                ExitCode::from(1)
            }
        },
        Command::Run {
            experiment,
            config,
            seed,
            out,
            grids,
        } => {
            let cfg = match load(experiment, config, seed, &grids) {
                Ok(c) => c,
                Err(e) => {
                    eprintln!("config error: {e:#}");
                    return ExitCode::from(1);
                }
            };
            let dir = resolve_out_dir(&cfg, out.as_deref());
            match execute(&cfg, &dir) {
                Ok(outcome) => {
                    report(&outcome);
                    println!("outputs written to {}", dir.display());
                    ExitCode::SUCCESS
                }
                Err(failure) => {
                    if let Failure::Theory(rows) = &failure {
                        print!("{}", render_table(rows));
                    }
                    eprintln!("{failure}");
                    ExitCode::from(failure.exit_code() as u8)
                }
            }
        }
    }
}
