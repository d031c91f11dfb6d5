//! Versioned TOML run configuration.
//!
//! Every field has a default, so an empty document is a valid `lqr` run.
//! A run writes its fully resolved configuration next to its outputs;
//! re-running from that snapshot reproduces the CSV files byte for byte.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{anyhow, bail, Context, Result};
use serde::{Deserialize, Serialize};

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Experiment {
    Lqr,
    Dubins,
    #[serde(alias = "unit_tests_theory")]
    Theory,
}

impl FromStr for Experiment {
    type Err = anyhow::Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lqr" => Ok(Self::Lqr),
            "dubins" => Ok(Self::Dubins),
            "theory" | "unit_tests_theory" => Ok(Self::Theory),
            other => bail!("unknown experiment `{other}`"),
        }
    }
}

/// Step-size choice for an LQR cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum EtaRule {
    /// `η = 1`, classical MPPI.
    Unit,
    /// `η = 1/L_Σ` with the closed-form quadratic `L_Σ`.
    InverseL,
    Fixed(f64),
}

impl EtaRule {
    pub fn label(&self) -> String {
        String::from(*self)
    }
}

impl TryFrom<String> for EtaRule {
    type Error = anyhow::Error;
    fn try_from(s: String) -> Result<Self> {
        match s.as_str() {
            "unit" => Ok(Self::Unit),
            "inverse_l" => Ok(Self::InverseL),
            other => {
                let v: f64 = other
                    .parse()
                    .map_err(|_| anyhow!("eta rule must be `unit`, `inverse_l` or a number, got `{other}`"))?;
                if v <= 0.0 || !v.is_finite() {
                    bail!("fixed step size must be positive and finite");
                }
                Ok(Self::Fixed(v))
            }
        }
    }
}

impl From<EtaRule> for String {
    fn from(r: EtaRule) -> String {
        match r {
            EtaRule::Unit => "unit".into(),
            EtaRule::InverseL => "inverse_l".into(),
            EtaRule::Fixed(v) => format!("{v}"),
        }
    }
}

impl fmt::Display for EtaRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub dir: PathBuf,
    /// Write wall-clock milliseconds into the CSV `ms` column. Off by
    /// default so that CSV files are reproducible.
    pub timing: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("results"),
            timing: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FdConfig {
    pub enabled: bool,
    pub perturbation: f64,
    pub step_size: f64,
    pub iterations: usize,
}

impl Default for FdConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            perturbation: 1e-3,
            step_size: 1e-3,
            iterations: 2000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LqrConfig {
    pub horizon: usize,
    pub a: Vec<Vec<f64>>,
    pub b: Vec<Vec<f64>>,
    pub q: Vec<Vec<f64>>,
    pub r: Vec<Vec<f64>>,
    pub x0: Vec<f64>,
    pub u_min: Vec<f64>,
    pub u_max: Vec<f64>,
    pub x_min: Vec<f64>,
    pub x_max: Vec<f64>,
    pub samples: usize,
    pub antithetic: bool,
    pub iterations: usize,
    /// Ablation grid over `Σ = σ²I`.
    pub sigma2: Vec<f64>,
    /// Ablation grid over `τ`.
    pub tau: Vec<f64>,
    pub eta_rules: Vec<EtaRule>,
    pub stationarity_tol: f64,
    pub max_retries: u32,
    pub inflation: f64,
    pub reference_tol: f64,
    pub fd: FdConfig,
}

impl Default for LqrConfig {
    fn default() -> Self {
        Self {
            horizon: 10,
            a: vec![vec![1.0, 1.0], vec![0.0, 1.0]],
            b: vec![vec![0.5], vec![1.0]],
            q: vec![vec![1.0, 0.0], vec![0.0, 1.0]],
            r: vec![vec![1.0]],
            x0: vec![2.5, 0.0],
            u_min: vec![-1.0],
            u_max: vec![1.0],
            x_min: vec![-5.0, -1.0],
            x_max: vec![5.0, 1.0],
            samples: 1000,
            antithetic: true,
            iterations: 2000,
            sigma2: vec![1e-4],
            tau: vec![1.0],
            eta_rules: vec![EtaRule::Unit, EtaRule::InverseL],
            stationarity_tol: 0.0,
            max_retries: 3,
            inflation: 2.0,
            reference_tol: 1e-9,
            fd: FdConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObstacleConfig {
    pub center: [f64; 2],
    pub radius: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DubinsConfig {
    pub speed: f64,
    pub dt: f64,
    pub horizon: usize,
    pub x0: [f64; 3],
    pub target: [f64; 3],
    pub q_diag: [f64; 3],
    pub r: f64,
    pub max_turn_rate: f64,
    pub obstacles: Vec<ObstacleConfig>,
    pub sigma2: f64,
    pub tau: f64,
    pub samples: usize,
    pub antithetic: bool,
    pub sim_steps: usize,
    /// Grid over the inner iteration count `K`.
    pub k: Vec<usize>,
    pub step_size: f64,
    pub initial_mean: f64,
    pub max_retries: u32,
    pub inflation: f64,
}

impl Default for DubinsConfig {
    fn default() -> Self {
        let spec = mppi_core::DubinsSpec::<f64>::reach_task();
        Self {
            speed: spec.speed,
            dt: spec.dt,
            horizon: spec.horizon,
            x0: spec.x0,
            target: spec.target,
            q_diag: spec.q_diag,
            r: spec.r,
            max_turn_rate: spec.max_turn_rate,
            obstacles: spec
                .obstacles
                .iter()
                .map(|o| ObstacleConfig {
                    center: o.center,
                    radius: o.radius,
                })
                .collect(),
            sigma2: 0.25,
            tau: 100.0,
            samples: 1024,
            antithetic: true,
            sim_steps: 30,
            k: vec![1, 5, 10],
            step_size: 1.0,
            initial_mean: 0.0,
            max_retries: 3,
            inflation: 2.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TheoryConfig {
    /// Random instances per check family.
    pub instances: usize,
    /// Flip the sign of the exact gradient to exercise the harness.
    pub inject_sign_bug: bool,
}

impl Default for TheoryConfig {
    fn default() -> Self {
        Self {
            instances: 5,
            inject_sign_bug: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub version: u32,
    pub experiment: Experiment,
    pub seeds: Vec<u64>,
    pub output: OutputConfig,
    pub lqr: LqrConfig,
    pub dubins: DubinsConfig,
    pub theory: TheoryConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            version: CONFIG_VERSION,
            experiment: Experiment::Lqr,
            seeds: vec![0, 1, 2],
            output: OutputConfig::default(),
            lqr: LqrConfig::default(),
            dubins: DubinsConfig::default(),
            theory: TheoryConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        Self::from_value(text.parse::<toml::Table>().context("config is not valid TOML")?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::from_toml_str(&text)
    }

    fn from_value(table: toml::Table) -> Result<Self> {
        let cfg: Self = toml::Value::Table(table)
            .try_into()
            .context("config does not match the schema")?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    /// Replaces the list at a dotted `key` (e.g. `lqr.sigma2`) by `values`,
    /// each parsed as an integer, a float or else a string.
    pub fn with_grid(&self, key: &str, values: &[&str]) -> Result<Self> {
        let mut table: toml::Table = toml::Table::try_from(self)?;
        let parts: Vec<&str> = key.split('.').collect();
        let (last, path) = parts.split_last().ok_or_else(|| anyhow!("empty grid key"))?;
        let mut node = &mut table;
        for p in path {
            node = node
                .get_mut(*p)
                .and_then(|v| v.as_table_mut())
                .ok_or_else(|| anyhow!("unknown grid section `{p}` in `{key}`"))?;
        }
        match node.get(*last) {
            Some(toml::Value::Array(_)) => {}
            Some(_) => bail!("`{key}` is not a list and cannot take a grid"),
            None => bail!("unknown grid key `{key}`"),
        }
        let parsed = values
            .iter()
            .map(|v| {
                let v = v.trim();
                if let Ok(i) = v.parse::<i64>() {
                    if !key.ends_with("sigma2") && !key.ends_with("tau") {
                        return toml::Value::Integer(i);
                    }
                }
                match v.parse::<f64>() {
                    Ok(f) if !key.ends_with("eta_rules") => toml::Value::Float(f),
                    _ => toml::Value::String(v.to_string()),
                }
            })
            .collect();
        node.insert(last.to_string(), toml::Value::Array(parsed));
        Self::from_value(table)
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != CONFIG_VERSION {
            bail!("unsupported config version {} (expected {CONFIG_VERSION})", self.version);
        }
        if self.seeds.is_empty() {
            bail!("seed list is empty");
        }
        let l = &self.lqr;
        if l.sigma2.is_empty() || l.tau.is_empty() || l.eta_rules.is_empty() {
            bail!("lqr ablation grids must be non-empty");
        }
        if l.sigma2.iter().chain(l.tau.iter()).any(|v| v.is_nan() || *v <= 0.0) {
            bail!("lqr sigma2 and tau must be positive");
        }
        if l.iterations == 0 || l.samples < 2 {
            bail!("lqr needs at least one iteration and two samples");
        }
        let d = &self.dubins;
        if d.k.is_empty() || d.k.contains(&0) {
            bail!("dubins K grid must be non-empty and positive");
        }
        if d.sigma2.is_nan() || d.sigma2 <= 0.0 || d.tau.is_nan() || d.tau <= 0.0 || d.samples < 2 {
            bail!("dubins sigma2 and tau must be positive and samples at least 2");
        }
        if self.theory.instances == 0 {
            bail!("theory instances must be positive");
        }
        Ok(())
    }
}
