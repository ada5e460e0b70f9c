//! Command-line pipeline: simulate, fit, cross-validate, detect, and probe
//! robustness under shift interventions.

pub mod commands;
pub mod config;
mod output;

use std::fmt;
use std::path::PathBuf;

use anchor_da::ErrorClass;
use clap::{Args, Parser, Subcommand};

use crate::config::{Estimator, Preset, RuleName, Scope};

#[derive(Debug)]
pub enum CliError {
    /// Bad flags or configuration.
    Validation(String),
    /// A library error, tagged with the pipeline stage that raised it.
    Stage {
        stage: &'static str,
        source: anchor_da::Error,
    },
    Output {
        path: PathBuf,
        source: std::io::Error,
    },
}

impl CliError {
    /// 1 validation, 2 data, 3 numerical.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Output { .. } => 2,
            CliError::Stage { source, .. } => match source.class() {
                ErrorClass::Validation => 1,
                ErrorClass::Data => 2,
                ErrorClass::Numerical => 3,
            },
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Validation(m) => write!(f, "{m}"),
            CliError::Stage { stage, source } => write!(f, "stage `{stage}`: {source}"),
            CliError::Output { path, source } => write!(f, "cannot write {}: {source}", path.display()),
        }
    }
}

impl std::error::Error for CliError {}

/// Attach a stage name to library errors.
pub(crate) trait StageExt<T> {
    fn stage(self, stage: &'static str) -> Result<T, CliError>;
}

impl<T> StageExt<T> for anchor_da::Result<T> {
    fn stage(self, stage: &'static str) -> Result<T, CliError> {
        self.map_err(|source| CliError::Stage { stage, source })
    }
}

#[derive(Debug, Parser)]
#[command(name = "anchor-da", version, about = "Anchor regression for detection and attribution")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct GlobalArgs {
    /// TOML run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory (default: current directory).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Draw a dataset from the structural causal model.
    Simulate(SimulateArgs),
    /// Anomalies, model-wise split, standardized anchor fit, test metrics.
    Fit(FitArgs),
    /// Grouped cross-validation over a (lambda, gamma) grid.
    Cv(CvArgs),
    /// Detection and attribution tables for the evaluation runs.
    Detect(DetectArgs),
    /// Prediction risk under shift interventions.
    Robustness(RobustnessArgs),
}

#[derive(Debug, Clone, Default, Args)]
pub struct SimulateArgs {
    #[arg(long, value_enum)]
    pub preset: Option<Preset>,
    #[arg(long)]
    pub runs: Option<usize>,
    #[arg(long)]
    pub years: Option<usize>,
    /// Grid as `LONxLAT`, e.g. `16x8`.
    #[arg(long)]
    pub grid: Option<String>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct FitArgs {
    /// Dataset table (default: `<out>/data.csv`); its manifest sits next to it.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub estimator: Option<Estimator>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub train_fraction: Option<f64>,
    /// Select lambda and gamma by cross-validation first.
    #[arg(long)]
    pub cv: bool,
    #[arg(long)]
    pub k: Option<usize>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct CvArgs {
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub train_fraction: Option<f64>,
    /// Comma-separated lambda grid.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub lambdas: Option<Vec<f64>>,
    /// Comma-separated gamma grid.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub gammas: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct DetectArgs {
    /// Model file (default: `<out>/model.json`).
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long, allow_hyphen_values = true)]
    pub z: Option<f64>,
    #[arg(long, value_enum)]
    pub rule: Option<RuleName>,
    #[arg(long)]
    pub min_persistence: Option<usize>,
    #[arg(long)]
    pub truth_scale: Option<f64>,
    #[arg(long, value_enum)]
    pub scope: Option<Scope>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct RobustnessArgs {
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Ground-truth sidecar of the simulation (default: `<out>/truth.json`).
    #[arg(long)]
    pub truth: Option<PathBuf>,
    /// `solar`, `volcanic`, or a 1-based index.
    #[arg(long)]
    pub forcing: Option<String>,
    /// Comma-separated shifts.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub deltas: Option<Vec<f64>>,
    #[arg(long)]
    pub n_eval: Option<usize>,
    #[arg(long, value_enum)]
    pub scope: Option<Scope>,
}

/// Run a parsed command line.
pub fn run(cli: Cli) -> Result<(), CliError> {
    commands::run(cli)
}
