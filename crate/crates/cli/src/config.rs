//! Run configuration: one TOML file with a table per command. Command-line
//! flags are applied on top.
//!
//! ```toml
//! format_version = 1
//! seed = 1
//!
//! [simulate]
//! preset = "confounded"
//! runs = 12
//! noise.sigma = 0.4
//!
//! [fit]
//! gamma = 16.0
//! lambda = 1.0
//!
//! [detect]
//! z = 2.0
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use anchor_da::detection::DetectionRule;
use anchor_da::scm::{Forcing, ScmConfig};
use anchor_da::SolverPath;
use serde::{Deserialize, Serialize};

use crate::CliError;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub format_version: Option<u32>,
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub out: Option<PathBuf>,
    /// Simulator settings on top of the preset; merged key by key.
    pub simulate: Option<toml::Table>,
    #[serde(default)]
    pub fit: FitConfig,
    #[serde(default)]
    pub cv: CvConfig,
    #[serde(default)]
    pub detect: DetectConfig,
    #[serde(default)]
    pub robustness: RobustnessConfig,
}

impl RunConfig {
    pub fn read(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Validation(format!("cannot read config {}: {e}", path.display())))?;
        let config: RunConfig = toml::from_str(&text)
            .map_err(|e| CliError::Validation(format!("config {}: {e}", path.display())))?;
        if let Some(v) = config.format_version {
            if v != FORMAT_VERSION {
                return Err(CliError::Validation(format!(
                    "config format_version {v} is not supported (expected {FORMAT_VERSION})"
                )));
            }
        }
        Ok(config)
    }

    /// Simulator configuration: preset, then the `[simulate]` table, then `preset_override`.
    pub fn scm(&self, preset_override: Option<Preset>) -> Result<(Preset, ScmConfig), CliError> {
        let mut table = self.simulate.clone().unwrap_or_default();
        let file_preset = match table.remove("preset") {
            None => None,
            Some(v) => Some(
                v.try_into::<Preset>()
                    .map_err(|e| CliError::Validation(format!("simulate.preset: {e}")))?,
            ),
        };
        let preset = preset_override.or(file_preset).unwrap_or_default();
        let base = toml::Table::try_from(preset.config()).expect("config serializes");
        let merged = merge(base, table);
        let config: ScmConfig = toml::Value::Table(merged)
            .try_into()
            .map_err(|e| CliError::Validation(format!("[simulate]: {e}")))?;
        Ok((preset, config))
    }
}

fn merge(mut base: toml::Table, over: toml::Table) -> toml::Table {
    for (key, value) in over {
        match (base.remove(&key), value) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => {
                base.insert(key, toml::Value::Table(merge(b, o)));
            }
            (_, v) => {
                base.insert(key, v);
            }
        }
    }
    base
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    #[default]
    Default,
    Confounded,
}

impl Preset {
    pub fn config(self) -> ScmConfig {
        match self {
            Preset::Default => ScmConfig::default(),
            Preset::Confounded => ScmConfig::reference_confounded(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Estimator {
    #[default]
    Anchor,
    Ridge,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FitConfig {
    pub data: Option<PathBuf>,
    pub estimator: Estimator,
    pub gamma: f64,
    pub lambda: f64,
    pub solver: SolverPath,
    pub train_fraction: f64,
    /// Pick `(lambda, gamma)` by grouped cross-validation on the training models.
    pub cv: bool,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            data: None,
            estimator: Estimator::Anchor,
            gamma: 1.0,
            lambda: 1.0,
            solver: SolverPath::Auto,
            train_fraction: 0.75,
            cv: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CvConfig {
    pub k: usize,
    /// Default: 13 log-spaced values from 1e-4 to 1e4.
    pub lambdas: Option<Vec<f64>>,
    pub gammas: Vec<f64>,
}

impl Default for CvConfig {
    fn default() -> Self {
        CvConfig {
            k: 3,
            lambdas: None,
            gammas: vec![1.0],
        }
    }
}

/// Which models a command evaluates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Scope {
    /// The held-out models recorded in the model file.
    #[default]
    Test,
    All,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum RuleName {
    #[default]
    Persistent,
    FirstCrossing,
}

impl From<RuleName> for DetectionRule {
    fn from(r: RuleName) -> Self {
        match r {
            RuleName::Persistent => DetectionRule::Persistent,
            RuleName::FirstCrossing => DetectionRule::FirstCrossing,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DetectConfig {
    pub model: Option<PathBuf>,
    pub data: Option<PathBuf>,
    pub z: f64,
    pub rule: RuleName,
    pub min_persistence: usize,
    pub attribution_threshold: f64,
    /// Multiplies the true forcing before the attribution check.
    pub truth_scale: f64,
    pub scope: Scope,
}

impl Default for DetectConfig {
    fn default() -> Self {
        DetectConfig {
            model: None,
            data: None,
            z: 2.0,
            rule: RuleName::Persistent,
            min_persistence: 5,
            attribution_threshold: 0.95,
            truth_scale: 1.0,
            scope: Scope::Test,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RobustnessConfig {
    pub model: Option<PathBuf>,
    pub truth: Option<PathBuf>,
    pub forcing: Forcing,
    pub deltas: Vec<f64>,
    pub n_eval: Option<usize>,
    pub scope: Scope,
}

impl Default for RobustnessConfig {
    fn default() -> Self {
        RobustnessConfig {
            model: None,
            truth: None,
            forcing: Forcing::Volcanic,
            deltas: vec![0.0, 2.0, -2.0, 5.0, -5.0, 10.0, -10.0],
            n_eval: None,
            scope: Scope::Test,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn simulate_table_overlays_the_preset() {
        let cfg: RunConfig = toml::from_str(
            "[simulate]\npreset = \"confounded\"\nyears = 40\nnoise.sigma = 0.25\n",
        )
        .unwrap();
        let (preset, scm) = cfg.scm(None).unwrap();
        assert_eq!(preset, Preset::Confounded);
        assert_eq!(scm.years, 40);
        assert_eq!(scm.noise.sigma, 0.25);
        assert_eq!(scm.noise.length_scale, ScmConfig::default().noise.length_scale);
        assert_eq!(scm.confounding, ScmConfig::reference_confounded().confounding);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<RunConfig>("sed = 1\n").is_err());
        assert!(toml::from_str::<RunConfig>("[fit]\ngama = 2.0\n").is_err());
        let cfg: RunConfig = toml::from_str("[simulate]\nnoise.sigm = 1.0\n").unwrap();
        assert!(cfg.scm(None).is_err());
    }
}
