//! Run configuration documents. Each run writes the fully resolved document
//! to its output directory so it can be replayed with `--config`.

use std::path::{Path, PathBuf};

use polyformer::model::ModelConfig;
use polyformer::synth::{FitConfig, FitModel, TaskName};
use polyformer::train::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitConfig {
    pub train: f64,
    pub val: f64,
    pub test: f64,
    #[serde(default)]
    pub seed: u64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            train: 0.6,
            val: 0.2,
            test: 0.2,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainRun {
    #[serde(default)]
    pub tokens: Option<PathBuf>,
    #[serde(default)]
    pub labels: Option<PathBuf>,
    pub model: ModelConfig,
    pub train: TrainConfig,
    #[serde(default)]
    pub split: SplitConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthRun {
    pub task: TaskName,
    pub width: usize,
    pub height: usize,
    pub model: FitModel,
    /// `uniform`, `smooth` or a one-column CSV path.
    pub signal: String,
    pub signal_seed: u64,
    pub clusters: usize,
    pub fit: FitConfig,
}

impl Default for SynthRun {
    fn default() -> Self {
        Self {
            task: TaskName::LowAndHighPass,
            width: 24,
            height: 24,
            model: FitModel::PolyAttn,
            signal: "uniform".into(),
            signal_seed: 0,
            clusters: 2,
            fit: FitConfig::default(),
        }
    }
}

pub fn load<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

pub fn save<T: Serialize>(value: &T, path: &Path) -> Result<(), CliError> {
    let text = toml::to_string(value).map_err(|e| CliError::Input(format!("cannot serialize config: {e}")))?;
    std::fs::write(path, text).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}
