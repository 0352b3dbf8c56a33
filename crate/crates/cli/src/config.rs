//! The TOML run configuration. Command-line flags override file values.

use std::path::{Path, PathBuf};

use qmrkit::eval::ScoreConvention;
use qmrkit::modifiers::BaseQuality;
use qmrkit::regressor::RegressorConfig;
use qmrkit::sr::SrTrainConfig;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Inputs {
    /// Source images for `modify`, `predict`, `benchmark-dataset`.
    pub images: Option<PathBuf>,
    /// HR images for `benchmark-sr` and `train-sr`.
    pub hr: Option<PathBuf>,
    pub manifests: Vec<PathBuf>,
    pub models: Vec<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetSection {
    pub side: usize,
    pub crops: usize,
}

impl Default for DatasetSection {
    fn default() -> Self {
        DatasetSection { side: 64, crops: 8 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub train_fraction: f64,
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection { train_fraction: 0.8 }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: Option<u64>,
    /// Parent directory for timestamped run directories.
    pub output_dir: Option<PathBuf>,
    pub inputs: Inputs,
    pub dataset: DatasetSection,
    pub base: BaseQuality,
    /// `regressor.grids` also sets the grids `modify` and `train` use.
    pub regressor: Option<RegressorConfig>,
    pub train: TrainSection,
    pub score: ScoreConvention,
    pub sr: SrTrainConfig,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(RunConfig::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        toml::from_str(&text)
            .map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> Result<String, CliError> {
        toml::to_string(self).map_err(|e| CliError::Runtime(format!("cannot serialise config: {e}")))
    }
}
