//! Versioned JSON container for model parameters plus caller metadata.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::{Model, ModelSpec};
use crate::error::{Error, Result};

pub const CHECKPOINT_VERSION: u32 = 1;

/// A model's spec and flat parameter arrays.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelState {
    pub spec: ModelSpec,
    pub params: Vec<Vec<f64>>,
}

impl Model {
    pub fn state(&self) -> ModelState {
        ModelState {
            spec: self.spec().clone(),
            params: self.params().to_vec(),
        }
    }

    pub fn from_state(state: ModelState) -> Result<Model> {
        Model::from_params(state.spec, state.params)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint<M> {
    pub format: String,
    pub version: u32,
    pub models: Vec<ModelState>,
    pub meta: M,
}

impl<M: Serialize + DeserializeOwned> Checkpoint<M> {
    pub fn new(format: &str, models: Vec<ModelState>, meta: M) -> Self {
        Checkpoint {
            format: format.into(),
            version: CHECKPOINT_VERSION,
            models,
            meta,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string(self).map_err(|e| Error::Serde(e.to_string()))
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    /// Parses a checkpoint, checking the version before the payload.
    pub fn from_json(text: &str, format: &str) -> Result<Self> {
        let value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| Error::CorruptCheckpoint(e.to_string()))?;
        let version = value
            .get("version")
            .and_then(serde_json::Value::as_u64)
            .ok_or_else(|| Error::CorruptCheckpoint("missing version field".into()))?;
        if version != CHECKPOINT_VERSION as u64 {
            return Err(Error::Version {
                found: version as u32,
                expected: CHECKPOINT_VERSION,
            });
        }
        let ck: Checkpoint<M> =
            serde_json::from_value(value).map_err(|e| Error::CorruptCheckpoint(e.to_string()))?;
        if ck.format != format {
            return Err(Error::CorruptCheckpoint(format!(
                "format '{}', expected '{format}'",
                ck.format
            )));
        }
        Ok(ck)
    }

    pub fn read(path: impl AsRef<Path>, format: &str) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text, format)
    }
}
