//! Checkpoint file: one JSON document
//! `{"format": "cgd-checkpoint/1", "config": {..}, "tensors": [{"name", "shape", "data"}, ..]}`
//! with tensors in canonical order under the names of [`ModelParams::names`].
//! Floats are written in shortest round-trip form, so loading is bit-exact.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::model::{ModelConfig, ModelParams};
use super::tensor::Tensor;
use super::EngineError;

pub const CHECKPOINT_FORMAT: &str = "cgd-checkpoint/1";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub config: ModelConfig,
    pub tensors: Vec<NamedTensor>,
}

impl Checkpoint {
    pub fn from_params(params: &ModelParams) -> Self {
        let tensors = params
            .names()
            .into_iter()
            .zip(params.tensors())
            .map(|(name, t)| NamedTensor { name, shape: t.shape.clone(), data: t.data.clone() })
            .collect();
        Self { format: CHECKPOINT_FORMAT.to_string(), config: params.config.clone(), tensors }
    }

    pub fn into_params(self) -> Result<ModelParams, EngineError> {
        if self.format != CHECKPOINT_FORMAT {
            return Err(EngineError::Format(format!("unknown checkpoint format {:?}", self.format)));
        }
        let names: Vec<String> = self.tensors.iter().map(|t| t.name.clone()).collect();
        let tensors = self
            .tensors
            .into_iter()
            .map(|t| Tensor::new(t.shape, t.data))
            .collect::<Result<Vec<_>, _>>()?;
        let params = ModelParams::from_tensors(self.config, tensors)?;
        if params.names() != names {
            return Err(EngineError::Format("tensor names out of canonical order".into()));
        }
        Ok(params)
    }
}

pub fn save_checkpoint(params: &ModelParams, path: &Path) -> Result<(), EngineError> {
    let text = serde_json::to_string(&Checkpoint::from_params(params)).map_err(|e| EngineError::Format(e.to_string()))?;
    fs::write(path, text)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<ModelParams, EngineError> {
    let text = fs::read_to_string(path)?;
    let ckpt: Checkpoint = serde_json::from_str(&text).map_err(|e| EngineError::Format(e.to_string()))?;
    ckpt.into_params()
}
