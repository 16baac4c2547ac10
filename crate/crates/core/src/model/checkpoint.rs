//! JSON checkpoint files.
//!
//! Layout (`format = "mfam-checkpoint"`, `version = 1`):
//!
//! ```text
//! {
//!   "format": "mfam-checkpoint",
//!   "version": 1,
//!   "config": { ModelConfig fields },
//!   "bands": [ {"low": 0.5, "high": 3.0}, ... ],
//!   "fs": 100.0,
//!   "tensors": [ {"name": "branch0_d1.weight", "shape": [64, 18, 3], "data": [...]}, ... ]
//! }
//! ```
//!
//! Tensors appear in [`param_layout`] order; loading checks every name and
//! shape against the stored config.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use super::params::{param_layout, ModelParams};
use crate::error::{MfamError, Result};
use crate::signal::BandSet;
use crate::tensor::Tensor;

pub const CHECKPOINT_FORMAT: &str = "mfam-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NamedTensor {
    name: String,
    shape: Vec<usize>,
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointFile {
    format: String,
    version: u32,
    config: ModelConfig,
    bands: BandSet,
    fs: f64,
    tensors: Vec<NamedTensor>,
}

/// A trained model plus the preprocessing it expects.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub bands: BandSet,
    pub fs: f64,
    pub params: ModelParams,
}

impl Checkpoint {
    pub fn to_json(&self) -> Result<String> {
        let tensors = param_layout(&self.config)
            .into_iter()
            .zip(self.params.tensors())
            .map(|((name, _), t)| NamedTensor {
                name,
                shape: t.shape().to_vec(),
                data: t.data().to_vec(),
            })
            .collect();
        let file = CheckpointFile {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            config: self.config.clone(),
            bands: self.bands.clone(),
            fs: self.fs,
            tensors,
        };
        Ok(serde_json::to_string(&file)?)
    }

    pub fn from_json(text: &str, origin: &Path) -> Result<Self> {
        let file: CheckpointFile = serde_json::from_str(text)?;
        let bad = |msg: String| MfamError::format(origin, msg);
        if file.format != CHECKPOINT_FORMAT {
            return Err(bad(format!("not a checkpoint (format {:?})", file.format)));
        }
        if file.version != CHECKPOINT_VERSION {
            return Err(bad(format!("unsupported checkpoint version {}", file.version)));
        }
        file.config.validate()?;
        file.bands.validate(file.fs)?;
        let layout = param_layout(&file.config);
        if layout.len() != file.tensors.len() {
            return Err(bad(format!(
                "expected {} tensors, found {}",
                layout.len(),
                file.tensors.len()
            )));
        }
        let mut tensors = Vec::with_capacity(layout.len());
        for ((name, shape), nt) in layout.into_iter().zip(file.tensors) {
            if nt.name != name || nt.shape != shape {
                return Err(bad(format!(
                    "tensor {:?} {:?} does not match expected {name:?} {shape:?}",
                    nt.name, nt.shape
                )));
            }
            tensors.push(Tensor::new(nt.shape, nt.data)?);
        }
        let params = ModelParams::from_tensors(&file.config, tensors)?;
        Ok(Self {
            config: file.config,
            bands: file.bands,
            fs: file.fs,
            params,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()?).map_err(|e| MfamError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| MfamError::io(path, e))?;
        Self::from_json(&text, path)
    }
}
