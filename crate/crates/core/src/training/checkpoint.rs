//! JSON checkpoint container.
//!
//! ```text
//! { "format": "deepmm-checkpoint", "version": 1, "epoch": 12,
//!   "model_config": {...}, "train_config": {...} | null,
//!   "parameters": [{"path", "rows", "cols", "data"}, ...],
//!   "optimizer": {...} | null }
//! ```
//!
//! Parameters are listed in the model's visit order; loading checks every
//! path and shape against a freshly built model.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{AdamaxState, TrainConfig};
use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig};
use crate::params::{ParameterSet, Parameterized};

pub const CHECKPOINT_FORMAT: &str = "deepmm-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub epoch: usize,
    pub model_config: ModelConfig,
    pub train_config: Option<TrainConfig>,
    pub parameters: ParameterSet,
    pub optimizer: Option<AdamaxState>,
}

impl Checkpoint {
    pub fn new(model: &Model, epoch: usize, train_config: Option<TrainConfig>, optimizer: Option<AdamaxState>) -> Self {
        Self {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            epoch,
            model_config: model.config.clone(),
            train_config,
            parameters: model.to_parameter_set(),
            optimizer,
        }
    }

    pub fn to_model(&self) -> Result<Model> {
        let mut model = Model::build(self.model_config.clone(), 0)?;
        model.load_parameter_set(&self.parameters)?;
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        serde_json::to_writer(&mut w, self)
            .map_err(std::io::Error::from)
            .and_then(|_| w.flush())
            .map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let ck: Checkpoint = serde_json::from_reader(BufReader::new(file)).map_err(|e| Error::Parse {
            line: e.line(),
            message: format!("checkpoint {}: {e}", path.display()),
        })?;
        if ck.format != CHECKPOINT_FORMAT {
            return Err(Error::config(format!("`{}` is not a checkpoint format", ck.format)));
        }
        if ck.version != CHECKPOINT_VERSION {
            return Err(Error::config(format!(
                "checkpoint version {} is not supported (expected {CHECKPOINT_VERSION})",
                ck.version
            )));
        }
        Ok(ck)
    }
}
