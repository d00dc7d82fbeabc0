//! Trained models on disk: one JSON document holding the model kind,
//! architecture, standardization statistics, parameters, seed, resolved
//! configuration and training metadata.
//!
//! Floats are written in shortest round-trip form, so reloading restores
//! every parameter bit for bit.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cfm::CfmModel;
use crate::config::{ModelKind, RunConfig};
use crate::error::{Error, Result};
use crate::losses::LossValues;
use crate::mdn::MdnModel;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TrainedModel {
    Mdn(MdnModel),
    Cfm(CfmModel),
}

impl TrainedModel {
    pub fn kind(&self) -> ModelKind {
        match self {
            TrainedModel::Mdn(_) => ModelKind::Mdn,
            TrainedModel::Cfm(_) => ModelKind::Cfm,
        }
    }

    pub fn params(&self) -> &[f64] {
        match self {
            TrainedModel::Mdn(m) => &m.params,
            TrainedModel::Cfm(m) => &m.params,
        }
    }

    pub fn context_dim(&self) -> usize {
        match self {
            TrainedModel::Mdn(m) => m.arch.input_dim,
            TrainedModel::Cfm(m) => m.arch.context_dim,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainMetadata {
    pub version: String,
    pub iterations: usize,
    pub final_loss: Option<LossValues>,
    pub data_records: usize,
    pub data_sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    #[serde(flatten)]
    pub model: TrainedModel,
    pub seed: u64,
    pub config: RunConfig,
    pub metadata: TrainMetadata,
}

impl Checkpoint {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("checkpoint serializes") + "\n"
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let c: Checkpoint = serde_json::from_str(text)?;
        let expected = match &c.model {
            TrainedModel::Mdn(m) => {
                m.arch.validate()?;
                m.arch.param_count()
            }
            TrainedModel::Cfm(m) => m.arch.param_count(),
        };
        if c.model.params().len() != expected {
            return Err(Error::InvalidInput(format!(
                "checkpoint holds {} parameters, architecture needs {expected}",
                c.model.params().len()
            )));
        }
        if c.model.params().iter().any(|p| !p.is_finite()) {
            return Err(Error::InvalidInput("checkpoint parameters must be finite".into()));
        }
        Ok(c)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}
