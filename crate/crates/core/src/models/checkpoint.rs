//! Versioned JSON checkpoints: model kind, dimensions, seed, every tensor by
//! name and shape, and the privacy ledger at the time of saving.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ModelDims, ModelKind, ModelState};
use crate::dpsgd::PrivacyLedger;
use crate::error::{Error, Result};

pub const CHECKPOINT_FORMAT: &str = "privrec-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub kind: ModelKind,
    pub dims: ModelDims,
    pub seed: u64,
    pub tensors: Vec<NamedTensor>,
    pub ledger: Option<PrivacyLedger>,
}

impl Checkpoint {
    pub fn from_state(state: &ModelState, ledger: Option<&PrivacyLedger>) -> Self {
        Self {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            kind: state.kind,
            dims: state.dims.clone(),
            seed: state.seed,
            tensors: state
                .layout()
                .iter()
                .map(|t| NamedTensor {
                    name: t.name.clone(),
                    shape: t.shape.clone(),
                    values: state.params()[t.range()].to_vec(),
                })
                .collect(),
            ledger: ledger.cloned(),
        }
    }

    pub fn into_state(self) -> Result<(ModelState, Option<PrivacyLedger>)> {
        if self.format != CHECKPOINT_FORMAT || self.version != CHECKPOINT_VERSION {
            return Err(Error::CacheVersion(format!(
                "checkpoint is {} v{}, expected {CHECKPOINT_FORMAT} v{CHECKPOINT_VERSION}",
                self.format, self.version
            )));
        }
        let mut state = ModelState::init(self.kind, self.dims, self.seed)?;
        if self.tensors.len() != state.layout().len() {
            return Err(Error::invalid("checkpoint tensor count does not match the model layout"));
        }
        for tensor in self.tensors {
            let spec = state
                .tensor_spec(&tensor.name)
                .ok_or_else(|| Error::invalid(format!("unknown tensor {}", tensor.name)))?
                .clone();
            if spec.shape != tensor.shape || tensor.values.len() != spec.len() {
                return Err(Error::invalid(format!("tensor {} has the wrong shape", tensor.name)));
            }
            if tensor.values.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numeric(format!("tensor {} holds non-finite values", tensor.name)));
            }
            state.params_mut()[spec.range()].copy_from_slice(&tensor.values);
        }
        Ok((state, self.ledger))
    }
}

pub fn save_checkpoint(state: &ModelState, ledger: Option<&PrivacyLedger>, path: &Path) -> Result<()> {
    let json = serde_json::to_vec(&Checkpoint::from_state(state, ledger))?;
    crate::experiment::write_atomic(path, &json)
}

pub fn load_checkpoint(path: &Path) -> Result<(ModelState, Option<PrivacyLedger>)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let ckpt: Checkpoint = serde_json::from_slice(&bytes)?;
    ckpt.into_state()
}
