//! JSON checkpoints: named row-major tensors plus free-form metadata.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autograd::ParamStore;
use crate::tensor::Tensor;
use crate::{Error, Result};

pub const FORMAT: &str = "conformal-load-checkpoint/1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub metadata: BTreeMap<String, serde_json::Value>,
    pub tensors: Vec<TensorEntry>,
}

impl Checkpoint {
    pub fn from_params(store: &ParamStore, metadata: BTreeMap<String, serde_json::Value>) -> Self {
        Checkpoint {
            format: FORMAT.to_string(),
            metadata,
            tensors: store
                .iter()
                .map(|p| TensorEntry {
                    name: p.name.clone(),
                    rows: p.value.rows(),
                    cols: p.value.cols(),
                    values: p.value.data().to_vec(),
                })
                .collect(),
        }
    }

    /// Writes every stored tensor into the parameter of the same name.
    /// Names and shapes must match exactly.
    pub fn apply(&self, store: &mut ParamStore) -> Result<()> {
        if self.format != FORMAT {
            return Err(Error::InvalidArgument(format!(
                "unsupported checkpoint format '{}'",
                self.format
            )));
        }
        if self.tensors.len() != store.len() {
            return Err(Error::InvalidArgument(format!(
                "checkpoint has {} tensors, model has {}",
                self.tensors.len(),
                store.len()
            )));
        }
        for (entry, param) in self.tensors.iter().zip(store.iter_mut()) {
            if entry.name != param.name {
                return Err(Error::InvalidArgument(format!(
                    "checkpoint tensor '{}' where '{}' was expected",
                    entry.name, param.name
                )));
            }
            let t = Tensor::from_vec(entry.rows, entry.cols, entry.values.clone())?;
            if t.shape() != param.value.shape() {
                return Err(Error::ShapeMismatch {
                    op: "checkpoint",
                    left: param.value.shape(),
                    right: t.shape(),
                });
            }
            param.value = t;
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}
