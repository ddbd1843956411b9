//! JSON checkpoint container: named parameter tensors with shapes.
//!
//! Values are written as 64-bit decimals with shortest round-trip
//! formatting, so a model reloads bit-exactly at the precision it was
//! stored in.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{VimConfig, VimModel};
use crate::error::{Error, Result};
use crate::numerics::{Precision, Scalar, Tensor};

pub const CHECKPOINT_FORMAT: &str = "ssm-vim-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub precision: Precision,
    pub config: VimConfig,
    pub tensors: Vec<NamedTensor>,
}

impl Checkpoint {
    pub fn from_model<T: Scalar>(model: &VimModel<T>) -> Self {
        let tensors = model
            .param_names()
            .into_iter()
            .zip(model.params())
            .map(|(name, t)| NamedTensor {
                name,
                shape: t.shape().to_vec(),
                data: t.to_f64_vec(),
            })
            .collect();
        Self {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            precision: T::PRECISION,
            config: model.config,
            tensors,
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let json = serde_json::to_vec(self)?;
        std::fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn into_model<T: Scalar>(self) -> Result<VimModel<T>> {
        if self.format != CHECKPOINT_FORMAT || self.version != CHECKPOINT_VERSION {
            return Err(Error::invalid(format!(
                "unsupported checkpoint {} v{}",
                self.format, self.version
            )));
        }
        let mut model = VimModel::<T>::random(self.config, 0)?;
        let names = model.param_names();
        if names.len() != self.tensors.len() {
            return Err(Error::invalid(format!(
                "checkpoint has {} tensors, model expects {}",
                self.tensors.len(),
                names.len()
            )));
        }
        for ((name, slot), nt) in names.iter().zip(model.params_mut()).zip(self.tensors) {
            if *name != nt.name || slot.shape() != nt.shape.as_slice() {
                return Err(Error::invalid(format!(
                    "checkpoint tensor {} {:?} does not match {} {:?}",
                    nt.name,
                    nt.shape,
                    name,
                    slot.shape()
                )));
            }
            *slot = Tensor::from_f64(nt.shape, &nt.data)?;
        }
        Ok(model)
    }
}

pub fn save_checkpoint<T: Scalar>(model: &VimModel<T>, path: impl AsRef<Path>) -> Result<()> {
    Checkpoint::from_model(model).save(path)
}

pub fn load_checkpoint<T: Scalar>(path: impl AsRef<Path>) -> Result<VimModel<T>> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let ckpt: Checkpoint = serde_json::from_slice(&bytes).map_err(|e| Error::format(path, e.to_string()))?;
    ckpt.into_model()
}
