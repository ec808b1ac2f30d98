//! Versioned model persistence.
//!
//! Layout: the 8-byte magic `LRSFLOW\0`, the header length as a little-endian
//! `u64`, a JSON header, then every parameter tensor (followed by the Adam
//! moments when present) as little-endian `f64` in header order.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::data::Standardization;
use crate::error::{Error, Result};
use crate::flow::{FlowModel, LayerInfo, ModelConfig};
use crate::train::{AdamState, RngState, TrainConfig};

pub const FORMAT_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"LRSFLOW\0";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct OptimizerHeader {
    step: u64,
    beta1: f64,
    beta2: f64,
    eps: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    format_version: u32,
    model: ModelConfig,
    seed: u64,
    topology: Vec<LayerInfo>,
    params: Vec<TensorEntry>,
    train_config: Option<TrainConfig>,
    optimizer: Option<OptimizerHeader>,
    rng: Option<RngState>,
    best_val_nll: Option<f64>,
    standardization: Option<Standardization>,
    data_source: Option<String>,
}

/// A trained model together with everything needed to resume or reproduce it.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: FlowModel,
    pub train_config: Option<TrainConfig>,
    pub optimizer: Option<AdamState>,
    pub rng: Option<RngState>,
    pub best_val_nll: Option<f64>,
    pub standardization: Option<Standardization>,
    pub data_source: Option<String>,
}

impl Checkpoint {
    pub fn new(model: FlowModel) -> Self {
        Checkpoint {
            model,
            train_config: None,
            optimizer: None,
            rng: None,
            best_val_nll: None,
            standardization: None,
            data_source: None,
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let store = self.model.params();
        let header = Header {
            format_version: FORMAT_VERSION,
            model: self.model.config().clone(),
            seed: self.model.seed(),
            topology: self.model.topology(),
            params: store
                .names()
                .iter()
                .zip(store.tensors())
                .map(|(name, t)| TensorEntry {
                    name: name.clone(),
                    shape: t.shape().to_vec(),
                })
                .collect(),
            train_config: self.train_config.clone(),
            optimizer: self.optimizer.as_ref().map(|a| OptimizerHeader {
                step: a.step,
                beta1: a.beta1,
                beta2: a.beta2,
                eps: a.eps,
            }),
            rng: self.rng.clone(),
            best_val_nll: self.best_val_nll,
            standardization: self.standardization.clone(),
            data_source: self.data_source.clone(),
        };
        let json = serde_json::to_vec_pretty(&header)?;
        let mut tensors: Vec<&Tensor> = store.tensors().iter().collect();
        if let Some(a) = &self.optimizer {
            if a.m.len() != store.len() || a.v.len() != store.len() {
                return Err(Error::Checkpoint("optimizer state does not match the parameters".into()));
            }
            tensors.extend(a.m.iter().chain(&a.v));
        }
        let floats: usize = tensors.iter().map(|t| t.len()).sum();
        let mut out = Vec::with_capacity(16 + json.len() + 8 * floats);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for t in tensors {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(Error::Checkpoint("not a checkpoint file".into()));
        }
        let len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        let json = bytes
            .get(16..16usize.saturating_add(len))
            .ok_or_else(|| Error::Checkpoint("truncated header".into()))?;
        let version: serde_json::Value = serde_json::from_slice(json)?;
        match version.get("format_version").and_then(serde_json::Value::as_u64) {
            Some(v) if v == u64::from(FORMAT_VERSION) => {}
            other => {
                return Err(Error::Checkpoint(format!(
                    "unsupported format version {other:?}, expected {FORMAT_VERSION}"
                )))
            }
        }
        let header: Header = serde_json::from_slice(json)?;
        let mut model = FlowModel::new(header.model, header.seed)?;
        if model.topology() != header.topology {
            return Err(Error::Checkpoint("topology does not match the stored configuration".into()));
        }
        let expected: Vec<(&String, &[usize])> =
            model.params().names().iter().zip(model.params().tensors().iter().map(Tensor::shape)).collect();
        let stored: Vec<(&String, &[usize])> = header.params.iter().map(|e| (&e.name, e.shape.as_slice())).collect();
        if expected != stored {
            return Err(Error::Checkpoint("parameter names or shapes do not match the model".into()));
        }

        let mut payload = bytes[16 + len..].chunks_exact(8);
        if payload.remainder().len() != 0 {
            return Err(Error::Checkpoint("payload is not a whole number of f64 values".into()));
        }
        let mut read = |shape: &[usize]| -> Result<Tensor> {
            let n: usize = shape.iter().product();
            let mut data = Vec::with_capacity(n);
            for _ in 0..n {
                let chunk = payload.next().ok_or_else(|| Error::Checkpoint("truncated payload".into()))?;
                data.push(f64::from_le_bytes(chunk.try_into().expect("8 bytes")));
            }
            Tensor::new(shape.to_vec(), data)
        };
        let shapes: Vec<Vec<usize>> = header.params.iter().map(|e| e.shape.clone()).collect();
        for (slot, shape) in model.params_mut().tensors_mut().iter_mut().zip(&shapes) {
            *slot = read(shape)?;
        }
        let optimizer = match header.optimizer {
            Some(o) => {
                let m = shapes.iter().map(|s| read(s)).collect::<Result<Vec<_>>>()?;
                let v = shapes.iter().map(|s| read(s)).collect::<Result<Vec<_>>>()?;
                Some(AdamState {
                    step: o.step,
                    beta1: o.beta1,
                    beta2: o.beta2,
                    eps: o.eps,
                    m,
                    v,
                })
            }
            None => None,
        };
        if payload.next().is_some() {
            return Err(Error::Checkpoint("trailing payload data".into()));
        }
        Ok(Checkpoint {
            model,
            train_config: header.train_config,
            optimizer,
            rng: header.rng,
            best_val_nll: header.best_val_nll,
            standardization: header.standardization,
            data_source: header.data_source,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        let mut f = std::fs::File::create(path)?;
        f.write_all(&bytes)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Checkpoint::from_bytes(&std::fs::read(path)?)
    }
}
