//! Binary checkpoint container.
//!
//! Layout: the 8-byte magic `GEOSUPCK`, a little-endian `u32` format version,
//! a little-endian `u64` header length, a JSON header, then every tensor as
//! row-major little-endian `f32` in header order. The header echoes the model
//! and training configuration and indexes each tensor by name, shape and
//! element offset. Optimizer momentum is stored as the final tensor.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::{ModelConfig, TrainConfig};
use super::model::Model;
use super::optim::Sgd;
use crate::error::{Error, Result};
use crate::nn::Params;
use crate::scalar::Float;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"GEOSUPCK";
pub const CHECKPOINT_VERSION: u32 = 1;
const VELOCITY: &str = "optimizer.velocity";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl TensorEntry {
    fn len(&self) -> usize {
        self.shape.iter().product()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format_version: u32,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub class_names: Vec<String>,
    /// Epochs completed when the checkpoint was written.
    pub epoch: usize,
    pub tensors: Vec<TensorEntry>,
}

#[derive(Debug, Clone)]
pub struct Checkpoint<T> {
    pub model: Model<T>,
    pub optimizer: Sgd<T>,
    pub train: TrainConfig,
    pub class_names: Vec<String>,
    pub epoch: usize,
}

fn collect<T: Float>(model: &Model<T>, optimizer: &Sgd<T>) -> (Vec<TensorEntry>, Vec<f32>) {
    let mut entries = Vec::new();
    let mut data = Vec::new();
    let mut push = |name: &str, values: &[T], shape: &[usize]| {
        entries.push(TensorEntry {
            name: name.to_string(),
            shape: shape.to_vec(),
            offset: data.len(),
        });
        data.extend(values.iter().map(|v| v.to_f32_lossy()));
    };
    model.visit("", &mut push);
    model.encoder.visit_buffers(&mut push);
    push(VELOCITY, &optimizer.velocity, &[optimizer.velocity.len()]);
    (entries, data)
}

impl<T: Float> Checkpoint<T> {
    fn header_with(&self, tensors: Vec<TensorEntry>) -> CheckpointHeader {
        CheckpointHeader {
            format_version: CHECKPOINT_VERSION,
            model: self.model.config.clone(),
            train: self.train.clone(),
            class_names: self.class_names.clone(),
            epoch: self.epoch,
            tensors,
        }
    }

    pub fn header(&self) -> CheckpointHeader {
        self.header_with(collect(&self.model, &self.optimizer).0)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let (tensors, data) = collect(&self.model, &self.optimizer);
        let header = self.header_with(tensors);
        let json = serde_json::to_vec(&header)?;
        let mut out = Vec::with_capacity(20 + json.len() + 4 * data.len());
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for v in data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        Ok(out)
    }

    /// Writes through a temporary file in the same directory, then renames.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let bytes = self.to_bytes()?;
        let tmp = path.with_extension("tmp");
        let write = || -> std::io::Result<()> {
            let mut f = fs::File::create(&tmp)?;
            f.write_all(&bytes)?;
            f.sync_all()?;
            fs::rename(&tmp, path)
        };
        write().map_err(|e| Error::Checkpoint(format!("cannot write {}: {e}", path.display())))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::Checkpoint(format!("cannot read {}: {e}", path.display())))?;
        Self::from_bytes(&bytes)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |msg: &str| Error::Checkpoint(msg.to_string());
        if bytes.len() < 20 || &bytes[..8] != CHECKPOINT_MAGIC {
            return Err(bad("not a checkpoint file"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported checkpoint version {version}")));
        }
        let header_len = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
        let body = bytes.get(20..).ok_or_else(|| bad("truncated header"))?;
        if body.len() < header_len {
            return Err(bad("truncated header"));
        }
        let header: CheckpointHeader = serde_json::from_slice(&body[..header_len])?;
        let raw = &body[header_len..];
        if raw.len() % 4 != 0 {
            return Err(bad("tensor data is not a whole number of f32 values"));
        }
        let data: Vec<f32> = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();

        let mut index: BTreeMap<&str, &TensorEntry> = BTreeMap::new();
        for t in &header.tensors {
            if t.offset + t.len() > data.len() {
                return Err(Error::Checkpoint(format!("tensor {} runs past the end of the file", t.name)));
            }
            index.insert(&t.name, t);
        }
        let mut missing: Option<String> = None;
        let mut fill = |name: &str, values: &mut [T], shape: &[usize]| match index.get(name) {
            Some(t) if t.shape == shape => {
                for (v, &x) in values.iter_mut().zip(&data[t.offset..t.offset + t.len()]) {
                    *v = T::lit(x as f64);
                }
            }
            Some(t) => {
                missing.get_or_insert(format!("tensor {name} has shape {:?}, expected {shape:?}", t.shape));
            }
            None => {
                missing.get_or_insert(format!("tensor {name} is missing"));
            }
        };

        let mut model = Model::<T>::new(&header.model, 0)?;
        model.visit_mut("", &mut fill);
        model.encoder.visit_buffers_mut(&mut fill);
        let mut optimizer = Sgd::new(header.train.optimizer, model.num_params());
        let n = optimizer.velocity.len();
        fill(VELOCITY, &mut optimizer.velocity, &[n]);
        if let Some(msg) = missing {
            return Err(Error::Checkpoint(msg));
        }
        Ok(Checkpoint {
            model,
            optimizer,
            train: header.train,
            class_names: header.class_names,
            epoch: header.epoch,
        })
    }
}
