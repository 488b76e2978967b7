//! Single-file checkpoints: magic, format version, a JSON header with the
//! full configuration and tensor table, then little-endian `f32` payloads.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::TrainConfig;
use crate::error::{NnError, Result};
use crate::model::Network;
use crate::optim::Adam;
use crate::params::{ParamKind, ParamStore};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"AUDCKPT\0";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    buffer: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    config: TrainConfig,
    step: usize,
    tensors: Vec<TensorEntry>,
    /// Adam step count when moments follow the weights.
    adam_step: Option<u64>,
    best_f1: Option<f64>,
}

/// Model weights with the configuration that produced them.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub step: usize,
    pub store: ParamStore,
    pub optimizer: Option<Adam>,
    pub best_f1: Option<f64>,
}

fn write_f32s(out: &mut Vec<u8>, data: &[f32]) {
    for v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

impl Checkpoint {
    /// Builds a network for the stored configuration and fills in the weights.
    pub fn network(&self) -> Network {
        Network::new(self.config.net(), self.config.rng_seed).0
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = Header {
            config: self.config.clone(),
            step: self.step,
            tensors: self
                .store
                .entries
                .iter()
                .map(|e| TensorEntry {
                    name: e.name.clone(),
                    shape: e.tensor.shape.clone(),
                    buffer: e.kind == ParamKind::Buffer,
                })
                .collect(),
            adam_step: self.optimizer.as_ref().map(|o| o.step),
            best_f1: self.best_f1,
        };
        let json = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for e in &self.store.entries {
            write_f32s(&mut out, &e.tensor.data);
        }
        if let Some(opt) = &self.optimizer {
            for id in self.store.trainable() {
                write_f32s(&mut out, &opt.m[id].data);
                write_f32s(&mut out, &opt.v[id].data);
            }
        }
        out
    }

    /// Writes to a sibling temporary file and renames it into place.
    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("tmp");
        let write = || -> std::io::Result<()> {
            let mut f = std::fs::File::create(&tmp)?;
            f.write_all(&self.to_bytes())?;
            f.sync_all()?;
            std::fs::rename(&tmp, path)
        };
        write().map_err(|e| {
            let _ = std::fs::remove_file(&tmp);
            NnError::io(path, e)
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| NnError::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|m| NnError::checkpoint(path, m))
    }

    pub fn from_bytes(bytes: &[u8]) -> std::result::Result<Self, String> {
        if bytes.len() < 20 || &bytes[..8] != MAGIC {
            return Err("not a checkpoint file".into());
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != FORMAT_VERSION {
            return Err(format!("format version {version}, expected {FORMAT_VERSION}"));
        }
        let hlen = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
        let body = bytes.get(20..20 + hlen).ok_or("truncated header")?;
        let header: Header = serde_json::from_slice(body).map_err(|e| format!("header: {e}"))?;
        header.config.validate().map_err(|e| e.to_string())?;
        let mut at = 20 + hlen;
        let mut read = |n: usize| -> std::result::Result<Vec<f32>, String> {
            let raw = bytes.get(at..at + 4 * n).ok_or("truncated tensor data")?;
            at += 4 * n;
            Ok(raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect())
        };

        let (_, mut store) = Network::new(header.config.net(), header.config.rng_seed);
        if store.len() != header.tensors.len() {
            return Err(format!(
                "architecture mismatch: {} tensors stored, configuration builds {}",
                header.tensors.len(),
                store.len()
            ));
        }
        for (entry, stored) in store.entries.iter_mut().zip(&header.tensors) {
            if entry.name != stored.name || entry.tensor.shape != stored.shape {
                return Err(format!(
                    "architecture mismatch at {} {:?} (stored {} {:?})",
                    entry.name, entry.tensor.shape, stored.name, stored.shape
                ));
            }
            let data = read(entry.tensor.len())?;
            entry.tensor = Tensor::from_vec(&stored.shape, data);
        }
        let optimizer = match header.adam_step {
            Some(step) => {
                let c = &header.config;
                let mut opt = Adam::new(&store, c.learning_rate, c.adam_beta1, c.adam_beta2, c.adam_eps);
                opt.step = step;
                for id in store.trainable().collect::<Vec<_>>() {
                    let n = store.get(id).len();
                    opt.m[id].data = read(n)?;
                    opt.v[id].data = read(n)?;
                }
                Some(opt)
            }
            None => None,
        };
        if at != bytes.len() {
            return Err("trailing bytes after tensor data".into());
        }
        Ok(Self {
            config: header.config,
            step: header.step,
            store,
            optimizer,
            best_f1: header.best_f1,
        })
    }

    /// Fails unless the stored architecture equals the one `config` builds.
    pub fn check_compatible(&self, config: &TrainConfig, path: &Path) -> Result<()> {
        if self.config.net() != config.net() {
            return Err(NnError::checkpoint(
                path,
                format!(
                    "architecture mismatch: checkpoint {:?}, requested {:?}",
                    self.config.net(),
                    config.net()
                ),
            ));
        }
        Ok(())
    }
}
