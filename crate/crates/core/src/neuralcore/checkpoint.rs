//! Versioned network checkpoints.
//!
//! Binary layout, little-endian:
//!
//! ```text
//! magic     4 bytes  "CFNN"
//! version   u32      1
//! meta_len  u64      length of the UTF-8 JSON header that follows
//! meta      JSON     CheckpointMeta (tags plus one MlpArch per network)
//! n_params  u64
//! params    n_params × f64, the networks' state vectors concatenated in
//!           header order
//! ```
//!
//! A network's state vector lists, per hidden block, the weight matrix
//! (row-major, out × in), bias, then γ, β, running mean and running variance
//! when batch-norm is enabled; the output layer's weight and bias come last.
//! The JSON mirror holds the same header plus the parameter array.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::mlp::{Mlp, MlpArch};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"CFNN";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkEntry {
    pub name: String,
    pub arch: MlpArch,
    pub activations: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub version: u32,
    /// Free-form provenance tags (method, training seed, φ policy, ...).
    pub tags: BTreeMap<String, String>,
    pub networks: Vec<NetworkEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub networks: Vec<Mlp>,
}

#[derive(Serialize, Deserialize)]
struct JsonCheckpoint {
    meta: CheckpointMeta,
    params: Vec<f64>,
}

impl Checkpoint {
    pub fn new(tags: BTreeMap<String, String>, named: Vec<(String, Mlp)>) -> Self {
        let networks_meta = named
            .iter()
            .map(|(name, net)| NetworkEntry {
                name: name.clone(),
                arch: net.arch().clone(),
                activations: net.arch().activation_tags(),
            })
            .collect();
        Self {
            meta: CheckpointMeta {
                version: VERSION,
                tags,
                networks: networks_meta,
            },
            networks: named.into_iter().map(|(_, n)| n).collect(),
        }
    }

    pub fn network(&self, name: &str) -> Option<&Mlp> {
        self.meta
            .networks
            .iter()
            .position(|e| e.name == name)
            .map(|i| &self.networks[i])
    }

    fn params(&self) -> Vec<f64> {
        self.networks.iter().flat_map(|n| n.state_vec()).collect()
    }

    fn rebuild(meta: CheckpointMeta, params: &[f64]) -> std::result::Result<Self, String> {
        if meta.version != VERSION {
            return Err(format!("unsupported checkpoint version {}", meta.version));
        }
        let expected: usize = meta.networks.iter().map(|e| Mlp::state_len(&e.arch)).sum();
        if params.len() != expected {
            return Err(format!("{} parameters, header describes {expected}", params.len()));
        }
        let mut pos = 0;
        let mut networks = Vec::with_capacity(meta.networks.len());
        for e in &meta.networks {
            let n = Mlp::state_len(&e.arch);
            networks.push(Mlp::from_state(e.arch.clone(), &params[pos..pos + n]).map_err(|e| e.to_string())?);
            pos += n;
        }
        Ok(Self { meta, networks })
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let meta = serde_json::to_vec(&self.meta)?;
        let params = self.params();
        let mut out = Vec::with_capacity(24 + meta.len() + params.len() * 8);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(meta.len() as u64).to_le_bytes());
        out.extend_from_slice(&meta);
        out.extend_from_slice(&(params.len() as u64).to_le_bytes());
        for p in params {
            out.extend_from_slice(&p.to_le_bytes());
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> std::result::Result<Self, String> {
        let take = |pos: usize, n: usize| bytes.get(pos..pos + n).ok_or_else(|| "truncated checkpoint".to_string());
        if take(0, 4)? != MAGIC {
            return Err("bad magic".into());
        }
        let version = u32::from_le_bytes(take(4, 4)?.try_into().unwrap());
        if version != VERSION {
            return Err(format!("unsupported checkpoint version {version}"));
        }
        let meta_len = u64::from_le_bytes(take(8, 8)?.try_into().unwrap()) as usize;
        let meta: CheckpointMeta = serde_json::from_slice(take(16, meta_len)?).map_err(|e| e.to_string())?;
        let mut pos = 16 + meta_len;
        let n = u64::from_le_bytes(take(pos, 8)?.try_into().unwrap()) as usize;
        pos += 8;
        if bytes.len() != pos + n * 8 {
            return Err("parameter block length mismatch".into());
        }
        let params: Vec<f64> = bytes[pos..]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Self::rebuild(meta, &params)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&JsonCheckpoint {
            meta: self.meta.clone(),
            params: self.params(),
        })?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: JsonCheckpoint = serde_json::from_str(text)?;
        Self::rebuild(doc.meta, &doc.params).map_err(Error::InvalidInput)
    }

    /// Writes the binary file and a `.json` mirror next to it.
    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))?;
        let mirror = path.with_extension("json");
        fs::write(&mirror, self.to_json()?).map_err(|e| Error::io(&mirror, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|reason| Error::Format {
            path: path.to_path_buf(),
            reason,
        })
    }
}
