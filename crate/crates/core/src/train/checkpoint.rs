//! Binary checkpoint files.
//!
//! Layout (all integers little-endian):
//!
//! | bytes | content |
//! |-------|---------|
//! | 8     | magic `APNETCKP` |
//! | 4     | format version (`u32`, currently 1) |
//! | 8     | header length `L` (`u64`) |
//! | L     | UTF-8 JSON header: `config`, `tensors` (name and `[n, c, h, w]` per tensor), `meta` |
//! | ...   | every tensor's values as `f32`, in header order |
//!
//! Tensors follow the model's canonical parameter order, ending with the
//! attention logits when the model has them.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Apnet, ApnetConfig, ApnetParams};
use crate::tensor::{Dims, Tensor4};

const MAGIC: &[u8; 8] = b"APNETCKP";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub preset: Option<String>,
    pub iteration: usize,
    pub class_names: Vec<String>,
    pub val_miou: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    dims: [usize; 4],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    config: ApnetConfig,
    tensors: Vec<TensorEntry>,
    meta: CheckpointMeta,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: Apnet<f32>,
    pub meta: CheckpointMeta,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let flat = self.model.params.to_flat();
        let header = Header {
            config: self.model.config.clone(),
            tensors: self
                .model
                .config
                .param_layout()
                .into_iter()
                .map(|s| TensorEntry {
                    name: s.name,
                    dims: [s.dims.n, s.dims.c, s.dims.h, s.dims.w],
                })
                .collect(),
            meta: self.meta.clone(),
        };
        let json = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::with_capacity(20 + json.len() + 4 * self.model.params.count());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for t in &flat {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], origin: &Path) -> Result<Self> {
        let bad = |m: String| Error::decode(origin, m);
        if bytes.len() < 20 || &bytes[..8] != MAGIC {
            return Err(bad("not a checkpoint (bad magic)".into()));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != VERSION {
            return Err(bad(format!("checkpoint version {version} unsupported (expected {VERSION})")));
        }
        let len = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
        let body = &bytes[20..];
        if body.len() < len {
            return Err(bad("truncated header".into()));
        }
        let header: Header = serde_json::from_slice(&body[..len]).map_err(|e| bad(format!("bad header: {e}")))?;
        header.config.validate()?;
        let layout = header.config.param_layout();
        let names_match = layout.len() == header.tensors.len()
            && layout
                .iter()
                .zip(&header.tensors)
                .all(|(s, t)| s.name == t.name && [s.dims.n, s.dims.c, s.dims.h, s.dims.w] == t.dims);
        if !names_match {
            return Err(bad("tensor table does not match the stored config".into()));
        }
        let mut payload = body[len..].chunks_exact(4);
        let expected: usize = header.tensors.iter().map(|t| t.dims.iter().product::<usize>()).sum();
        if payload.len() != expected || !payload.remainder().is_empty() {
            return Err(bad(format!(
                "payload holds {} bytes, expected {}",
                body.len() - len,
                4 * expected
            )));
        }
        let mut tensors = Vec::with_capacity(header.tensors.len());
        for t in &header.tensors {
            let [n, c, h, w] = t.dims;
            let dims = Dims::new(n, c, h, w);
            let data = payload
                .by_ref()
                .take(dims.len())
                .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
                .collect();
            tensors.push(Tensor4::from_vec(dims, data)?);
        }
        let params = ApnetParams::from_flat(&header.config, tensors)?;
        Ok(Checkpoint {
            model: Apnet::from_parts(header.config, params)?,
            meta: header.meta,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Checkpoint::from_bytes(&bytes, path)
    }
}
