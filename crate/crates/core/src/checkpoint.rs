//! Versioned binary checkpoints: magic, format version, a JSON header with
//! model metadata and the tensor table, then little-endian `f32` data in
//! table order. Header keys are sorted, so save → load → save is
//! byte-identical.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{ParamStore, Tensor};

const MAGIC: &[u8; 8] = b"DOCTRCKP";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    trainable: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Header {
    kind: String,
    meta: serde_json::Value,
    tensors: Vec<TensorEntry>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    /// Model family, e.g. `unet` or `transformer`.
    pub kind: String,
    pub meta: serde_json::Value,
    pub params: ParamStore,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let tensors = self
            .params
            .ids()
            .map(|id| TensorEntry {
                name: self.params.name(id).to_string(),
                shape: self.params.get(id).shape().to_vec(),
                trainable: self.params.is_trainable(id),
            })
            .collect();
        let header = Header { kind: self.kind.clone(), meta: self.meta.clone(), tensors };
        let json = serde_json::to_vec(&header)?;
        let numel: usize = self.params.ids().map(|id| self.params.get(id).numel()).sum();
        let mut out = Vec::with_capacity(MAGIC.len() + 12 + json.len() + 4 * numel);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for id in self.params.ids() {
            for v in self.params.get(id).data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8], origin: &Path) -> Result<Self> {
        let bad = |msg: &str| Error::format(origin, msg.to_string());
        if bytes.len() < MAGIC.len() + 12 || &bytes[..MAGIC.len()] != MAGIC {
            return Err(bad("not a checkpoint file"));
        }
        let mut at = MAGIC.len();
        let version = u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap());
        if version != FORMAT_VERSION {
            return Err(bad(&format!("unsupported checkpoint version {version}")));
        }
        at += 4;
        let hlen = u64::from_le_bytes(bytes[at..at + 8].try_into().unwrap()) as usize;
        at += 8;
        let hend = at.checked_add(hlen).filter(|&e| e <= bytes.len()).ok_or_else(|| bad("truncated header"))?;
        let header: Header = serde_json::from_slice(&bytes[at..hend]).map_err(|e| bad(&e.to_string()))?;
        at = hend;
        let mut params = ParamStore::new();
        for t in header.tensors {
            let n: usize = t.shape.iter().product();
            let end = at.checked_add(4 * n).filter(|&e| e <= bytes.len()).ok_or_else(|| bad("truncated tensor data"))?;
            let data = bytes[at..end].chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
            at = end;
            let value = Tensor::new(&t.shape, data);
            if t.trainable {
                params.add(t.name, value);
            } else {
                params.add_buffer(t.name, value);
            }
        }
        if at != bytes.len() {
            return Err(bad("trailing bytes after tensor data"));
        }
        Ok(Checkpoint { kind: header.kind, meta: header.meta, params })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }

    /// Fails unless the checkpoint holds a model of the given family.
    pub fn expect_kind(&self, kind: &str, origin: &Path) -> Result<()> {
        if self.kind != kind {
            return Err(Error::format(origin, format!("expected a {kind} checkpoint, found {}", self.kind)));
        }
        Ok(())
    }
}
