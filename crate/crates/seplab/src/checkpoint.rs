//! Model checkpoints: a JSON header (config echo and tensor table) followed by
//! raw little-endian `f64` data, so parameters round-trip bit for bit.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use seplab_core::models::{build_model, ModelConfig, SeparationModel};
use seplab_core::Matrix;

use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"SEPLABCK";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    rows: usize,
    cols: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    init_seed: u64,
    root_seed: u64,
    tensors: Vec<TensorEntry>,
}

/// Metadata stored next to the parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CheckpointMeta {
    pub init_seed: u64,
    pub root_seed: u64,
}

pub fn encode_checkpoint(model: &SeparationModel, meta: CheckpointMeta) -> Vec<u8> {
    let tensors = model
        .store
        .iter()
        .map(|(name, m)| TensorEntry { name: name.to_string(), rows: m.rows(), cols: m.cols() })
        .collect();
    let header = Header { config: model.config.clone(), init_seed: meta.init_seed, root_seed: meta.root_seed, tensors };
    let json = serde_json::to_vec(&header).expect("checkpoint header serialises");
    let mut out = Vec::with_capacity(20 + json.len() + 8 * model.store.count_scalars());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for (_, m) in model.store.iter() {
        for v in m.as_slice() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn decode_checkpoint(bytes: &[u8], origin: &Path) -> Result<(SeparationModel, CheckpointMeta)> {
    let bad = |msg: &str| Error::format(origin, format!("checkpoint: {msg}"));
    if bytes.len() < 20 || &bytes[..8] != MAGIC {
        return Err(bad("missing magic"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(bad(&format!("unsupported version {version}")));
    }
    let header_len = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
    let body = 20usize.checked_add(header_len).filter(|&e| e <= bytes.len()).ok_or_else(|| bad("truncated header"))?;
    let header: Header = serde_json::from_slice(&bytes[20..body]).map_err(|e| bad(&e.to_string()))?;
    let mut model = build_model(&header.config, header.init_seed)?;
    if header.tensors.len() != model.store.len() {
        return Err(bad(&format!("{} tensors stored, model has {}", header.tensors.len(), model.store.len())));
    }
    let mut data = bytes[body..].chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")));
    for t in &header.tensors {
        let values: Vec<f64> = data.by_ref().take(t.rows * t.cols).collect();
        if values.len() != t.rows * t.cols {
            return Err(bad("truncated tensor data"));
        }
        model.store.assign(&t.name, Matrix::from_vec(t.rows, t.cols, values))?;
    }
    if data.next().is_some() || !(bytes.len() - body).is_multiple_of(8) {
        return Err(bad("trailing data"));
    }
    Ok((model, CheckpointMeta { init_seed: header.init_seed, root_seed: header.root_seed }))
}

pub fn save_checkpoint(path: &Path, model: &SeparationModel, meta: CheckpointMeta) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, encode_checkpoint(model, meta)).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<(SeparationModel, CheckpointMeta)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes, path)
}
