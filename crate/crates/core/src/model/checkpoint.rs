//! Versioned binary checkpoint container.
//!
//! Layout: 4-byte magic `SMCK`, little-endian u32 header length, JSON header
//! (format version, endianness tag, model config, input arity, iteration,
//! seed, named tensor shapes in order), then every tensor as little-endian
//! 32-bit floats in header order.

use serde::{Deserialize, Serialize};
use std::path::Path;

use super::net::{Model, ModelConfig};
use crate::error::{Error, Result};
use crate::io::atomic_write;

pub const CKPT_MAGIC: &[u8; 4] = b"SMCK";
pub const CKPT_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TensorInfo {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CkptHeader {
    format_version: u32,
    endian: String,
    model: ModelConfig,
    rim_enabled: bool,
    iteration: usize,
    seed: u64,
    tensors: Vec<TensorInfo>,
}

/// Training-state metadata stored alongside the weights.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointMeta {
    pub iteration: usize,
    pub seed: u64,
}

pub fn checkpoint_to_bytes(model: &Model, iteration: usize, seed: u64) -> Result<Vec<u8>> {
    let tensors: Vec<TensorInfo> = model
        .tensor_shapes()
        .into_iter()
        .map(|(name, shape)| TensorInfo { name, shape })
        .collect();
    let header = CkptHeader {
        format_version: CKPT_FORMAT_VERSION,
        endian: "little".into(),
        model: model.cfg.clone(),
        rim_enabled: model.rim_enabled(),
        iteration,
        seed,
        tensors,
    };
    let header_json = serde_json::to_vec(&header)?;
    let flat = model.to_flat();
    let mut out = Vec::with_capacity(8 + header_json.len() + flat.len() * 4);
    out.extend_from_slice(CKPT_MAGIC);
    out.extend_from_slice(&(header_json.len() as u32).to_le_bytes());
    out.extend_from_slice(&header_json);
    for v in flat {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    Ok(out)
}

pub fn checkpoint_from_bytes(bytes: &[u8]) -> Result<(Model, CheckpointMeta)> {
    if bytes.len() < 8 || &bytes[0..4] != CKPT_MAGIC {
        return Err(Error::Format("not a checkpoint file (bad magic)".into()));
    }
    let header_len = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    if bytes.len() < 8 + header_len {
        return Err(Error::Format("truncated checkpoint header".into()));
    }
    let header: CkptHeader = serde_json::from_slice(&bytes[8..8 + header_len])?;
    if header.format_version != CKPT_FORMAT_VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {}", header.format_version)));
    }
    if header.endian != "little" {
        return Err(Error::Format(format!("unsupported endianness tag '{}'", header.endian)));
    }
    let mut model = Model::init(&header.model, header.rim_enabled)?;
    let expected = model.tensor_shapes();
    if expected.len() != header.tensors.len() {
        return Err(Error::Format("checkpoint tensor list does not match the model".into()));
    }
    for ((name, shape), info) in expected.iter().zip(header.tensors.iter()) {
        if name != &info.name || shape != &info.shape {
            return Err(Error::Format(format!(
                "checkpoint tensor mismatch: expected {name} {shape:?}, found {} {:?}",
                info.name, info.shape
            )));
        }
    }
    let count = model.param_count();
    let payload = &bytes[8 + header_len..];
    if payload.len() != count * 4 {
        return Err(Error::Format(format!(
            "truncated checkpoint payload: {} bytes for {count} f32 parameters",
            payload.len()
        )));
    }
    let mut flat = Vec::with_capacity(count);
    for i in 0..count {
        let v = f32::from_le_bytes(payload[i * 4..i * 4 + 4].try_into().unwrap());
        flat.push(v as f64);
    }
    model.from_flat(&flat);
    Ok((model, CheckpointMeta { iteration: header.iteration, seed: header.seed }))
}

pub fn save_checkpoint(model: &Model, iteration: usize, seed: u64, path: &Path) -> Result<()> {
    atomic_write(path, &checkpoint_to_bytes(model, iteration, seed)?)
}

pub fn load_checkpoint(path: &Path) -> Result<(Model, CheckpointMeta)> {
    checkpoint_from_bytes(&std::fs::read(path)?)
}
