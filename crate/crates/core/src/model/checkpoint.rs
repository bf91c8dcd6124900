//! Binary checkpoint format.
//!
//! Layout: the 9-byte magic `ALAE-TOY\x01`, a little-endian `u32` manifest
//! length, the UTF-8 JSON manifest, then every tensor as packed
//! little-endian `f32` in manifest order.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ArchConfig, GenerativeAutoencoder, ModelMetadata, ModelMode};
use crate::error::{CheckpointError, Result};
use crate::nn::Parameters;
use crate::scalar::Scalar;

pub const CHECKPOINT_MAGIC: &[u8; 9] = b"ALAE-TOY\x01";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    dtype: String,
    shape: Vec<usize>,
    offset: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    format_version: u32,
    arch: ArchConfig,
    metadata: ModelMetadata,
    blob_bytes: usize,
    tensors: Vec<TensorEntry>,
}

pub fn encode_checkpoint<T: Scalar>(model: &GenerativeAutoencoder<T>) -> Result<Vec<u8>> {
    let params = model.named_params();
    let mut tensors = Vec::with_capacity(params.len());
    let mut offset = 0;
    for (name, t) in &params {
        tensors.push(TensorEntry {
            name: name.clone(),
            dtype: "f32".into(),
            shape: t.shape.clone(),
            offset,
        });
        offset += t.len() * 4;
    }
    let manifest = Manifest {
        format_version: CHECKPOINT_VERSION,
        arch: model.arch.clone(),
        metadata: model.metadata.clone(),
        blob_bytes: offset,
        tensors,
    };
    let json = serde_json::to_vec(&manifest)?;
    let mut out = Vec::with_capacity(CHECKPOINT_MAGIC.len() + 4 + json.len() + offset);
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for (_, t) in &params {
        for v in &t.data {
            out.extend_from_slice(&v.to_f32_bits().to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode_checkpoint<T: Scalar>(bytes: &[u8]) -> Result<GenerativeAutoencoder<T>> {
    if bytes.len() < CHECKPOINT_MAGIC.len() || &bytes[..CHECKPOINT_MAGIC.len()] != CHECKPOINT_MAGIC {
        return Err(CheckpointError::BadMagic.into());
    }
    let rest = &bytes[CHECKPOINT_MAGIC.len()..];
    if rest.len() < 4 {
        return Err(CheckpointError::Manifest("missing manifest length".into()).into());
    }
    let len = u32::from_le_bytes(rest[..4].try_into().unwrap()) as usize;
    let rest = &rest[4..];
    if rest.len() < len {
        return Err(CheckpointError::Manifest(format!(
            "manifest declares {len} bytes, only {} present",
            rest.len()
        ))
        .into());
    }
    let manifest: Manifest = serde_json::from_slice(&rest[..len])
        .map_err(|e| CheckpointError::Manifest(e.to_string()))?;
    if manifest.format_version != CHECKPOINT_VERSION {
        return Err(CheckpointError::VersionMismatch {
            found: manifest.format_version,
            supported: CHECKPOINT_VERSION,
        }
        .into());
    }
    let blob = &rest[len..];
    if blob.len() < manifest.blob_bytes {
        return Err(CheckpointError::Truncated {
            expected: manifest.blob_bytes,
            found: blob.len(),
        }
        .into());
    }

    let mut model = GenerativeAutoencoder::<T>::new(manifest.arch.clone(), 0)
        .map_err(|e| CheckpointError::Manifest(e.to_string()))?;
    model.metadata = manifest.metadata;
    model.mode = ModelMode::Eval;
    let entries: HashMap<&str, &TensorEntry> =
        manifest.tensors.iter().map(|e| (e.name.as_str(), e)).collect();
    for (name, t) in model.named_params_mut() {
        let entry = entries
            .get(name.as_str())
            .ok_or_else(|| CheckpointError::Manifest(format!("missing tensor {name}")))?;
        if entry.dtype != "f32" {
            return Err(CheckpointError::Manifest(format!("{name}: unsupported dtype {}", entry.dtype)).into());
        }
        if entry.shape != t.shape {
            return Err(CheckpointError::Manifest(format!(
                "{name}: shape {:?} does not match architecture {:?}",
                entry.shape, t.shape
            ))
            .into());
        }
        let end = entry.offset + t.len() * 4;
        if end > manifest.blob_bytes {
            return Err(CheckpointError::Truncated {
                expected: end,
                found: manifest.blob_bytes,
            }
            .into());
        }
        for (v, chunk) in t.data.iter_mut().zip(blob[entry.offset..end].chunks_exact(4)) {
            *v = T::from_f32_bits(u32::from_le_bytes(chunk.try_into().unwrap()));
        }
    }
    if entries.len() != model.named_params().len() {
        return Err(CheckpointError::Manifest("manifest lists unknown tensors".into()).into());
    }
    Ok(model)
}

pub fn save_checkpoint<T: Scalar>(model: &GenerativeAutoencoder<T>, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode_checkpoint(model)?)?;
    Ok(())
}

/// Loads a checkpoint; the returned model is in eval mode.
pub fn load_checkpoint<T: Scalar>(path: impl AsRef<Path>) -> Result<GenerativeAutoencoder<T>> {
    decode_checkpoint(&fs::read(path)?)
}
