//! Checkpoint directory: `manifest.json` + one little-endian float32 blob.
//!
//! The manifest lists every array by stable name with shape and byte offset;
//! optimizer moments ride along as `adam_m/…` and `adam_v/…` entries so a
//! run can resume. Loading rejects unknown names and shape mismatches.
//! No timestamps or absolute paths are written — identical runs produce
//! byte-identical checkpoints.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ModelConfig, ModelParams};
use crate::tensor::Tensor;
use crate::training::AdamMoments;

const BLOB_NAME: &str = "params.f32";
const MANIFEST_NAME: &str = "manifest.json";

#[derive(Debug, Serialize, Deserialize)]
struct Entry {
    name: String,
    shape: Vec<usize>,
    offset: u64,
    len: usize,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq)]
pub struct CheckpointMeta {
    pub step: u64,
    pub epochs_done: usize,
    pub seed: u64,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    config: ModelConfig,
    train: CheckpointMeta,
    entries: Vec<Entry>,
}

pub struct Checkpoint {
    pub params: ModelParams,
    pub moments: Option<AdamMoments>,
    pub meta: CheckpointMeta,
}

fn push_tensor(blob: &mut Vec<u8>, entries: &mut Vec<Entry>, name: String, tensor: &Tensor) {
    let offset = blob.len() as u64;
    for &v in tensor.data() {
        blob.extend_from_slice(&(v as f32).to_le_bytes());
    }
    entries.push(Entry { name, shape: tensor.shape().to_vec(), offset, len: tensor.numel() });
}

pub fn save_checkpoint(
    dir: &Path,
    params: &ModelParams,
    moments: Option<&AdamMoments>,
    meta: &CheckpointMeta,
) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut blob = Vec::new();
    let mut entries = Vec::new();
    for (name, tensor) in params.iter() {
        push_tensor(&mut blob, &mut entries, name.to_string(), tensor);
    }
    if let Some(moments) = moments {
        for (name, tensor) in moments.m.iter() {
            push_tensor(&mut blob, &mut entries, format!("adam_m/{name}"), tensor);
        }
        for (name, tensor) in moments.v.iter() {
            push_tensor(&mut blob, &mut entries, format!("adam_v/{name}"), tensor);
        }
    }
    let manifest = Manifest { config: params.config().clone(), train: *meta, entries };
    fs::write(dir.join(MANIFEST_NAME), serde_json::to_vec_pretty(&manifest)?)?;
    fs::write(dir.join(BLOB_NAME), blob)?;
    Ok(())
}

fn read_into(tensor: &mut Tensor, entry: &Entry, blob: &[u8]) -> Result<()> {
    if entry.shape != tensor.shape() {
        return Err(Error::ShapeMismatch {
            name: entry.name.clone(),
            expected: tensor.shape().to_vec(),
            got: entry.shape.clone(),
        });
    }
    let start = entry.offset as usize;
    let end = start + entry.len * 4;
    if entry.len != tensor.numel() || end > blob.len() {
        return Err(Error::Checkpoint(format!("entry `{}` overruns the blob", entry.name)));
    }
    for (v, bytes) in tensor.data_mut().iter_mut().zip(blob[start..end].chunks_exact(4)) {
        *v = f32::from_le_bytes(bytes.try_into().unwrap()) as f64;
    }
    Ok(())
}

pub fn load_checkpoint(dir: &Path) -> Result<Checkpoint> {
    let manifest: Manifest = serde_json::from_slice(&fs::read(dir.join(MANIFEST_NAME))?)?;
    let blob = fs::read(dir.join(BLOB_NAME))?;
    let mut params = ModelParams::init(&manifest.config, 0)?;

    let mut param_entries = std::collections::HashMap::new();
    let mut m_entries = std::collections::HashMap::new();
    let mut v_entries = std::collections::HashMap::new();
    for entry in &manifest.entries {
        if let Some(name) = entry.name.strip_prefix("adam_m/") {
            m_entries.insert(name.to_string(), entry);
        } else if let Some(name) = entry.name.strip_prefix("adam_v/") {
            v_entries.insert(name.to_string(), entry);
        } else {
            param_entries.insert(entry.name.clone(), entry);
        }
    }

    for (name, tensor) in params.iter_mut() {
        let entry = param_entries
            .remove(name)
            .ok_or_else(|| Error::Checkpoint(format!("missing parameter `{name}`")))?;
        read_into(tensor, entry, &blob)?;
    }
    if let Some(stray) = param_entries.keys().next() {
        return Err(Error::Checkpoint(format!("unknown parameter `{stray}`")));
    }

    let moments = if m_entries.is_empty() && v_entries.is_empty() {
        None
    } else {
        let mut moments = AdamMoments::zeros_like(&params);
        for (name, tensor) in moments.m.iter_mut() {
            let entry = m_entries
                .remove(name.as_str())
                .ok_or_else(|| Error::Checkpoint(format!("missing moment `adam_m/{name}`")))?;
            read_into(tensor, entry, &blob)?;
        }
        for (name, tensor) in moments.v.iter_mut() {
            let entry = v_entries
                .remove(name.as_str())
                .ok_or_else(|| Error::Checkpoint(format!("missing moment `adam_v/{name}`")))?;
            read_into(tensor, entry, &blob)?;
        }
        Some(moments)
    };
    Ok(Checkpoint { params, moments, meta: manifest.train })
}
