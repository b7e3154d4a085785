//! Run-directory checkpoints: `manifest.json` plus one binary file per named
//! tensor. A tensor file is the magic `ACVT`, a little-endian `u32` rank, one
//! `u64` per dimension, then the values as little-endian `f32`.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Result, Stage, TrainError};
use crate::diffcore::Scalar;
use crate::models::{ModelConfig, ParameterStore, Variant};

pub const CHECKPOINT_FORMAT: u32 = 1;
pub const MANIFEST: &str = "manifest.json";
const MAGIC: &[u8; 4] = b"ACVT";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub file: String,
    pub shape: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub format_version: u32,
    pub variant: Variant,
    pub stage: Stage,
    pub iteration: usize,
    pub epoch: usize,
    pub config: ModelConfig,
    pub metrics: BTreeMap<String, f64>,
    pub tensors: Vec<TensorEntry>,
}

pub fn encode_tensor(shape: &[usize], values: impl Iterator<Item = f32>) -> Vec<u8> {
    let n: usize = shape.iter().product();
    let mut out = Vec::with_capacity(8 + 8 * shape.len() + 4 * n);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(shape.len() as u32).to_le_bytes());
    for &d in shape {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_tensor(bytes: &[u8]) -> std::result::Result<(Vec<usize>, Vec<f32>), String> {
    let take = |at: usize, len: usize| bytes.get(at..at + len).ok_or_else(|| "truncated tensor file".to_string());
    if take(0, 4)? != MAGIC {
        return Err("bad tensor magic".into());
    }
    let rank = u32::from_le_bytes(take(4, 4)?.try_into().unwrap()) as usize;
    let mut shape = Vec::with_capacity(rank);
    for i in 0..rank {
        shape.push(u64::from_le_bytes(take(8 + 8 * i, 8)?.try_into().unwrap()) as usize);
    }
    let start = 8 + 8 * rank;
    let n: usize = shape.iter().product();
    let body = take(start, 4 * n)?;
    if bytes.len() != start + 4 * n {
        return Err("trailing bytes in tensor file".into());
    }
    Ok((shape, body.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect()))
}

/// Writes every parameter and batch-norm buffer of `store` into `dir`.
pub fn save_checkpoint<F: Scalar>(
    store: &ParameterStore<F>,
    dir: &Path,
    stage: Stage,
    iteration: usize,
    epoch: usize,
    metrics: BTreeMap<String, f64>,
) -> Result<CheckpointManifest> {
    fs::create_dir_all(dir)?;
    let mut tensors = Vec::new();
    for (name, t) in store.named_parameters().into_iter().chain(store.named_buffers()) {
        let file = format!("{name}.bin");
        let bytes = encode_tensor(t.shape(), t.iter().map(|v| v.to_f32().unwrap()));
        fs::write(dir.join(&file), bytes)?;
        tensors.push(TensorEntry { name, file, shape: t.shape().to_vec() });
    }
    let manifest = CheckpointManifest {
        format_version: CHECKPOINT_FORMAT,
        variant: store.config.variant,
        stage,
        iteration,
        epoch,
        config: store.config,
        metrics,
        tensors,
    };
    fs::write(dir.join(MANIFEST), serde_json::to_vec_pretty(&manifest)?)?;
    Ok(manifest)
}

pub fn read_manifest(dir: &Path) -> Result<CheckpointManifest> {
    let path = dir.join(MANIFEST);
    let raw = fs::read(&path).map_err(|e| TrainError::State(format!("no checkpoint at {}: {e}", dir.display())))?;
    let m: CheckpointManifest = serde_json::from_slice(&raw)?;
    if m.format_version != CHECKPOINT_FORMAT {
        return Err(TrainError::State(format!("checkpoint format {} unsupported", m.format_version)));
    }
    Ok(m)
}

/// Rebuilds the store from its manifest config and fills every tensor.
pub fn load_checkpoint<F: Scalar>(dir: &Path) -> Result<(ParameterStore<F>, CheckpointManifest)> {
    let manifest = read_manifest(dir)?;
    let mut store = ParameterStore::<F>::new(&manifest.config)?;
    let entries: BTreeMap<&str, &TensorEntry> = manifest.tensors.iter().map(|e| (e.name.as_str(), e)).collect();
    for (name, mut t) in store.named_tensors_mut() {
        let entry = entries.get(name.as_str()).ok_or_else(|| TrainError::State(format!("checkpoint lacks {name}")))?;
        let path = dir.join(&entry.file);
        let bytes = fs::read(&path).map_err(|e| TrainError::State(format!("{}: {e}", path.display())))?;
        let (shape, values) = decode_tensor(&bytes).map_err(|e| TrainError::State(format!("{}: {e}", path.display())))?;
        if shape != t.shape() {
            return Err(TrainError::State(format!("{name}: stored shape {shape:?}, expected {:?}", t.shape())));
        }
        t.iter_mut().zip(values).for_each(|(d, v)| *d = F::lit(v as f64));
    }
    Ok((store, manifest))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tensor_round_trip() {
        let bytes = encode_tensor(&[2, 3], (0..6).map(|v| v as f32 * 0.5));
        let (shape, values) = decode_tensor(&bytes).unwrap();
        assert_eq!(shape, vec![2, 3]);
        assert_eq!(values, vec![0.0, 0.5, 1.0, 1.5, 2.0, 2.5]);
        assert!(decode_tensor(&bytes[..bytes.len() - 1]).is_err());
        assert!(decode_tensor(b"NOPE").is_err());
    }
}
