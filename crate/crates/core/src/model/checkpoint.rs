//! Checkpoint container.
//!
//! ```text
//! magic        8 bytes   "CQLCKPT\0"
//! version      u32 LE    currently 1
//! header_len   u64 LE    length of the JSON header in bytes
//! header       JSON      {"config": ModelConfig, "vocab": Vocab,
//!                         "tensors": [{"name", "rows", "cols"}, ...],
//!                         "metadata": {...}}
//! data         f64 LE    each tensor in header order, row-major
//! ```

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::network::{Model, ModelConfig};
use super::params::ParamStore;
use super::vocab::Vocab;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"CQLCKPT\0";
pub const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    rows: usize,
    cols: usize,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    vocab: Vocab,
    tensors: Vec<TensorEntry>,
    #[serde(default)]
    metadata: serde_json::Value,
}

pub fn to_bytes(model: &Model, metadata: serde_json::Value) -> Result<Vec<u8>> {
    let header = Header {
        config: model.config.clone(),
        vocab: model.vocab.clone(),
        tensors: model
            .params
            .iter()
            .map(|(name, t)| TensorEntry {
                name: name.to_string(),
                rows: t.nrows(),
                cols: t.ncols(),
            })
            .collect(),
        metadata,
    };
    let json = serde_json::to_vec(&header)?;
    let mut out = Vec::with_capacity(20 + json.len() + model.params.n_scalars() * 8);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for (_, t) in model.params.iter() {
        for v in t.iter() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

/// Parses a checkpoint, returning the model and its metadata.
pub fn from_bytes(bytes: &[u8]) -> Result<(Model, serde_json::Value)> {
    let bad = |m: &str| Error::Checkpoint(m.to_string());
    let mut r = bytes;
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(|_| bad("truncated magic"))?;
    if &magic != MAGIC {
        return Err(bad("not a checkpoint (bad magic)"));
    }
    let mut u32b = [0u8; 4];
    r.read_exact(&mut u32b).map_err(|_| bad("truncated version"))?;
    let version = u32::from_le_bytes(u32b);
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let mut u64b = [0u8; 8];
    r.read_exact(&mut u64b).map_err(|_| bad("truncated header length"))?;
    let header_len = u64::from_le_bytes(u64b) as usize;
    if r.len() < header_len {
        return Err(bad("truncated header"));
    }
    let (json, mut data) = r.split_at(header_len);
    let mut header: Header = serde_json::from_slice(json)?;
    header.vocab.reindex();
    if header.config.vocab_size != header.vocab.size() {
        return Err(bad("vocabulary size does not match config"));
    }
    header.config.validate()?;
    let mut params = ParamStore::default();
    for e in &header.tensors {
        let n = e.rows * e.cols;
        if data.len() < n * 8 {
            return Err(Error::Checkpoint(format!("tensor {} truncated", e.name)));
        }
        let (chunk, rest) = data.split_at(n * 8);
        let values: Vec<f64> = chunk
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().expect("8-byte chunk")))
            .collect();
        params.insert(
            e.name.clone(),
            Array2::from_shape_vec((e.rows, e.cols), values).expect("shape matches length"),
        );
        data = rest;
    }
    if !data.is_empty() {
        return Err(bad("trailing bytes after tensors"));
    }
    let model = Model {
        config: header.config,
        vocab: header.vocab,
        params,
    };
    // The expected layout must match what the config would build.
    let reference = Model::new(model.config.clone(), model.vocab.clone())?;
    for (name, t) in reference.params.iter() {
        match model.params.by_name(name) {
            Some(p) if p.dim() == t.dim() => {}
            Some(_) => return Err(Error::Checkpoint(format!("tensor {name} has the wrong shape"))),
            None => return Err(Error::Checkpoint(format!("tensor {name} missing"))),
        }
    }
    if reference.params.len() != model.params.len() {
        return Err(bad("unexpected extra tensors"));
    }
    Ok((model, header.metadata))
}

pub fn save(model: &Model, path: impl AsRef<Path>, metadata: serde_json::Value) -> Result<()> {
    let path = path.as_ref();
    let bytes = to_bytes(model, metadata)?;
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))
}

pub fn load(path: impl AsRef<Path>) -> Result<(Model, serde_json::Value)> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes)
}
