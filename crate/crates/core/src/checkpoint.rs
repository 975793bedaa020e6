//! Parameter checkpoints.
//!
//! Layout (little-endian): magic `MADP`, version u32, manifest length u64,
//! manifest JSON, then every tensor's f64 payload in manifest order. The
//! manifest holds the architecture, whether the compression head is present,
//! and each tensor's name and shape.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::primitives::{ArchitectureSpec, Model};

pub const MAGIC: &[u8; 4] = b"MADP";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub arch: ArchitectureSpec,
    pub head: bool,
    pub tensors: Vec<TensorEntry>,
}

pub fn encode(model: &Model, params: &[f64]) -> Result<Vec<u8>> {
    if params.len() != model.param_count() {
        return Err(Error::shape(format!("{} parameters for a model of {}", params.len(), model.param_count())));
    }
    let manifest = CheckpointManifest {
        arch: model.arch.clone(),
        head: model.has_head(),
        tensors: model.param_specs().iter().map(|s| TensorEntry { name: s.name.clone(), shape: s.shape.clone() }).collect(),
    };
    let json = serde_json::to_vec(&manifest)?;
    let mut out = Vec::with_capacity(16 + json.len() + 8 * params.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for v in params {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

/// Rebuilds the model and its parameters. The tensor table must match the
/// model the architecture describes.
pub fn decode(buf: &[u8]) -> Result<(Model, Vec<f64>)> {
    let take = |at: usize, n: usize, what: &'static str| {
        buf.get(at..at + n).ok_or(Error::Truncated { what, expected: at + n - buf.len().min(at + n) })
    };
    if take(0, 4, "magic")? != MAGIC {
        return Err(Error::Format("not a parameter checkpoint".into()));
    }
    let version = u32::from_le_bytes(take(4, 4, "version")?.try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(Error::Version { found: version, expected: VERSION });
    }
    let len = u64::from_le_bytes(take(8, 8, "manifest length")?.try_into().expect("8 bytes")) as usize;
    let manifest: CheckpointManifest = serde_json::from_slice(take(16, len, "manifest")?)?;
    let model = Model::new(&manifest.arch, manifest.head)?;
    let expected: Vec<TensorEntry> =
        model.param_specs().iter().map(|s| TensorEntry { name: s.name.clone(), shape: s.shape.clone() }).collect();
    if expected != manifest.tensors {
        return Err(Error::Format("tensor table does not match the architecture".into()));
    }
    let n = model.param_count();
    let body = take(16 + len, 8 * n, "parameters")?;
    if buf.len() != 16 + len + 8 * n {
        return Err(Error::Format("trailing bytes after the parameters".into()));
    }
    let params = body.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
    Ok((model, params))
}

pub fn save(model: &Model, params: &[f64], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode(model, params)?).map_err(|e| Error::io(path, e))
}

pub fn load(path: impl AsRef<Path>) -> Result<(Model, Vec<f64>)> {
    let path = path.as_ref();
    decode(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
}
