//! Checkpoint directories: `manifest.json` plus `params.bin`, a
//! concatenation of little-endian `f32` tensors in manifest order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::params::{EncoderConfig, EncoderParams};
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

pub const FORMAT: &str = "future-distill-checkpoint/1";
const MANIFEST: &str = "manifest.json";
const PARAMS: &str = "params.bin";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub dtype: String,
    /// Byte offset into `params.bin`.
    pub offset: u64,
    /// Byte length.
    pub bytes: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub epoch: usize,
    pub config: Value,
    #[serde(default)]
    pub metadata: Value,
    pub tensors: Vec<TensorEntry>,
}

/// Writes named tensors to `dir`, creating it if needed.
pub fn write_tensors<F: Real>(
    dir: impl AsRef<Path>,
    named: &[(String, &Tensor<F>)],
    config: Value,
    epoch: usize,
    metadata: Value,
) -> Result<Manifest> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut bytes = Vec::new();
    let mut entries = Vec::with_capacity(named.len());
    for (name, t) in named {
        let offset = bytes.len() as u64;
        for v in &t.data {
            let x = v.to_f32().ok_or_else(|| Error::NonFinite(name.clone()))?;
            bytes.extend_from_slice(&x.to_le_bytes());
        }
        entries.push(TensorEntry {
            name: name.clone(),
            shape: t.shape.clone(),
            dtype: "f32".into(),
            offset,
            bytes: bytes.len() as u64 - offset,
        });
    }
    let manifest = Manifest {
        format: FORMAT.into(),
        epoch,
        config,
        metadata,
        tensors: entries,
    };
    let bin = dir.join(PARAMS);
    fs::write(&bin, &bytes).map_err(|e| Error::io(&bin, e))?;
    let mf = dir.join(MANIFEST);
    fs::write(&mf, serde_json::to_string_pretty(&manifest)?).map_err(|e| Error::io(&mf, e))?;
    Ok(manifest)
}

pub fn read_tensors<F: Real>(dir: impl AsRef<Path>) -> Result<(Manifest, Vec<(String, Tensor<F>)>)> {
    let dir = dir.as_ref();
    let mf = dir.join(MANIFEST);
    let text = fs::read_to_string(&mf).map_err(|e| Error::io(&mf, e))?;
    let manifest: Manifest = serde_json::from_str(&text)?;
    if manifest.format != FORMAT {
        return Err(Error::Invalid(format!("unsupported checkpoint format {:?}", manifest.format)));
    }
    let bin = dir.join(PARAMS);
    let bytes = fs::read(&bin).map_err(|e| Error::io(&bin, e))?;
    let mut out = Vec::with_capacity(manifest.tensors.len());
    for e in &manifest.tensors {
        if e.dtype != "f32" {
            return Err(Error::Invalid(format!("{}: unsupported dtype {}", e.name, e.dtype)));
        }
        let count: usize = e.shape.iter().product();
        let (start, end) = (e.offset as usize, (e.offset + e.bytes) as usize);
        if e.bytes as usize != count * 4 || end > bytes.len() {
            return Err(Error::Shape(format!("{}: byte range does not match shape {:?}", e.name, e.shape)));
        }
        let data = bytes[start..end]
            .chunks_exact(4)
            .map(|c| F::c(f64::from(f32::from_le_bytes([c[0], c[1], c[2], c[3]]))))
            .collect();
        out.push((
            e.name.clone(),
            Tensor {
                shape: e.shape.clone(),
                data,
            },
        ));
    }
    Ok((manifest, out))
}

pub fn save_checkpoint<F: Real>(
    dir: impl AsRef<Path>,
    params: &EncoderParams<F>,
    cfg: &EncoderConfig,
    epoch: usize,
    metadata: Value,
) -> Result<Manifest> {
    let named: Vec<(String, &Tensor<F>)> = params.names().into_iter().zip(params.tensors()).collect();
    write_tensors(dir, &named, serde_json::to_value(cfg)?, epoch, metadata)
}

pub fn load_checkpoint<F: Real>(dir: impl AsRef<Path>) -> Result<(EncoderParams<F>, EncoderConfig, Manifest)> {
    let (manifest, named) = read_tensors(dir)?;
    let cfg: EncoderConfig = serde_json::from_value(manifest.config.clone())?;
    cfg.validate()?;
    let params = EncoderParams::from_named(&cfg, named)?;
    Ok((params, cfg, manifest))
}

/// SHA-256 over tensor names and their `f32` little-endian bytes, as hex.
pub fn params_hash<F: Real>(params: &EncoderParams<F>) -> String {
    use sha2::{Digest, Sha256};
    let mut h = Sha256::new();
    for (name, t) in params.names().iter().zip(params.tensors()) {
        h.update(name.as_bytes());
        for v in &t.data {
            h.update(v.to_f32().unwrap_or(f32::NAN).to_le_bytes());
        }
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}
