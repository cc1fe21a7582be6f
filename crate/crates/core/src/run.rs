//! Run manifests written beside every command's outputs.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const RUN_MANIFEST: &str = "run.json";

/// Hex sha256 of a file, or of a directory's sorted `(relative path, file
/// hash)` pairs.
pub fn hash_path(path: impl AsRef<Path>) -> Result<String> {
    let path = path.as_ref();
    let meta = std::fs::metadata(path).map_err(|e| Error::io(path, e))?;
    if meta.is_file() {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        return Ok(hex(&Sha256::digest(&bytes)));
    }
    let mut files = Vec::new();
    collect_files(path, path, &mut files)?;
    files.sort();
    let mut h = Sha256::new();
    for rel in files {
        h.update(rel.as_bytes());
        h.update([0]);
        h.update(hash_path(path.join(&rel))?.as_bytes());
        h.update([b'\n']);
    }
    Ok(hex(&h.finalize()))
}

fn collect_files(root: &Path, dir: &Path, out: &mut Vec<String>) -> Result<()> {
    for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let p = entry.map_err(|e| Error::io(dir, e))?.path();
        if p.is_dir() {
            collect_files(root, &p, out)?;
        } else {
            let rel = p.strip_prefix(root).expect("under root");
            out.push(rel.to_string_lossy().replace('\\', "/"));
        }
    }
    Ok(())
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub args: Vec<String>,
    pub seed: u64,
    /// Fully resolved configuration.
    pub config: serde_json::Value,
    /// Content hash of every input file or directory.
    pub inputs: BTreeMap<String, String>,
    pub wall_seconds: f64,
    pub version: String,
}

/// Collects a manifest while a command runs.
pub struct RunRecorder {
    manifest: RunManifest,
    start: Instant,
}

impl RunRecorder {
    pub fn new(command: &str, args: Vec<String>, seed: u64, config: serde_json::Value) -> Self {
        RunRecorder {
            manifest: RunManifest {
                command: command.into(),
                args,
                seed,
                config,
                inputs: BTreeMap::new(),
                wall_seconds: 0.0,
                version: env!("CARGO_PKG_VERSION").into(),
            },
            start: Instant::now(),
        }
    }

    pub fn input(&mut self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let h = hash_path(path)?;
        self.manifest.inputs.insert(path.display().to_string(), h);
        Ok(())
    }

    /// Stamps the wall time and writes `dir/run.json`.
    pub fn finish(mut self, dir: impl AsRef<Path>) -> Result<RunManifest> {
        let dir = dir.as_ref();
        self.manifest.wall_seconds = self.start.elapsed().as_secs_f64();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(RUN_MANIFEST);
        std::fs::write(&path, serde_json::to_string_pretty(&self.manifest)?).map_err(|e| Error::io(&path, e))?;
        Ok(self.manifest)
    }
}
