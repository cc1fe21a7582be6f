//! Run configuration: defaults, then a JSON file, then `key=value`
//! overrides, resolved into one strictly validated document.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::corpus::{load_corpus, synth_corpus, Dialogue, SynthSpec};
use crate::encoder::EncoderConfig;
use crate::error::{Error, Result};
use crate::finetune::FinetuneConfig;
use crate::pretrain::PretrainConfig;
use crate::rng::substream;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProbeConfig {
    /// Random responses per history.
    pub distractors: usize,
    /// Probe at most this many histories (all when absent).
    pub max_items: Option<usize>,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig {
            distractors: 99,
            max_items: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunDocument {
    pub seed: u64,
    /// Dialogue JSONL to train on; a corpus is generated from `synth` when
    /// absent.
    pub corpus: Option<PathBuf>,
    pub synth: SynthSpec,
    /// Minimum token frequency for the vocabulary.
    pub min_freq: usize,
    pub encoder: EncoderConfig,
    pub pretrain: PretrainConfig,
    pub finetune: FinetuneConfig,
    pub probe: ProbeConfig,
}

impl Default for RunDocument {
    fn default() -> Self {
        RunDocument {
            seed: 0,
            corpus: None,
            synth: SynthSpec::default(),
            min_freq: 1,
            encoder: EncoderConfig::default(),
            pretrain: PretrainConfig::default(),
            finetune: FinetuneConfig::default(),
            probe: ProbeConfig::default(),
        }
    }
}

impl RunDocument {
    /// Loads `corpus`, or generates one from `synth` on the `corpus` stream.
    pub fn dialogues(&self) -> Result<Vec<Dialogue>> {
        match &self.corpus {
            Some(p) => load_corpus(p),
            None => synth_corpus(&self.synth, &mut substream(self.seed, "corpus", 0)),
        }
    }
}

/// Short names accepted by `--set`.
pub const ALIASES: &[(&str, &str)] = &[
    ("E", "pretrain.sync_interval"),
    ("M", "pretrain.epochs"),
    ("K", "pretrain.distill_layers"),
    ("P", "pretrain.future_policy"),
    ("lr", "pretrain.learning_rate"),
    ("batch", "pretrain.batch_size"),
    ("teacher_input", "pretrain.teacher_input"),
    ("dropout", "encoder.dropout"),
    ("max_len", "encoder.max_len"),
    ("pooling", "encoder.pooling"),
];

pub fn expand_alias(key: &str) -> &str {
    ALIASES.iter().find(|(a, _)| *a == key).map_or(key, |(_, full)| full)
}

/// Recursively overlays `top` onto `base`.
fn merge(base: &mut Value, top: Value) {
    match (base, top) {
        (Value::Object(b), Value::Object(t)) => {
            for (k, v) in t {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Parses `value` as JSON, falling back to a bare string.
fn parse_value(value: &str) -> Value {
    serde_json::from_str(value).unwrap_or_else(|_| Value::String(value.to_string()))
}

/// Applies one `key=value` override; the key must already exist.
pub fn apply_override(doc: &mut Value, item: &str) -> Result<()> {
    let (key, value) = item
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override {item:?} is not key=value")))?;
    let full = expand_alias(key.trim());
    let mut node = doc;
    let parts: Vec<&str> = full.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let obj = node.as_object_mut().ok_or_else(|| Error::UnknownKey(full.to_string()))?;
        let next = obj.get_mut(*part).ok_or_else(|| Error::UnknownKey(full.to_string()))?;
        if i + 1 == parts.len() {
            *next = parse_value(value.trim());
            return Ok(());
        }
        node = next;
    }
    Err(Error::UnknownKey(full.to_string()))
}

/// Resolves defaults, then the file at `path`, then `overrides`.
pub fn resolve_config(path: Option<&Path>, overrides: &[String]) -> Result<RunDocument> {
    let mut doc = serde_json::to_value(RunDocument::default())?;
    if let Some(p) = path {
        let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
        if !text.trim().is_empty() {
            let file: Value = serde_json::from_str(&text).map_err(|e| Error::Schema {
                path: p.to_path_buf(),
                line: e.line(),
                message: e.to_string(),
            })?;
            if !file.is_object() {
                return Err(Error::Config(format!("{}: config must be a JSON object", p.display())));
            }
            merge(&mut doc, file);
        }
    }
    for item in overrides {
        apply_override(&mut doc, item)?;
    }
    let mut resolved: RunDocument = serde_json::from_value(doc).map_err(|e| {
        let msg = e.to_string();
        match msg.strip_prefix("unknown field `").and_then(|r| r.split('`').next()) {
            Some(k) => Error::UnknownKey(k.to_string()),
            None => Error::Config(msg),
        }
    })?;
    resolved.pretrain.seed = resolved.seed;
    resolved.finetune.seed = resolved.seed;
    resolved.pretrain.validate()?;
    resolved.finetune.validate()?;
    Ok(resolved)
}
