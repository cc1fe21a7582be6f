//! Labelled task examples, their JSONL formats, and builders that derive
//! them from annotated dialogues.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::corpus::{Dialogue, DialogueMeta, Role, Utterance};
use crate::error::{Error, Result};

/// Label of the out-of-domain intent class.
pub const OOD_LABEL: &str = "oos";

/// Value of an unfilled slot.
pub const NONE_VALUE: &str = "none";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntentExample {
    pub text: String,
    pub label: String,
}

impl IntentExample {
    pub fn is_ood(&self) -> bool {
        self.label == OOD_LABEL
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActExample {
    pub history: Vec<Utterance>,
    pub acts: Vec<String>,
}

/// `slots` lists filled `domain.slot` pairs; absent pairs are `none`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DstExample {
    pub history: Vec<Utterance>,
    pub slots: BTreeMap<String, String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RsExample {
    pub history: Vec<Utterance>,
    pub response: String,
}

pub fn read_jsonl<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<Vec<T>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Schema {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    if out.is_empty() {
        return Err(Error::Empty(format!("no examples in {}", path.display())));
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(path: impl AsRef<Path>, items: &[T]) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for item in items {
        serde_json::to_writer(&mut w, item)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn meta(d: &Dialogue) -> Result<&DialogueMeta> {
    d.meta.as_ref().ok_or_else(|| Error::InvalidDialogue {
        id: d.id.clone(),
        message: "no annotations".into(),
    })
}

/// First user utterance labelled with the dialogue intent (or [`OOD_LABEL`]).
pub fn intent_examples(ds: &[Dialogue]) -> Result<Vec<IntentExample>> {
    ds.iter()
        .map(|d| {
            Ok(IntentExample {
                text: d.turns[0].text.clone(),
                label: meta(d)?.intent.clone().unwrap_or_else(|| OOD_LABEL.into()),
            })
        })
        .collect()
}

/// One example per system turn: the history through that turn and its acts.
pub fn act_examples(ds: &[Dialogue]) -> Result<Vec<ActExample>> {
    let mut out = Vec::new();
    for d in ds {
        for (t, acts) in meta(d)?.acts.iter().enumerate() {
            let end = 2 * t + 2;
            if end > d.turns.len() || d.turns[end - 1].role != Role::System {
                return Err(Error::InvalidDialogue {
                    id: d.id.clone(),
                    message: format!("act annotation {t} has no system turn"),
                });
            }
            out.push(ActExample {
                history: d.turns[..end].to_vec(),
                acts: acts.clone(),
            });
        }
    }
    Ok(out)
}

/// One example per user turn: the history through it and the belief state
/// after it.
pub fn dst_examples(ds: &[Dialogue]) -> Result<Vec<DstExample>> {
    let mut out = Vec::new();
    for d in ds {
        for (t, state) in meta(d)?.states.iter().enumerate() {
            let end = 2 * t + 1;
            if end > d.turns.len() {
                return Err(Error::InvalidDialogue {
                    id: d.id.clone(),
                    message: format!("state annotation {t} has no user turn"),
                });
            }
            out.push(DstExample {
                history: d.turns[..end].to_vec(),
                slots: state.clone(),
            });
        }
    }
    Ok(out)
}

/// One example per system turn: the history up to it and the turn itself.
/// Needs no annotations.
pub fn rs_examples(ds: &[Dialogue]) -> Vec<RsExample> {
    let mut out = Vec::new();
    for d in ds {
        for end in (1..d.turns.len()).step_by(2) {
            out.push(RsExample {
                history: d.turns[..end].to_vec(),
                response: d.turns[end].text.clone(),
            });
        }
    }
    out
}
