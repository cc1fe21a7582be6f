//! Word-level vocabulary, dialogue encoding, and MLM corruption.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use rand::Rng;

use crate::corpus::{Dialogue, Role, Utterance};
use crate::error::{Error, Result};

pub const PAD: &str = "[PAD]";
pub const UNK: &str = "[UNK]";
pub const CLS: &str = "[CLS]";
pub const SEP: &str = "[SEP]";
pub const MASK: &str = "[MASK]";
pub const USR: &str = "[USR]";
pub const SYS: &str = "[SYS]";

pub const SPECIALS: [&str; 7] = [PAD, UNK, CLS, SEP, MASK, USR, SYS];

/// Label value for positions that are not MLM targets.
pub const IGNORE: i32 = -1;

/// Lowercases and splits on whitespace; every other non-alphanumeric
/// character becomes a token of its own.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    for ch in text.chars().flat_map(char::to_lowercase) {
        if ch.is_alphanumeric() {
            cur.push(ch);
        } else {
            if !cur.is_empty() {
                out.push(std::mem::take(&mut cur));
            }
            if !ch.is_whitespace() {
                out.push(ch.to_string());
            }
        }
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
    pub pad: u32,
    pub unk: u32,
    pub cls: u32,
    pub sep: u32,
    pub mask: u32,
    pub usr: u32,
    pub sys: u32,
}

impl Vocab {
    /// Builds a vocabulary from an id-ordered token list.
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i as u32).is_some() {
                return Err(Error::Invalid(format!("duplicate vocabulary token {t:?}")));
            }
        }
        let id = |name: &str| {
            index
                .get(name)
                .copied()
                .ok_or_else(|| Error::Invalid(format!("vocabulary lacks {name}")))
        };
        let v = Vocab {
            pad: id(PAD)?,
            unk: id(UNK)?,
            cls: id(CLS)?,
            sep: id(SEP)?,
            mask: id(MASK)?,
            usr: id(USR)?,
            sys: id(SYS)?,
            tokens,
            index,
        };
        if v.pad != 0 {
            return Err(Error::Invalid("[PAD] must have id 0".into()));
        }
        Ok(v)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn id(&self, token: &str) -> u32 {
        self.index.get(token).copied().unwrap_or(self.unk)
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn is_special(&self, id: u32) -> bool {
        [self.pad, self.unk, self.cls, self.sep, self.mask, self.usr, self.sys].contains(&id)
    }

    pub fn role_id(&self, role: Role) -> u32 {
        match role {
            Role::User => self.usr,
            Role::System => self.sys,
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let json = serde_json::to_string_pretty(&self.tokens)?;
        std::fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Vocab::from_tokens(serde_json::from_str(&text)?)
    }
}

/// Collects tokens with frequency `>= min_freq`, ordered by descending
/// frequency then lexicographically, after the seven special tokens.
pub fn build_vocab(dialogues: &[Dialogue], min_freq: usize) -> Result<Vocab> {
    if dialogues.is_empty() {
        return Err(Error::Empty("cannot build a vocabulary from an empty corpus".into()));
    }
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for d in dialogues {
        for u in &d.turns {
            for t in tokenize(&u.text) {
                *counts.entry(t).or_default() += 1;
            }
        }
    }
    let mut words: Vec<(String, usize)> = counts
        .into_iter()
        .filter(|(t, c)| *c >= min_freq.max(1) && !SPECIALS.contains(&t.as_str()))
        .collect();
    words.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    let tokens = SPECIALS
        .iter()
        .map(|s| s.to_string())
        .chain(words.into_iter().map(|(t, _)| t))
        .collect();
    Vocab::from_tokens(tokens)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TokenSequence {
    pub ids: Vec<u32>,
    pub attention_mask: Vec<u8>,
    pub mlm_labels: Vec<i32>,
}

impl TokenSequence {
    /// Number of non-padding positions.
    pub fn active_len(&self) -> usize {
        self.attention_mask.iter().filter(|&&m| m == 1).count()
    }

    /// Length of the prefix that ends at the last attended position.
    pub fn span(&self) -> usize {
        self.attention_mask
            .iter()
            .rposition(|&m| m == 1)
            .map_or(0, |i| i + 1)
    }

    pub fn masked_count(&self) -> usize {
        self.mlm_labels.iter().filter(|&&l| l >= 0).count()
    }
}

/// Encodes `[CLS] ([USR]|[SYS] tokens...)* [SEP]`, padded to `max_len`.
///
/// When the dialogue does not fit, the oldest tokens are dropped first. An
/// utterance whose words are all dropped loses its role marker as well; a
/// partially kept one keeps its marker in front of its surviving tail.
pub fn encode(utts: &[Utterance], vocab: &Vocab, max_len: usize) -> Result<TokenSequence> {
    if max_len < 3 {
        return Err(Error::Config(format!("max_len {max_len} cannot hold [CLS] x [SEP]")));
    }
    if utts.is_empty() {
        return Err(Error::Empty("no utterances to encode".into()));
    }
    let pieces: Vec<Vec<u32>> = utts
        .iter()
        .map(|u| {
            std::iter::once(vocab.role_id(u.role))
                .chain(tokenize(&u.text).iter().map(|t| vocab.id(t)))
                .collect()
        })
        .collect();

    let mut budget = max_len - 2;
    let mut kept: Vec<&[u32]> = Vec::new();
    let mut partial: Option<Vec<u32>> = None;
    for piece in pieces.iter().rev() {
        if piece.len() <= budget {
            budget -= piece.len();
            kept.push(piece);
        } else {
            if budget >= 2 {
                let tail = &piece[piece.len() - (budget - 1)..];
                partial = Some(std::iter::once(piece[0]).chain(tail.iter().copied()).collect());
            }
            break;
        }
    }

    let mut ids = Vec::with_capacity(max_len);
    ids.push(vocab.cls);
    if let Some(p) = &partial {
        ids.extend_from_slice(p);
    }
    for piece in kept.iter().rev() {
        ids.extend_from_slice(piece);
    }
    ids.push(vocab.sep);
    let active = ids.len();
    ids.resize(max_len, vocab.pad);
    let mut attention_mask = vec![0u8; max_len];
    attention_mask[..active].fill(1);
    Ok(TokenSequence {
        ids,
        attention_mask,
        mlm_labels: vec![IGNORE; max_len],
    })
}

/// Word tokens of an encoded sequence, specials and padding removed.
pub fn decode(seq: &TokenSequence, vocab: &Vocab) -> Vec<String> {
    seq.ids
        .iter()
        .zip(&seq.attention_mask)
        .filter(|(&id, &m)| m == 1 && (!vocab.is_special(id) || id == vocab.unk))
        .filter_map(|(&id, _)| vocab.token(id).map(str::to_string))
        .collect()
}

/// BERT-style corruption: every maskable position is selected with
/// probability `ratio`; a selected token becomes `[MASK]` 80% of the time, a
/// random word 10%, and stays unchanged 10%. Special tokens and padding are
/// never selected.
pub fn apply_mlm_mask<R: Rng + ?Sized>(
    seq: &TokenSequence,
    vocab: &Vocab,
    ratio: f64,
    rng: &mut R,
) -> Result<TokenSequence> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::Config(format!("mlm_ratio must be in (0, 1), got {ratio}")));
    }
    let maskable = |i: usize| seq.attention_mask[i] == 1 && !vocab.is_special(seq.ids[i]);
    if !(0..seq.ids.len()).any(maskable) {
        return Err(Error::NoMaskableTokens);
    }
    let first_word = SPECIALS.len() as u32;
    let mut out = seq.clone();
    out.mlm_labels.fill(IGNORE);
    for i in 0..seq.ids.len() {
        if !maskable(i) || rng.random::<f64>() >= ratio {
            continue;
        }
        out.mlm_labels[i] = seq.ids[i] as i32;
        let r: f64 = rng.random();
        if r < 0.8 {
            out.ids[i] = vocab.mask;
        } else if r < 0.9 && vocab.len() as u32 > first_word {
            out.ids[i] = rng.random_range(first_word..vocab.len() as u32);
        }
    }
    Ok(out)
}
