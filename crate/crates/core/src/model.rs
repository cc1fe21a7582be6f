//! An encoder checkpoint together with the vocabulary it was trained on.

use std::path::Path;

use crate::corpus::Utterance;
use crate::encoder::{forward, load_checkpoint, save_checkpoint, EncoderConfig, EncoderParams, Manifest, Mode};
use crate::error::{Error, Result};
use crate::tokenizer::{encode, TokenSequence, Vocab};

pub const VOCAB_FILE: &str = "vocab.json";

/// Sequences per forward pass when embedding.
const EMBED_BATCH: usize = 32;

#[derive(Clone, Debug)]
pub struct Bundle {
    pub params: EncoderParams<f32>,
    pub encoder: EncoderConfig,
    pub vocab: Vocab,
    pub manifest: Option<Manifest>,
}

impl Bundle {
    pub fn new(params: EncoderParams<f32>, encoder: EncoderConfig, vocab: Vocab) -> Self {
        Bundle {
            params,
            encoder,
            vocab,
            manifest: None,
        }
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        load_bundle(dir)
    }

    pub fn save(&self, dir: impl AsRef<Path>, epoch: usize, metadata: serde_json::Value) -> Result<Manifest> {
        save_bundle(dir, &self.params, &self.encoder, &self.vocab, epoch, metadata)
    }

    pub fn encode(&self, utts: &[Utterance]) -> Result<TokenSequence> {
        encode(utts, &self.vocab, self.encoder.max_len)
    }

    /// Eval-mode pooled top-layer representations, one per input.
    pub fn embed(&self, inputs: &[Vec<Utterance>]) -> Result<Vec<Vec<f32>>> {
        let seqs = inputs.iter().map(|u| self.encode(u)).collect::<Result<Vec<_>>>()?;
        embed_sequences(&self.params, &self.encoder, &seqs)
    }
}

pub fn embed_sequences(params: &EncoderParams<f32>, cfg: &EncoderConfig, seqs: &[TokenSequence]) -> Result<Vec<Vec<f32>>> {
    let mut out = Vec::with_capacity(seqs.len());
    for chunk in seqs.chunks(EMBED_BATCH) {
        let refs: Vec<&TokenSequence> = chunk.iter().collect();
        let fw = forward(params, cfg, &refs, Mode::Eval, false)?;
        out.extend(fw.outputs.into_iter().map(|o| o.top().to_vec()));
    }
    Ok(out)
}

pub fn save_bundle(
    dir: impl AsRef<Path>,
    params: &EncoderParams<f32>,
    enc: &EncoderConfig,
    vocab: &Vocab,
    epoch: usize,
    metadata: serde_json::Value,
) -> Result<Manifest> {
    let dir = dir.as_ref();
    let m = save_checkpoint(dir, params, enc, epoch, metadata)?;
    vocab.save(dir.join(VOCAB_FILE))?;
    Ok(m)
}

pub fn load_bundle(dir: impl AsRef<Path>) -> Result<Bundle> {
    let dir = dir.as_ref();
    let (params, encoder, manifest) = load_checkpoint(dir)?;
    let vocab = Vocab::load(dir.join(VOCAB_FILE))?;
    if vocab.len() != encoder.vocab_size {
        return Err(Error::Config(format!(
            "{}: vocabulary of {} does not match vocab_size {}",
            dir.display(),
            vocab.len(),
            encoder.vocab_size
        )));
    }
    Ok(Bundle {
        params,
        encoder,
        vocab,
        manifest: Some(manifest),
    })
}
