//! Helpers shared by the examples.

#![allow(dead_code)]

use future_distill::corpus::{synth_corpus, Dialogue, SynthSpec};
use future_distill::encoder::{init_params, EncoderConfig};
use future_distill::model::Bundle;
use future_distill::rng::substream;
use future_distill::tokenizer::build_vocab;

/// A synthetic corpus of `n` dialogues on the `corpus` stream of `seed`.
pub fn corpus(n: usize, seed: u64) -> future_distill::Result<Vec<Dialogue>> {
    let spec = SynthSpec {
        dialogues: n,
        ..SynthSpec::default()
    };
    synth_corpus(&spec, &mut substream(seed, "corpus", 0))
}

/// Loads the checkpoint at `dir`, or builds a small random-init encoder over
/// the vocabulary of `dialogues`.
pub fn model(dir: Option<&String>, dialogues: &[Dialogue]) -> future_distill::Result<Bundle> {
    if let Some(d) = dir {
        return Bundle::load(d);
    }
    let vocab = build_vocab(dialogues, 1)?;
    let enc = EncoderConfig {
        layers: 2,
        hidden: 32,
        heads: 4,
        ffn: 64,
        max_len: 128,
        dropout: 0.1,
        vocab_size: vocab.len(),
        ..EncoderConfig::default()
    };
    let params = init_params(&enc, &mut substream(0, "init", 0))?;
    Ok(Bundle::new(params, enc, vocab))
}
