use serde::{Deserialize, Serialize};

use super::{split_at_turn, Dialogue};
use crate::error::{Error, Result};
use crate::tokenizer::{tokenize, Vocab};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub dialogue_count: usize,
    pub utterance_count: usize,
    pub mean_context_tokens: f64,
    pub mean_future_tokens: f64,
    pub mean_context_utts: f64,
    pub mean_future_utts: f64,
}

/// Corpus counts plus context/future length means taken over every valid
/// split of every dialogue. Lengths count word tokens, not role markers.
pub fn corpus_stats(dialogues: &[Dialogue], vocab: &Vocab) -> Result<CorpusStats> {
    if dialogues.is_empty() {
        return Err(Error::Empty("cannot compute statistics of an empty corpus".into()));
    }
    let count = |utts: &[super::Utterance]| -> usize {
        utts.iter()
            .flat_map(|u| tokenize(&u.text))
            .map(|t| vocab.id(&t))
            .count()
    };
    let (mut splits, mut ctx_tok, mut fut_tok, mut ctx_utt, mut fut_utt) = (0usize, 0usize, 0usize, 0usize, 0usize);
    for d in dialogues {
        for t in 1..=d.turn_pairs() {
            let s = split_at_turn(d, t)?;
            splits += 1;
            ctx_tok += count(&s.context);
            fut_tok += count(&s.future);
            ctx_utt += s.context.len();
            fut_utt += s.future.len();
        }
    }
    let mean = |x: usize| x as f64 / splits as f64;
    Ok(CorpusStats {
        dialogue_count: dialogues.len(),
        utterance_count: dialogues.iter().map(|d| d.turns.len()).sum(),
        mean_context_tokens: mean(ctx_tok),
        mean_future_tokens: mean(fut_tok),
        mean_context_utts: mean(ctx_utt),
        mean_future_utts: mean(fut_utt),
    })
}
