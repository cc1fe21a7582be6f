//! Corpus statistics: counts and mean context/future lengths over every
//! valid split.
//!
//! ```bash
//! cargo run --release --example stats -- [corpus.jsonl]
//! ```

mod common;

use future_distill::corpus::{corpus_stats, load_corpus};
use future_distill::tokenizer::build_vocab;

fn main() -> future_distill::Result<()> {
    let ds = match std::env::args().nth(1) {
        Some(path) => load_corpus(path)?,
        None => common::corpus(2000, 7)?,
    };
    let vocab = build_vocab(&ds, 1)?;
    let stats = corpus_stats(&ds, &vocab)?;
    println!("vocabulary: {} tokens", vocab.len());
    println!("{}", serde_json::to_string_pretty(&stats)?);
    Ok(())
}
