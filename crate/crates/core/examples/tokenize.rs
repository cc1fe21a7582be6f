//! Splits a dialogue into context and future at a turn, encodes both with
//! role markers, and applies MLM masking.
//!
//! ```bash
//! cargo run --release --example tokenize
//! ```

mod common;

use future_distill::corpus::split_at_turn;
use future_distill::rng::substream;
use future_distill::tokenizer::{apply_mlm_mask, build_vocab, decode, encode};

fn main() -> future_distill::Result<()> {
    let ds = common::corpus(50, 7)?;
    let vocab = build_vocab(&ds, 1)?;
    let split = split_at_turn(&ds[0], 2)?;
    let context = encode(&split.context, &vocab, 64)?;
    let mut teacher_view = split.context.clone();
    teacher_view.extend(split.future.iter().cloned());
    let full = encode(&teacher_view, &vocab, 64)?;
    println!("context tokens: {:?}", decode(&context, &vocab));
    println!("context ids:    {:?}", &context.ids[..context.active_len()]);
    println!("with future:    {} of 64 positions attended", full.active_len());
    let masked = apply_mlm_mask(&context, &vocab, 0.15, &mut substream(7, "mask", 0))?;
    let targets: Vec<&str> = masked
        .mlm_labels
        .iter()
        .filter(|&&l| l >= 0)
        .map(|&l| vocab.token(l as u32).unwrap_or("?"))
        .collect();
    println!("masked {} positions, targets {targets:?}", masked.masked_count());
    Ok(())
}
