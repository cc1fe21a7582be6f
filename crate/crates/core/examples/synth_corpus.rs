//! Generates a synthetic task-oriented corpus, prints one dialogue with its
//! annotations, and writes the corpus as JSONL.
//!
//! ```bash
//! cargo run --release --example synth_corpus -- [dialogues] [out.jsonl]
//! ```

mod common;

use future_distill::corpus::save_corpus;

fn main() -> future_distill::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let n = args.first().map_or(200, |s| s.parse().expect("dialogue count"));
    let ds = common::corpus(n, 7)?;
    let d = &ds[0];
    println!("{} dialogues; the first one ({}):", ds.len(), d.id);
    for u in &d.turns {
        println!("  {:?}: {}", u.role, u.text);
    }
    if let Some(meta) = &d.meta {
        println!("intent: {:?}", meta.intent);
        for (t, (acts, state)) in meta.acts.iter().zip(&meta.states).enumerate() {
            println!("  turn {t}: acts {acts:?}, state {state:?}");
        }
    }
    if let Some(path) = args.get(1) {
        save_corpus(path, &ds)?;
        println!("written to {path}");
    }
    Ok(())
}
