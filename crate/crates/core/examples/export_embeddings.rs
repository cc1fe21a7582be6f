//! Writes pooled representations of labelled utterances as CSV
//! (`id,label,h0..`) for external dimensionality reduction.
//!
//! ```bash
//! cargo run --release --example export_embeddings -- [checkpoint_dir] [out.csv]
//! ```

mod common;

use future_distill::corpus::Utterance;
use future_distill::eval::{export_embeddings, EmbedItem};
use future_distill::finetune::intent_examples;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let ds = common::corpus(2000, 7)?;
    let model = common::model(args.first(), &ds)?;
    let items: Vec<EmbedItem> = intent_examples(&ds[..300])?
        .into_iter()
        .enumerate()
        .map(|(i, e)| EmbedItem {
            id: i.to_string(),
            label: e.label,
            input: vec![Utterance::user(e.text)],
        })
        .collect();
    match args.get(1) {
        Some(path) => {
            let file = std::fs::File::create(path)?;
            export_embeddings(&model, &items, std::io::BufWriter::new(file))?;
            println!("{} rows written to {path}", items.len());
        }
        None => {
            let mut buf = Vec::new();
            export_embeddings(&model, &items[..3], &mut buf)?;
            print!("{}", String::from_utf8_lossy(&buf));
        }
    }
    Ok(())
}
