//! Future-knowledge probe: for each history, compares how far the gold
//! response moves its representation against 99 random responses, and
//! writes the per-example distances as CSV.
//!
//! ```bash
//! cargo run --release --example probe -- [checkpoint_dir] [out.csv]
//! ```

mod common;

use future_distill::eval::{build_probe_set, probe_summary, run_probe, write_probe_csv};

fn main() -> future_distill::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let train = common::corpus(2000, 7)?;
    let model = common::model(args.first(), &train)?;
    let held_out = common::corpus(300, 8)?;
    let mut items = build_probe_set(&held_out, 99, 7)?;
    items.truncate(50);
    let results = run_probe(&model, &items)?;
    println!("{}", serde_json::to_string_pretty(&probe_summary(&results)?)?);
    if let Some(path) = args.get(1) {
        write_probe_csv(path, &results)?;
        println!("distances written to {path}");
    }
    Ok(())
}
