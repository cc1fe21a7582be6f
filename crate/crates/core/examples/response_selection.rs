//! Response selection: trains a shared encoder with in-batch negatives and
//! ranks pools of 100 candidate responses (1-to-100, 3-to-100).
//!
//! ```bash
//! cargo run --release --example response_selection -- [checkpoint_dir]
//! ```

mod common;

use future_distill::finetune::{
    build_rs_pools, evaluate_response_selection, finetune_response_selection, rs_examples, FinetuneConfig, POOL_SIZE,
};

fn main() -> future_distill::Result<()> {
    let dir = std::env::args().nth(1);
    let ds = common::corpus(400, 7)?;
    let model = common::model(dir.as_ref(), &ds)?;
    let (train_d, test_d) = ds.split_at(300);
    let train = rs_examples(train_d);
    let pools = build_rs_pools(&rs_examples(test_d), POOL_SIZE, 7)?;
    let before = evaluate_response_selection(&model, &pools)?;
    let cfg = FinetuneConfig {
        learning_rate: 1e-3,
        epochs: 2,
        seed: 1,
        ..FinetuneConfig::default()
    };
    let tuned = finetune_response_selection(&model, &train, None, &cfg)?;
    let after = evaluate_response_selection(&tuned.model.model, &pools)?;
    println!(
        "{} steps, {} in-batch duplicate responses",
        tuned.report.steps, tuned.report.collisions
    );
    for (name, r) in [("before", before), ("after", after)] {
        println!(
            "{name}: 1-to-100 {:.3}, 3-to-100 {:.3} over {} pools",
            r.get("1-to-100").unwrap_or(0.0),
            r.get("3-to-100").unwrap_or(0.0),
            r.n
        );
    }
    Ok(())
}
