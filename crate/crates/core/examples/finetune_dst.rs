//! Dialogue state tracking: one softmax head per `domain.slot` over its
//! values (with `none`), scored by joint and slot accuracy.
//!
//! ```bash
//! cargo run --release --example finetune_dst -- [checkpoint_dir]
//! ```

mod common;

use future_distill::finetune::{dst_examples, finetune_classifier, FinetuneConfig, TaskData};

fn main() -> future_distill::Result<()> {
    let dir = std::env::args().nth(1);
    let ds = common::corpus(200, 7)?;
    let model = common::model(dir.as_ref(), &ds)?;
    let (train_d, test_d) = ds.split_at(150);
    let train = TaskData::Dst(dst_examples(train_d)?);
    // the test label space must be covered by training
    let cfg = FinetuneConfig {
        learning_rate: 1e-3,
        epochs: 4,
        seed: 1,
        ..FinetuneConfig::default()
    };
    let test = TaskData::Dst(dst_examples(test_d)?);
    let (clf, report) = finetune_classifier(&model, &train, Some(&test), &cfg)?;
    println!("{} steps, kept step {}", report.steps, report.best_step);
    println!("{}", serde_json::to_string_pretty(&clf.evaluate(&test.labeled(&clf.kind)?)?)?);
    Ok(())
}
