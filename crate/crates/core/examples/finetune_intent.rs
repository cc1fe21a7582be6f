//! Intent recognition with an out-of-domain class: fine-tunes a softmax head
//! plus the encoder and reports Acc(all), Acc(in), Recall(out), Acc(out).
//!
//! ```bash
//! cargo run --release --example finetune_intent -- [checkpoint_dir]
//! ```

mod common;

use future_distill::finetune::{finetune_classifier, intent_examples, FinetuneConfig, TaskData};

fn main() -> future_distill::Result<()> {
    let dir = std::env::args().nth(1);
    let ds = common::corpus(400, 7)?;
    let model = common::model(dir.as_ref(), &ds)?;
    let examples = intent_examples(&ds)?;
    let (train, rest) = examples.split_at(200);
    let (val, test) = rest.split_at(100);
    let cfg = FinetuneConfig {
        learning_rate: 1e-3,
        epochs: 10,
        eval_every: 10,
        seed: 1,
        ..FinetuneConfig::default()
    };
    let (clf, report) = finetune_classifier(&model, &TaskData::Intent(train.to_vec()), Some(&TaskData::Intent(val.to_vec())), &cfg)?;
    println!(
        "{} steps, kept step {} (validation Acc(all) {:?}), early stop: {}",
        report.steps, report.best_step, report.best_score, report.stopped_early
    );
    let metrics = clf.evaluate(&TaskData::Intent(test.to_vec()).labeled(&clf.kind)?)?;
    println!("{}", serde_json::to_string_pretty(&metrics)?);
    Ok(())
}
