//! Dialogue act prediction: multi-label sigmoid head trained with binary
//! cross-entropy, scored by micro and macro F1.
//!
//! ```bash
//! cargo run --release --example finetune_act -- [checkpoint_dir]
//! ```

mod common;

use future_distill::finetune::{act_examples, finetune_classifier, FinetuneConfig, Prediction, TaskData};

fn main() -> future_distill::Result<()> {
    let dir = std::env::args().nth(1);
    let ds = common::corpus(200, 7)?;
    let model = common::model(dir.as_ref(), &ds)?;
    let (train_d, test_d) = ds.split_at(150);
    let train = TaskData::Act(act_examples(train_d)?);
    let test = TaskData::Act(act_examples(test_d)?);
    let cfg = FinetuneConfig {
        learning_rate: 1e-3,
        epochs: 20,
        seed: 1,
        ..FinetuneConfig::default()
    };
    let (clf, report) = finetune_classifier(&model, &train, None, &cfg)?;
    println!("{} steps, last loss {:.4}", report.steps, report.losses.last().copied().unwrap_or(f64::NAN));
    let labeled = test.labeled(&clf.kind)?;
    println!("{}", serde_json::to_string_pretty(&clf.evaluate(&labeled)?)?);
    if let (Some(first), future_distill::finetune::HeadKind::Act { acts }) = (labeled.first(), &clf.kind) {
        if let Prediction::Acts(set) = &clf.predict(std::slice::from_ref(&first.input))?[0] {
            let names: Vec<&str> = set.iter().map(|&i| acts[i].as_str()).collect();
            println!("acts predicted for the first test turn: {names:?}");
        }
    }
    Ok(())
}
