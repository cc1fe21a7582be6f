//! Compares a pre-trained checkpoint against a random-init encoder of the
//! same shape on few-shot intent recognition and response selection, using
//! a held-out synthetic corpus for testing.
//!
//! ```bash
//! cargo run --release --example pretrain -- 30 1e-3 out/pretrain
//! cargo run --release --example downstream -- out/pretrain/final [shots] [rs_train] [cls|mean]
//! ```

use std::collections::BTreeMap;
use std::time::Instant;

use future_distill::corpus::{synth_corpus, SynthSpec};
use future_distill::encoder::init_params;
use future_distill::finetune::{
    build_rs_pools, evaluate_response_selection, finetune_classifier, finetune_response_selection, intent_examples,
    rs_examples, FinetuneConfig, IntentExample, TaskData, POOL_SIZE,
};
use future_distill::model::Bundle;
use future_distill::rng::substream;

fn main() -> future_distill::Result<()> {
    env_logger::init();
    let args: Vec<String> = std::env::args().skip(1).collect();
    let dir = args.first().expect("checkpoint directory");
    let shots: usize = args.get(1).map_or(5, |s| s.parse().expect("shots"));
    let rs_train: usize = args.get(2).map_or(1000, |s| s.parse().expect("rs_train"));
    let seed = 7;

    let mut pretrained = Bundle::load(dir)?;
    if let Some(p) = args.get(3) {
        pretrained.encoder.pooling = p.parse()?;
    }
    let train_corpus = synth_corpus(&SynthSpec::default(), &mut substream(seed, "corpus", 0))?;
    let test_spec = SynthSpec {
        dialogues: 300,
        ..SynthSpec::default()
    };
    let test_corpus = synth_corpus(&test_spec, &mut substream(seed, "corpus", 1))?;

    let mut per_label: BTreeMap<String, Vec<IntentExample>> = BTreeMap::new();
    for e in intent_examples(&train_corpus)? {
        let v = per_label.entry(e.label.clone()).or_default();
        if v.len() < shots {
            v.push(e);
        }
    }
    let train = TaskData::Intent(per_label.into_values().flatten().collect());
    let test = TaskData::Intent(intent_examples(&test_corpus)?);
    println!("intent: {} training examples, {} test examples", train.len(), test.len());

    // the pre-training's own starting point, as produced under the same seed
    let random = Bundle::new(
        init_params(&pretrained.encoder, &mut substream(seed, "init", 0))?,
        pretrained.encoder.clone(),
        pretrained.vocab.clone(),
    );
    let start = Instant::now();
    let (mut pre_sum, mut rnd_sum) = (0.0, 0.0);
    for s in 1..=3u64 {
        let cfg = FinetuneConfig {
            learning_rate: 1e-4,
            epochs: 50,
            seed: s,
            ..FinetuneConfig::default()
        };
        let acc = |model: &Bundle| -> future_distill::Result<f64> {
            let (clf, _) = finetune_classifier(model, &train, None, &cfg)?;
            let labeled = test.labeled(&clf.kind)?;
            Ok(clf.evaluate(&labeled)?.get("acc_all").unwrap_or(0.0))
        };
        let (p, r) = (acc(&pretrained)?, acc(&random)?);
        pre_sum += p;
        rnd_sum += r;
        println!("seed {s}: pre-trained {p:.3}  random-init {r:.3}  ({:.0}s)", start.elapsed().as_secs_f64());
    }
    println!("intent mean: pre-trained {:.3}  random-init {:.3}", pre_sum / 3.0, rnd_sum / 3.0);

    let rs_all = rs_examples(&train_corpus);
    let rs_train = &rs_all[..rs_train.min(rs_all.len())];
    let test_rs = rs_examples(&test_corpus);
    let pools = build_rs_pools(&test_rs, POOL_SIZE, seed)?;
    let pools = &pools[..pools.len().min(300)];
    let cfg = FinetuneConfig {
        learning_rate: 1e-4,
        epochs: 3,
        seed: 1,
        ..FinetuneConfig::default()
    };
    for (name, model) in [("pre-trained", pretrained.clone()), ("random-init", random.clone())] {
        let tuned = finetune_response_selection(&model, rs_train, None, &cfg)?;
        let r = evaluate_response_selection(&tuned.model.model, pools)?;
        println!(
            "rs {name}: 1-to-100 {:.3}  3-to-100 {:.3}  ({:.0}s)",
            r.get("1-to-100").unwrap_or(0.0),
            r.get("3-to-100").unwrap_or(0.0),
            start.elapsed().as_secs_f64()
        );
    }
    Ok(())
}
