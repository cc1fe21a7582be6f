//! Runs short pre-trainings across the ablation knobs (future length P,
//! sync interval E, distilled layers K, teacher input, pooling) and prints
//! the final epoch-mean loss of each.
//!
//! ```bash
//! cargo run --release --example ablations
//! ```

mod common;

use future_distill::corpus::FuturePolicy;
use future_distill::encoder::{EncoderConfig, Pooling};
use future_distill::pretrain::{PretrainConfig, Pretraining, TeacherInput};
use future_distill::tokenizer::build_vocab;

fn main() -> future_distill::Result<()> {
    let ds = common::corpus(100, 7)?;
    let vocab = build_vocab(&ds, 1)?;
    let enc = EncoderConfig {
        layers: 3,
        hidden: 32,
        heads: 4,
        ffn: 64,
        max_len: 128,
        ..EncoderConfig::default()
    };
    let base = PretrainConfig {
        epochs: 4,
        sync_interval: 2,
        batch_size: 16,
        learning_rate: 1e-3,
        checkpoint_every: 0,
        seed: 7,
        ..PretrainConfig::default()
    };
    let mut runs: Vec<(String, EncoderConfig, PretrainConfig)> = Vec::new();
    for p in [FuturePolicy::Max(1), FuturePolicy::Max(3), FuturePolicy::All, FuturePolicy::Fix] {
        runs.push((format!("P={p}"), enc.clone(), PretrainConfig { future_policy: p, ..base.clone() }));
    }
    for e in [1, 2, 4] {
        runs.push((format!("E={e}"), enc.clone(), PretrainConfig { sync_interval: e, ..base.clone() }));
    }
    for k in [1, 2, 12] {
        runs.push((format!("K={k}"), enc.clone(), PretrainConfig { distill_layers: Some(k), ..base.clone() }));
    }
    runs.push((
        "teacher_input=future_only".into(),
        enc.clone(),
        PretrainConfig {
            teacher_input: TeacherInput::FutureOnly,
            ..base.clone()
        },
    ));
    runs.push((
        "pooling=mean".into(),
        EncoderConfig {
            pooling: Pooling::Mean,
            ..enc.clone()
        },
        base.clone(),
    ));
    for (name, e, c) in runs {
        let state = Pretraining::new(&ds, &vocab, e, c).run()?;
        let means = state.epoch_means();
        println!("{name:<28} first {:>8.4}  last {:>8.4}  syncs {:?}", means[0], means[means.len() - 1], state.syncs);
    }
    Ok(())
}
