//! Pre-trains a small encoder on a synthetic corpus and prints the
//! epoch-mean loss curve.
//!
//! ```bash
//! cargo run --release --example pretrain -- [epochs] [learning_rate] [out_dir] [cls|mean]
//! ```

use std::time::Instant;

use future_distill::corpus::{synth_corpus, SynthSpec};
use future_distill::encoder::EncoderConfig;
use future_distill::pretrain::{Event, PretrainConfig, Pretraining};
use future_distill::rng::substream;
use future_distill::tokenizer::build_vocab;

fn main() -> future_distill::Result<()> {
    env_logger::init();
    let args: Vec<String> = std::env::args().skip(1).collect();
    let epochs = args.first().map_or(Ok(30), |s| s.parse()).expect("epochs");
    let lr = args.get(1).map_or(Ok(1e-3), |s| s.parse()).expect("learning rate");
    let out = args.get(2);

    let seed = 7;
    let corpus = synth_corpus(&SynthSpec::default(), &mut substream(seed, "corpus", 0))?;
    let vocab = build_vocab(&corpus, 1)?;
    println!("{} dialogues, vocabulary of {}", corpus.len(), vocab.len());

    let mut encoder = EncoderConfig {
        max_len: 128,
        ..EncoderConfig::default()
    };
    if let Some(p) = args.get(3) {
        encoder.pooling = p.parse()?;
    }
    let config = PretrainConfig {
        epochs,
        sync_interval: epochs.min(10),
        learning_rate: lr,
        checkpoint_every: 0,
        seed,
        ..PretrainConfig::default()
    };
    let mut run = Pretraining::new(&corpus, &vocab, encoder, config);
    if let Some(dir) = out {
        run = run.output(dir);
    }
    let start = Instant::now();
    let state = run.run_with(&mut |state, event| {
        if let Event::Epoch { epoch, synced } = event {
            let mean = state.epoch_means()[epoch - 1];
            let sync = if synced { "  (teacher synced)" } else { "" };
            println!("epoch {epoch:>3}  loss {mean:>9.4}  {:>6.1}s{sync}", start.elapsed().as_secs_f64());
        }
    })?;
    let last = state.history.last().expect("at least one step");
    println!(
        "final step {}: L_dis {:.4}  L_mlm {:.4}  ({} samples skipped for lack of a mask)",
        last.step, last.dis, last.mlm, state.skipped
    );
    Ok(())
}
