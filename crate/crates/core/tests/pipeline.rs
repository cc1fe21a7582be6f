//! Corpus to training-sample invariants on generated dialogues.

use proptest::prelude::*;

use future_distill::corpus::{load_corpus, sample_split_sample, save_corpus, synth_corpus, FuturePolicy, SynthSpec};
use future_distill::pretrain::{prepare_sample, PretrainConfig, TeacherInput};
use future_distill::rng::{seeded, substream};
use future_distill::tokenizer::{build_vocab, encode, IGNORE};

fn policy() -> impl Strategy<Value = FuturePolicy> {
    prop_oneof![
        (1usize..6).prop_map(FuturePolicy::Max),
        Just(FuturePolicy::All),
        Just(FuturePolicy::Fix),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn prepared_samples_are_consistent(seed in 0u64..1000, policy in policy(), future_only in any::<bool>()) {
        let spec = SynthSpec { dialogues: 4, ..SynthSpec::default() };
        let ds = synth_corpus(&spec, &mut seeded(seed)).unwrap();
        let vocab = build_vocab(&ds, 1).unwrap();
        let cfg = PretrainConfig {
            future_policy: policy,
            teacher_input: if future_only { TeacherInput::FutureOnly } else { TeacherInput::ContextPlusFuture },
            ..PretrainConfig::default()
        };
        let mut rng = substream(seed, "test", 0);
        for d in &ds {
            let split = sample_split_sample(d, policy, &mut rng).unwrap();
            let w = split.future_window.len();
            prop_assert!(w >= 1 && w <= split.future.len());
            prop_assert_eq!(&split.future[..w], &split.future_window[..]);
            match policy {
                FuturePolicy::Max(p) => prop_assert!(w <= p),
                FuturePolicy::Fix => prop_assert_eq!(w, split.future.len()),
                FuturePolicy::All => {}
            }
            let joined: Vec<_> = split.context.iter().chain(&split.future).cloned().collect();
            prop_assert_eq!(&joined, &d.turns);

            let Some(s) = prepare_sample(&split, &vocab, 512, &cfg, &mut rng).unwrap() else { continue };
            let context = encode(&split.context, &vocab, 512).unwrap();
            prop_assert_eq!(&s.student.attention_mask, &context.attention_mask);
            for i in 0..512 {
                let label = s.student.mlm_labels[i];
                if label == IGNORE {
                    prop_assert_eq!(s.student.ids[i], context.ids[i]);
                } else {
                    prop_assert_eq!(label as u32, context.ids[i]);
                    prop_assert!(!vocab.is_special(context.ids[i]));
                }
            }
            prop_assert_eq!(s.teacher.masked_count(), 0);
            if !future_only {
                // the teacher sees the unmasked context, then the window
                let n = context.active_len() - 1;
                prop_assert_eq!(&s.teacher.ids[..n], &context.ids[..n]);
                prop_assert!(s.teacher.active_len() > context.active_len());
            }
        }
    }
}

#[test]
fn corpus_round_trips_through_jsonl() {
    let spec = SynthSpec {
        dialogues: 25,
        ..SynthSpec::default()
    };
    let ds = synth_corpus(&spec, &mut seeded(1)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.jsonl");
    save_corpus(&path, &ds).unwrap();
    assert_eq!(load_corpus(&path).unwrap(), ds);
    assert_eq!(synth_corpus(&spec, &mut seeded(1)).unwrap(), ds);
    assert_ne!(synth_corpus(&spec, &mut seeded(2)).unwrap(), ds);
}

#[test]
fn truncation_keeps_the_newest_tokens() {
    let ds = synth_corpus(&SynthSpec::default(), &mut seeded(3)).unwrap();
    let vocab = build_vocab(&ds, 1).unwrap();
    let long = ds.iter().max_by_key(|d| d.turns.len()).unwrap();
    let full = encode(&long.turns, &vocab, 512).unwrap();
    let n = full.active_len();
    assert!(n > 20);
    let cut = encode(&long.turns, &vocab, 20).unwrap();
    // one slot stays empty when only a lone role marker would fit
    let a = cut.active_len();
    assert!(a == 19 || a == 20, "{a}");
    assert_eq!(cut.ids[0], vocab.cls);
    assert!(vocab.is_special(cut.ids[1]));
    // everything after the leading role marker is the tail, [SEP] included
    assert_eq!(&cut.ids[2..a], &full.ids[n - (a - 2)..n]);
}
