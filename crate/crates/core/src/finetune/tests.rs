use super::*;
use crate::corpus::{synth_corpus, Dialogue, SynthSpec};
use crate::encoder::{init_params, EncoderConfig, Pooling};
use crate::rng::seeded;
use crate::tokenizer::{build_vocab, Vocab};
use rand::Rng as _;
use rand_distr::StandardNormal;

fn corpus(n: usize) -> Vec<Dialogue> {
    let spec = SynthSpec {
        dialogues: n,
        ..SynthSpec::default()
    };
    synth_corpus(&spec, &mut seeded(21)).unwrap()
}

fn tiny_model(ds: &[Dialogue], seed: u64) -> Bundle {
    let vocab: Vocab = build_vocab(ds, 1).unwrap();
    let enc = EncoderConfig {
        layers: 2,
        hidden: 16,
        heads: 2,
        ffn: 32,
        max_len: 64,
        dropout: 0.1,
        vocab_size: vocab.len(),
        pooling: Pooling::Cls,
    };
    let params = init_params(&enc, &mut seeded(seed)).unwrap();
    Bundle::new(params, enc, vocab)
}

fn intent_kind() -> HeadKind {
    HeadKind::Intent {
        classes: vec!["a".into(), "b".into(), "c".into()],
    }
}

#[test]
fn argmax_ties_go_to_lowest_index() {
    assert_eq!(decide(&intent_kind(), &[2.0, 1.0, -1.0]).unwrap(), Prediction::Class(0));
    assert_eq!(decide(&intent_kind(), &[1.0, 3.0, 3.0]).unwrap(), Prediction::Class(1));
    assert!(decide(&intent_kind(), &[1.0, 3.0]).is_err());
}

#[test]
fn act_threshold_is_inclusive() {
    assert_eq!(act_set(&[0.49, 0.5, 0.51]), vec![1, 2]);
    let kind = HeadKind::Act {
        acts: vec!["x".into(), "y".into()],
    };
    // sigmoid(0) is exactly 0.5
    assert_eq!(decide(&kind, &[-0.1, 0.0]).unwrap(), Prediction::Acts(vec![1]));
}

#[test]
fn dst_decodes_a_hand_built_head() {
    let kind = HeadKind::Dst {
        slots: vec![
            SlotValues {
                name: "hotel.area".into(),
                values: vec!["none".into(), "north".into(), "south".into()],
            },
            SlotValues {
                name: "taxi.time".into(),
                values: vec!["none".into(), "noon".into()],
            },
        ],
    };
    let ds = corpus(4);
    let mut clf = Classifier::new(tiny_model(&ds, 1), kind.clone(), 0);
    // a head that reads feature 0 for "south" and feature 1 for "noon"
    clf.w.data.fill(0.0);
    clf.b.data.copy_from_slice(&[0.5, 0.0, 0.0, 0.5, 0.0]);
    clf.w.data[2 * 16] = 1.0;
    clf.w.data[4 * 16 + 1] = 1.0;
    let h = |x0: f32, x1: f32| {
        let mut v = vec![0.0; 16];
        v[0] = x0;
        v[1] = x1;
        v
    };
    let map = |a: &str, t: &str| Prediction::Slots([("hotel.area".into(), a.into()), ("taxi.time".into(), t.into())].into());
    assert_eq!(decide(&kind, &clf.logits(&h(1.0, 0.0))).unwrap(), map("south", "none"));
    assert_eq!(decide(&kind, &clf.logits(&h(0.0, 1.0))).unwrap(), map("none", "noon"));
    assert_eq!(decide(&kind, &clf.logits(&h(0.5, 0.5))).unwrap(), map("none", "none"));
}

#[test]
fn label_spaces_from_data() {
    let ex = |t: &str, l: &str| IntentExample {
        text: t.into(),
        label: l.into(),
    };
    let data = TaskData::Intent(vec![ex("x", "oos"), ex("y", "b"), ex("z", "a")]);
    let kind = data.head_kind();
    assert_eq!(
        kind,
        HeadKind::Intent {
            classes: vec!["a".into(), "b".into(), "oos".into()]
        }
    );
    assert_eq!(kind.ood_class(), Some(2));
    let unseen = TaskData::Intent(vec![ex("w", "zzz")]);
    assert!(unseen.labeled(&kind).is_err());

    let ds = corpus(30);
    let dst = TaskData::Dst(dst_examples(&ds).unwrap());
    let HeadKind::Dst { slots } = dst.head_kind() else { panic!() };
    assert!(slots.iter().all(|s| s.values[0] == NONE_VALUE));
    let labeled = dst.labeled(&dst.head_kind()).unwrap();
    assert!(labeled.iter().all(|l| matches!(&l.target, Target::Slots(v) if v.len() == slots.len())));
}

#[test]
fn head_losses_match_closed_forms() {
    // softmax cross-entropy: gradient is softmax minus one-hot
    let z = [0.3f32, -1.2, 2.0];
    let (l, g) = head_loss(&intent_kind(), &z, &Target::Class(2)).unwrap();
    let zs: Vec<f64> = z.iter().map(|&x| f64::from(x)).collect();
    let lse = zs.iter().map(|x| x.exp()).sum::<f64>().ln();
    assert!((l - (lse - zs[2])).abs() < 1e-5);
    for (i, gi) in g.iter().enumerate() {
        let p = (zs[i] - lse).exp() - if i == 2 { 1.0 } else { 0.0 };
        assert!((f64::from(*gi) - p).abs() < 1e-5);
    }
    // binary cross-entropy summed over acts
    let kind = HeadKind::Act {
        acts: vec!["x".into(), "y".into()],
    };
    let (l, g) = head_loss(&kind, &[0.0, 2.0], &Target::Multi(vec![true, false])).unwrap();
    let s = 1.0 / (1.0 + (-2.0f64).exp());
    assert!((l - (2f64.ln() - (1.0 - s).ln())).abs() < 1e-5);
    assert!((f64::from(g[0]) + 0.5).abs() < 1e-6 && (f64::from(g[1]) - s).abs() < 1e-6);
    assert!(matches!(
        head_loss(&intent_kind(), &z, &Target::Class(3)),
        Err(Error::LabelOutOfRange { label: 3, classes: 3 })
    ));
}

#[test]
fn head_fits_separable_features() {
    // four classes, each a cluster around its own axis
    let mut rng = seeded(2);
    let kind = HeadKind::Intent {
        classes: (0..4).map(|i| i.to_string()).collect(),
    };
    let mut feats = Vec::new();
    let mut targets = Vec::new();
    for c in 0..4 {
        for _ in 0..5 {
            let mut h: Vec<f32> = (0..8).map(|_| rng.random_range(-0.2..0.2)).collect();
            h[c] += 1.0;
            feats.push(h);
            targets.push(Target::Class(c));
        }
    }
    let mut w = Tensor::zeros(&[4, 8]);
    let mut b = Tensor::zeros(&[4]);
    let mut adam = Adam::<f32>::default();
    let pooled: Vec<&[f32]> = feats.iter().map(Vec::as_slice).collect();
    let t: Vec<&Target> = targets.iter().collect();
    let first = head_gradients(&kind, &w, &b, &pooled, &t).unwrap().loss;
    for _ in 0..200 {
        let g = head_gradients(&kind, &w, &b, &pooled, &t).unwrap();
        adam.step(vec![&mut w, &mut b], vec![&g.w, &g.b], 0.05).unwrap();
    }
    let last = head_gradients(&kind, &w, &b, &pooled, &t).unwrap().loss;
    assert!((first - 4f64.ln()).abs() < 1e-6 && last < 0.1, "loss {first} -> {last}");
    for (h, target) in feats.iter().zip(&targets) {
        let Target::Class(c) = target else { unreachable!() };
        assert_eq!(decide(&kind, &head_logits(&w, &b, h)).unwrap(), Prediction::Class(*c));
    }
}

#[test]
fn frozen_encoder_stays_put() {
    let ds = corpus(20);
    let model = tiny_model(&ds, 2);
    let train = TaskData::Intent(intent_examples(&ds).unwrap());
    let cfg = FinetuneConfig {
        learning_rate: 1e-2,
        epochs: 3,
        freeze_encoder: true,
        ..FinetuneConfig::default()
    };
    let (clf, report) = finetune_classifier(&model, &train, None, &cfg).unwrap();
    assert_eq!(report.steps, 3 * 20usize.div_ceil(8));
    assert_eq!(clf.model.params, model.params);
    assert_ne!(clf.w, Classifier::new(model, clf.kind.clone(), cfg.seed).w);
}

#[test]
fn one_shot_intent_beats_chance_and_round_trips() {
    let ds = corpus(60);
    let model = tiny_model(&ds, 3);
    let all = intent_examples(&ds).unwrap();
    let mut shots: BTreeMap<String, IntentExample> = BTreeMap::new();
    for e in &all {
        shots.entry(e.label.clone()).or_insert_with(|| e.clone());
    }
    let train = TaskData::Intent(shots.into_values().collect());
    let cfg = FinetuneConfig {
        learning_rate: 1e-3,
        epochs: 20,
        seed: 4,
        ..FinetuneConfig::default()
    };
    let (clf, _) = finetune_classifier(&model, &train, Some(&TaskData::Intent(all.clone())), &cfg).unwrap();
    let classes = clf.kind.outputs();
    let test = TaskData::Intent(all).labeled(&clf.kind).unwrap();
    let acc = clf.evaluate(&test).unwrap().get("acc_all").unwrap();
    assert!(acc >= 1.0 / classes as f64, "accuracy {acc} with {classes} classes");

    let dir = tempfile::tempdir().unwrap();
    clf.save(dir.path(), json!({"task": "intent"})).unwrap();
    let back = Classifier::load(dir.path()).unwrap();
    assert_eq!(back.kind, clf.kind);
    let inputs: Vec<_> = test.iter().map(|l| l.input.clone()).collect();
    assert_eq!(back.predict(&inputs).unwrap(), clf.predict(&inputs).unwrap());
}

#[test]
fn early_stopping_restores_the_best_step() {
    let ds = corpus(40);
    let model = tiny_model(&ds, 5);
    let acts = TaskData::Act(act_examples(&ds).unwrap());
    let cfg = FinetuneConfig {
        learning_rate: 1e-3,
        epochs: 30,
        eval_every: 2,
        patience: 2,
        seed: 6,
        ..FinetuneConfig::default()
    };
    let (clf, report) = finetune_classifier(&model, &acts, Some(&acts), &cfg).unwrap();
    let best = report.best_score.unwrap();
    let labeled = acts.labeled(&clf.kind).unwrap();
    let score = clf.evaluate(&labeled).unwrap().get("micro_f1").unwrap();
    assert!((score - best).abs() < 1e-12, "restored {score} vs best {best}");
    assert!(report.best_step <= report.steps);
    if report.stopped_early {
        assert!(report.epochs_run < cfg.epochs);
    }
}

#[test]
fn empty_training_set_is_rejected() {
    let ds = corpus(4);
    let model = tiny_model(&ds, 1);
    let r = finetune_classifier(&model, &TaskData::Act(Vec::new()), None, &FinetuneConfig::default());
    assert!(matches!(r, Err(Error::Empty(_))));
}

fn random_vecs(n: usize, d: usize, rng: &mut crate::rng::Rng) -> Vec<Vec<f64>> {
    (0..n).map(|_| (0..d).map(|_| rng.sample(StandardNormal)).collect()).collect()
}

#[test]
fn in_batch_gradients_match_finite_differences() {
    let mut rng = seeded(8);
    let a = random_vecs(4, 5, &mut rng);
    let c = random_vecs(4, 5, &mut rng);
    let scale = 3.0;
    let (_, da, dc) = in_batch_loss(&a, &c, scale).unwrap();
    let h = 1e-6;
    for (which, grads) in [(0, &da), (1, &dc)] {
        for i in 0..4 {
            for j in 0..5 {
                let bump = |delta: f64| {
                    let (mut a2, mut c2) = (a.clone(), c.clone());
                    if which == 0 { a2[i][j] += delta } else { c2[i][j] += delta }
                    in_batch_loss(&a2, &c2, scale).unwrap().0
                };
                let fd = (bump(h) - bump(-h)) / (2.0 * h);
                let g = grads[i][j];
                assert!((fd - g).abs() / fd.abs().max(g.abs()).max(1e-6) < 1e-4, "{which} {i} {j}: {fd} vs {g}");
            }
        }
    }
}

#[test]
fn in_batch_loss_at_random_is_log_batch() {
    let mut rng = seeded(9);
    let trials = 200;
    let mean: f64 = (0..trials)
        .map(|_| {
            let a = random_vecs(25, 64, &mut rng);
            let c = random_vecs(25, 64, &mut rng);
            in_batch_loss(&a, &c, 1.0).unwrap().0
        })
        .sum::<f64>()
        / trials as f64;
    assert!((mean - 25f64.ln()).abs() < 0.3, "mean loss {mean}");
    let one = random_vecs(1, 4, &mut rng);
    assert!(in_batch_loss(&one, &one, 1.0).is_err());
}

#[test]
fn ranking_rules() {
    let anchor = vec![1.0f32, 0.0, 0.0];
    let mut cands = vec![vec![0.0, 1.0, 0.0]; 100];
    cands[37] = anchor.clone();
    let r = rank_by_similarity(&anchor, &cands).unwrap();
    assert_eq!(r[0], 37);
    let same = vec![vec![0.3f32, 0.3, 0.1]; 100];
    assert_eq!(rank_by_similarity(&anchor, &same).unwrap(), (0..100).collect::<Vec<_>>());
    let mut scaled = cands.clone();
    scaled[5] = vec![0.0, 7.0, 0.0];
    scaled[37] = vec![4.0, 0.0, 0.0];
    assert_eq!(rank_by_similarity(&anchor, &scaled).unwrap(), r);
}

#[test]
fn random_rankings_put_gold_uniformly() {
    let mut rng = seeded(10);
    let trials = 2000;
    let mut top10 = 0;
    let mut rank_sum = 0usize;
    for _ in 0..trials {
        let to32 = |v: Vec<Vec<f64>>| v.into_iter().map(|x| x.into_iter().map(|y| y as f32).collect()).collect::<Vec<Vec<f32>>>();
        let anchor = to32(random_vecs(1, 8, &mut rng)).remove(0);
        let cands = to32(random_vecs(100, 8, &mut rng));
        let pos = rank_by_similarity(&anchor, &cands).unwrap().iter().position(|&i| i == 0).unwrap();
        rank_sum += pos;
        top10 += usize::from(pos < 10);
    }
    // uniform over 0..100: mean 49.5, sd of the mean 28.9 / sqrt(trials)
    let mean = rank_sum as f64 / trials as f64;
    assert!((mean - 49.5).abs() < 4.0 * 28.87 / (trials as f64).sqrt(), "mean rank {mean}");
    let p = top10 as f64 / trials as f64;
    assert!((p - 0.1).abs() < 4.0 * (0.09 / trials as f64).sqrt(), "top-10 rate {p}");
}

#[test]
fn pools_hold_gold_once_and_no_duplicates() {
    let ds = corpus(200);
    let ex = rs_examples(&ds);
    let pools = build_rs_pools(&ex, 100, 3).unwrap();
    assert_eq!(pools, build_rs_pools(&ex, 100, 3).unwrap());
    for (p, e) in pools.iter().zip(&ex) {
        assert_eq!(p.candidates.len(), 100);
        assert_eq!(p.candidates[p.gold], e.response);
        assert_eq!(p.candidates.iter().filter(|c| **c == e.response).count(), 1);
        let set: BTreeSet<&String> = p.candidates.iter().collect();
        assert_eq!(set.len(), 100);
    }
    let golds: BTreeSet<usize> = pools.iter().map(|p| p.gold).collect();
    assert!(golds.len() > 10, "gold positions should vary");
    assert!(build_rs_pools(&ex[..3], 100, 3).is_err());
}

#[test]
fn response_selection_training_lowers_loss() {
    let ds = corpus(30);
    let model = tiny_model(&ds, 12);
    let ex = rs_examples(&ds);
    let cfg = FinetuneConfig {
        learning_rate: 1e-3,
        batch_size: Some(8),
        epochs: 8,
        seed: 13,
        ..FinetuneConfig::default()
    };
    let out = finetune_response_selection(&model, &ex, None, &cfg).unwrap();
    let l = &out.report.losses;
    let k = l.len() / 4;
    let head: f64 = l[..k].iter().sum::<f64>() / k as f64;
    let tail: f64 = l[l.len() - k..].iter().sum::<f64>() / k as f64;
    assert!(tail < head, "loss {head} -> {tail}");
    assert!(out.report.collisions > 0, "templated responses repeat within batches");
    let one = FinetuneConfig {
        batch_size: Some(1),
        ..cfg
    };
    assert!(finetune_response_selection(&model, &ex, None, &one).is_err());
}

mod props {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn raising_an_act_logit_never_drops_it(z in proptest::collection::vec(-5.0f32..5.0, 1..8), k in 0usize..8, bump in 0.0f32..5.0) {
            let k = k % z.len();
            let kind = HeadKind::Act { acts: (0..z.len()).map(|i| i.to_string()).collect() };
            let Prediction::Acts(before) = decide(&kind, &z).unwrap() else { unreachable!() };
            let mut up = z.clone();
            up[k] += bump;
            let Prediction::Acts(after) = decide(&kind, &up).unwrap() else { unreachable!() };
            if before.contains(&k) {
                prop_assert!(after.contains(&k));
            }
        }

        #[test]
        fn rankings_are_permutations(seed in any::<u64>(), n in 1usize..120) {
            let mut rng = seeded(seed);
            let anchor: Vec<f32> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
            let cands: Vec<Vec<f32>> = (0..n).map(|_| (0..4).map(|_| rng.random_range(0.1..1.0)).collect()).collect();
            let r = rank_by_similarity(&anchor, &cands).unwrap();
            prop_assert!(crate::eval::check_permutation(&r).is_ok());
            prop_assert_eq!(r.len(), n);
        }

        #[test]
        fn ranking_ignores_positive_rescaling(seed in any::<u64>(), which in 0usize..20, s in 0.01f32..100.0) {
            let mut rng = seeded(seed);
            let anchor: Vec<f32> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
            let cands: Vec<Vec<f32>> = (0..20).map(|_| (0..6).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
            let mut scaled = cands.clone();
            scaled[which].iter_mut().for_each(|x| *x *= s);
            let a = rank_by_similarity(&anchor, &cands).unwrap();
            let b = rank_by_similarity(&anchor, &scaled).unwrap();
            // rescaling can only reorder exact float ties
            let mut sims: Vec<f32> = cands.iter().map(|c| crate::encoder::cosine_similarity(&anchor, c).unwrap()).collect();
            sims.sort_by(f32::total_cmp);
            let distinct = sims.windows(2).all(|w| w[1] - w[0] > 1e-5);
            if distinct {
                prop_assert_eq!(a, b);
            }
        }
    }
}

#[test]
fn cached_evaluation_matches_per_pool_ranking() {
    let ds = corpus(120);
    let model = tiny_model(&ds, 14);
    let pools = build_rs_pools(&rs_examples(&ds), 100, 2).unwrap()[..12].to_vec();
    let report = evaluate_response_selection(&model, &pools).unwrap();
    let rankings: Vec<Vec<usize>> = pools.iter().map(|p| rank_responses(&model, p).unwrap()).collect();
    let golds: Vec<usize> = pools.iter().map(|p| p.gold).collect();
    assert_eq!(report, crate::eval::rs_metrics(&rankings, &golds).unwrap());
}
