use super::*;
use crate::rng::{seeded, substream};
use crate::tensor::Real;
use crate::tokenizer::TokenSequence;

fn tiny_cfg(pooling: Pooling) -> EncoderConfig {
    EncoderConfig {
        layers: 2,
        hidden: 8,
        heads: 2,
        ffn: 12,
        max_len: 10,
        dropout: 0.0,
        vocab_size: 20,
        pooling,
    }
}

fn seq(ids: &[u32], mask: &[u8], max_len: usize) -> TokenSequence {
    let mut s = TokenSequence {
        ids: ids.to_vec(),
        attention_mask: mask.to_vec(),
        mlm_labels: vec![-1; ids.len()],
    };
    s.ids.resize(max_len, 0);
    s.attention_mask.resize(max_len, 0);
    s.mlm_labels.resize(max_len, -1);
    s
}

/// Relative error with a floor on the denominator so that entries whose true
/// gradient is (numerically) zero are judged on absolute error.
fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / (a.abs() + b.abs()).max(1e-6)
}

/// Central finite differences over every parameter, compared with the
/// analytic gradient.
fn max_grad_error(
    params: &EncoderParams<f64>,
    analytic: &EncoderParams<f64>,
    loss: &dyn Fn(&EncoderParams<f64>) -> f64,
) -> f64 {
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    let mut p = params.clone();
    let count = p.tensors().len();
    for ti in 0..count {
        let n = p.tensors()[ti].len();
        for i in 0..n {
            let orig = p.tensors()[ti].data[i];
            p.tensors_mut()[ti].data[i] = orig + h;
            let up = loss(&p);
            p.tensors_mut()[ti].data[i] = orig - h;
            let down = loss(&p);
            p.tensors_mut()[ti].data[i] = orig;
            let fd = (up - down) / (2.0 * h);
            worst = worst.max(rel_err(analytic.tensors()[ti].data[i], fd));
        }
    }
    worst
}

fn sq_norm_loss(p: &EncoderParams<f64>, cfg: &EncoderConfig, seqs: &[&TokenSequence]) -> f64 {
    let fw = forward(p, cfg, seqs, Mode::Eval, false).unwrap();
    fw.outputs
        .iter()
        .flat_map(|o| o.pooled.iter())
        .map(|v| v.iter().map(|x| x * x).sum::<f64>())
        .sum()
}

#[test]
fn attention_rows_sum_to_one_and_ignore_padding() {
    let cfg = tiny_cfg(Pooling::Cls);
    let p: EncoderParams<f64> = init_params(&cfg, &mut seeded(1)).unwrap();
    let s = seq(&[2, 7, 8, 9, 3], &[1, 1, 0, 1, 1], 10);
    let fw = forward(&p, &cfg, &[&s], Mode::Eval, true).unwrap();
    for layer in 0..cfg.layers {
        for head in 0..cfg.heads {
            let probs = fw.attention_probs(0, layer, head).unwrap();
            for row in probs.chunks(5) {
                let sum: f64 = row.iter().sum();
                assert!((sum - 1.0).abs() < 1e-6);
                assert_eq!(row[2], 0.0, "padded key must get exactly zero weight");
            }
        }
    }
}

#[test]
fn masked_positions_do_not_influence_others() {
    let cfg = tiny_cfg(Pooling::Cls);
    let p: EncoderParams<f64> = init_params(&cfg, &mut seeded(2)).unwrap();
    let a = seq(&[2, 11, 3], &[1, 0, 1], 10);
    let b = seq(&[2, 15, 3], &[1, 0, 1], 10);
    let oa = encode_sequence(&p, &cfg, &a, Mode::Eval).unwrap();
    let ob = encode_sequence(&p, &cfg, &b, Mode::Eval).unwrap();
    assert_eq!(oa.pooled, ob.pooled);

    // A lone [CLS] followed by padding: the pooled vector is the [CLS] path alone.
    let lone = seq(&[2], &[1], 10);
    let padded = seq(&[2, 0, 0, 0], &[1, 0, 0, 0], 10);
    let o1 = encode_sequence(&p, &cfg, &lone, Mode::Eval).unwrap();
    let o2 = encode_sequence(&p, &cfg, &padded, Mode::Eval).unwrap();
    assert_eq!(o1.pooled, o2.pooled);
    assert_eq!(o1.len, 1);
}

#[test]
fn eval_is_pure_and_train_is_seeded() {
    let cfg = EncoderConfig { dropout: 0.2, ..tiny_cfg(Pooling::Cls) };
    let p: EncoderParams<f32> = init_params(&cfg, &mut seeded(3)).unwrap();
    let s = seq(&[2, 7, 8, 3], &[1, 1, 1, 1], 10);
    let e1 = encode_sequence(&p, &cfg, &s, Mode::Eval).unwrap();
    let e2 = encode_sequence(&p, &cfg, &s, Mode::Eval).unwrap();
    assert_eq!(e1, e2);
    let t1 = encode_sequence(&p, &cfg, &s, Mode::Train(&mut substream(1, "dropout", 0))).unwrap();
    let t2 = encode_sequence(&p, &cfg, &s, Mode::Train(&mut substream(1, "dropout", 0))).unwrap();
    assert_eq!(t1, t2);
    assert_ne!(t1, e1);
}

#[test]
fn batched_equals_individual() {
    let cfg = tiny_cfg(Pooling::Mean);
    let p: EncoderParams<f64> = init_params(&cfg, &mut seeded(4)).unwrap();
    let a = seq(&[2, 7, 8, 3], &[1, 1, 1, 1], 10);
    let b = seq(&[2, 9, 10, 11, 12, 3], &[1, 1, 1, 1, 1, 1], 10);
    let fw = forward(&p, &cfg, &[&a, &b], Mode::Eval, false).unwrap();
    let oa = encode_sequence(&p, &cfg, &a, Mode::Eval).unwrap();
    let ob = encode_sequence(&p, &cfg, &b, Mode::Eval).unwrap();
    for (x, y) in [(&fw.outputs[0], &oa), (&fw.outputs[1], &ob)] {
        for l in 0..cfg.layers {
            for (u, v) in x.pooled[l].iter().zip(&y.pooled[l]) {
                assert!((u - v).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn forward_errors() {
    let cfg = tiny_cfg(Pooling::Cls);
    let mut p: EncoderParams<f32> = init_params(&cfg, &mut seeded(5)).unwrap();
    let long = seq(&[2; 11], &[1; 11], 11);
    assert!(matches!(
        encode_sequence(&p, &cfg, &long, Mode::Eval),
        Err(crate::Error::SequenceTooLong { len: 11, max_len: 10 })
    ));
    let empty = seq(&[], &[], 10);
    assert!(encode_sequence(&p, &cfg, &empty, Mode::Eval).is_err());

    p.layers[1].w1.data[0] = f32::NAN;
    let s = seq(&[2, 7, 3], &[1, 1, 1], 10);
    match encode_sequence(&p, &cfg, &s, Mode::Eval) {
        Err(crate::Error::NonFinite(what)) => assert!(what.contains("layer 2"), "{what}"),
        other => panic!("expected NaN error, got {other:?}"),
    }
}

#[test]
fn backward_requires_recording() {
    let cfg = tiny_cfg(Pooling::Cls);
    let p: EncoderParams<f64> = init_params(&cfg, &mut seeded(6)).unwrap();
    let s = seq(&[2, 7, 3], &[1, 1, 1], 10);
    let fw = forward(&p, &cfg, &[&s], Mode::Eval, false).unwrap();
    assert!(!fw.is_recorded());
    assert!(fw.backward(&p, &cfg, &OutputGrads::new(1, cfg.layers)).is_err());
}

#[test]
fn pooling_cases() {
    let v = [1.0f64, -2.0, 3.0];
    let only = pool(&v, &[true], 3, Pooling::Cls).unwrap();
    assert_eq!(only, pool(&v, &[true], 3, Pooling::Mean).unwrap());
    assert_eq!(only, v);

    let sym = [1.0f64, -2.0, 3.0, -1.0, 2.0, -3.0];
    assert_eq!(pool(&sym, &[true, true], 3, Pooling::Mean).unwrap(), [0.0; 3]);

    // hand-computed average of rows 0 and 2 (row 1 masked out)
    let states = [1.0f64, 2.0, 3.0, 100.0, 100.0, 100.0, 5.0, -2.0, 0.0];
    let mean = pool(&states, &[true, false, true], 3, Pooling::Mean).unwrap();
    assert_eq!(mean, [3.0, 0.0, 1.5]);
    let all = pool(&states, &[true, true, true], 3, Pooling::Mean).unwrap();
    for (x, y) in all.iter().zip([106.0 / 3.0, 100.0 / 3.0, 103.0 / 3.0]) {
        assert!((x - y).abs() < 1e-12);
    }
    assert!(pool(&states, &[false, false, false], 3, Pooling::Mean).is_err());
}

#[test]
fn cosine_cases() {
    let a = [1.0f64, 2.0, -0.5];
    assert!((cosine_similarity(&a, &a).unwrap() - 1.0).abs() < 1e-12);
    assert_eq!(cosine_similarity(&[1.0f64, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
    let twice: Vec<f64> = a.iter().map(|x| 2.0 * x).collect();
    assert!((cosine_similarity(&a, &twice).unwrap() - 1.0).abs() < 1e-12);
    assert!(matches!(cosine_similarity(&a, &[0.0; 3]), Err(crate::Error::ZeroNorm)));
}

#[test]
fn pooled_norm_gradient_matches_finite_differences() {
    for pooling in [Pooling::Cls, Pooling::Mean] {
        let cfg = tiny_cfg(pooling);
        let p: EncoderParams<f64> = init_params::<f32, _>(&cfg, &mut seeded(7)).unwrap().cast();
        // make biases and gains non-trivial so their gradients are exercised
        let mut p = p;
        let mut r = seeded(70);
        for t in p.tensors_mut() {
            for x in &mut t.data {
                *x += 0.1 * (rand::Rng::random::<f64>(&mut r) - 0.5);
            }
        }
        let a = seq(&[2, 7, 8, 9, 3], &[1, 1, 1, 1, 1], 10);
        let b = seq(&[2, 12, 3], &[1, 1, 1], 10);
        let seqs = [&a, &b];
        let fw = forward(&p, &cfg, &seqs, Mode::Eval, true).unwrap();
        let mut og = OutputGrads::new(2, cfg.layers);
        for (s, o) in fw.outputs.iter().enumerate() {
            for l in 0..cfg.layers {
                let g: Vec<f64> = o.pooled[l].iter().map(|x| 2.0 * x).collect();
                og.add_pooled(s, l, &g);
            }
        }
        let grads = fw.backward(&p, &cfg, &og).unwrap();
        let err = max_grad_error(&p, &grads, &|q| sq_norm_loss(q, &cfg, &seqs));
        assert!(err < 1e-3, "{pooling:?}: max relative error {err}");
    }
}

#[test]
fn mlm_head_gradient_matches_finite_differences() {
    let cfg = tiny_cfg(Pooling::Cls);
    let mut p: EncoderParams<f64> = init_params(&cfg, &mut seeded(8)).unwrap();
    let mut r = seeded(80);
    for t in p.tensors_mut() {
        for x in &mut t.data {
            *x += 0.1 * (rand::Rng::random::<f64>(&mut r) - 0.5);
        }
    }
    let s = seq(&[2, 7, 4, 9, 3], &[1, 1, 1, 1, 1], 10);
    let rows = [1usize, 2];
    let targets = [7usize, 8];
    // loss = sum over rows of -log softmax(logits)[target]
    let loss = |q: &EncoderParams<f64>| {
        let out = encode_sequence(q, &cfg, &s, Mode::Eval).unwrap();
        let x: Vec<f64> = rows.iter().flat_map(|&r| out.state(cfg.layers - 1, r).to_vec()).collect();
        let (logits, _) = mlm_forward(q, &cfg, x);
        logits
            .chunks(cfg.vocab_size)
            .zip(targets)
            .map(|(row, t)| {
                let m = row.iter().cloned().fold(f64::MIN, f64::max);
                let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
                lse - row[t]
            })
            .sum::<f64>()
    };

    let fw = forward(&p, &cfg, &[&s], Mode::Eval, true).unwrap();
    let x: Vec<f64> = rows.iter().flat_map(|&r| fw.outputs[0].state(cfg.layers - 1, r).to_vec()).collect();
    let (logits, tape) = mlm_forward(&p, &cfg, x);
    let mut dlogits = vec![0.0; logits.len()];
    for ((row, drow), t) in logits.chunks(cfg.vocab_size).zip(dlogits.chunks_mut(cfg.vocab_size)).zip(targets) {
        let m = row.iter().cloned().fold(f64::MIN, f64::max);
        let z: f64 = row.iter().map(|v| (v - m).exp()).sum();
        for (j, d) in drow.iter_mut().enumerate() {
            *d = (row[j] - m).exp() / z - if j == t { 1.0 } else { 0.0 };
        }
    }
    let mut head_grads = p.zeros_like();
    let dx = mlm_backward(&p, &cfg, &tape, &dlogits, &mut head_grads);
    let mut og = OutputGrads::new(1, cfg.layers);
    for (i, &r) in rows.iter().enumerate() {
        og.add_top_state(0, r, &dx[i * cfg.hidden..(i + 1) * cfg.hidden]);
    }
    let mut grads = fw.backward(&p, &cfg, &og).unwrap();
    grads.add_assign(&head_grads);
    let err = max_grad_error(&p, &grads, &loss);
    assert!(err < 1e-3, "max relative error {err}");
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let cfg = tiny_cfg(Pooling::Mean);
    let p: EncoderParams<f32> = init_params(&cfg, &mut seeded(9)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let meta = serde_json::json!({"seed": 9});
    let m = save_checkpoint(dir.path(), &p, &cfg, 3, meta.clone()).unwrap();
    let (q, cfg2, m2): (EncoderParams<f32>, _, _) = load_checkpoint(dir.path()).unwrap();
    assert_eq!(cfg, cfg2);
    assert_eq!(m, m2);
    assert_eq!(m2.epoch, 3);
    assert_eq!(m2.metadata, meta);
    for (a, b) in p.tensors().iter().zip(q.tensors()) {
        let ab: Vec<u32> = a.data.iter().map(|v| v.to_bits()).collect();
        let bb: Vec<u32> = b.data.iter().map(|v| v.to_bits()).collect();
        assert_eq!(ab, bb);
    }
    let bytes = std::fs::read(dir.path().join("params.bin")).unwrap();
    assert_eq!(bytes.len(), p.param_count() * 4);
    assert_eq!(&bytes[..4], &p.tok_emb.data[0].to_le_bytes());
    // re-saving produces identical files
    let dir2 = tempfile::tempdir().unwrap();
    save_checkpoint(dir2.path(), &q, &cfg2, 3, meta).unwrap();
    for f in ["params.bin", "manifest.json"] {
        assert_eq!(std::fs::read(dir.path().join(f)).unwrap(), std::fs::read(dir2.path().join(f)).unwrap());
    }
}

#[test]
fn f32_and_f64_agree() {
    let cfg = tiny_cfg(Pooling::Cls);
    let p: EncoderParams<f32> = init_params(&cfg, &mut seeded(10)).unwrap();
    let s = seq(&[2, 7, 8, 3], &[1, 1, 1, 1], 10);
    let a = encode_sequence(&p, &cfg, &s, Mode::Eval).unwrap();
    let b = encode_sequence(&p.cast::<f64>(), &cfg, &s, Mode::Eval).unwrap();
    for (x, y) in a.top().iter().zip(b.top()) {
        assert!((f64::from(*x) - y).abs() < 1e-4);
    }
    let _ = f32::c(0.5);
}
