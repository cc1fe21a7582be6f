//! Response selection: a shared encoder scores context/response pairs by
//! cosine similarity, trained with the other responses of a batch as
//! negatives and evaluated by ranking a pool of 100 candidates.

use std::collections::BTreeSet;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng as _;

use super::data::RsExample;
use super::{Classifier, FinetuneConfig, FinetuneReport, HeadKind, Task};
use crate::corpus::Utterance;
use crate::encoder::{cosine_similarity, forward, Mode, OutputGrads};
use crate::error::{Error, Result};
use crate::eval::{rs_metrics, MetricReport};
use crate::model::Bundle;
use crate::optim::{Adam, LinearSchedule};
use crate::pretrain::cross_entropy;
use crate::rng::substream;
use crate::tensor::{dot, norm, Real};
use crate::tokenizer::TokenSequence;

/// Candidates per ranking pool.
pub const POOL_SIZE: usize = 100;

/// Gradients of `cos(a, b)` w.r.t. `a` and `b`.
fn cosine_grads<F: Real>(a: &[F], b: &[F]) -> Result<(F, Vec<F>, Vec<F>)> {
    let (na, nb) = (norm(a), norm(b));
    if na == F::zero() || nb == F::zero() {
        return Err(Error::ZeroNorm);
    }
    let c = dot(a, b) / (na * nb);
    let ga = a.iter().zip(b).map(|(&x, &y)| y / (na * nb) - c * x / (na * na)).collect();
    let gb = a.iter().zip(b).map(|(&x, &y)| x / (na * nb) - c * y / (nb * nb)).collect();
    Ok((c, ga, gb))
}

/// Mean cross-entropy of each anchor picking its own candidate among all
/// candidates, with logits `scale * cos(anchor_i, cand_j)`. Returns the loss
/// and its gradients w.r.t. anchors and candidates.
#[allow(clippy::type_complexity)]
pub fn in_batch_loss<F: Real>(anchors: &[Vec<F>], cands: &[Vec<F>], scale: F) -> Result<(F, Vec<Vec<F>>, Vec<Vec<F>>)> {
    let b = anchors.len();
    if b != cands.len() {
        return Err(Error::Shape(format!("{b} anchors for {} candidates", cands.len())));
    }
    if b < 2 {
        return Err(Error::Invalid("in-batch negatives need a batch of at least 2".into()));
    }
    let mut logits = vec![F::zero(); b * b];
    let mut parts = Vec::with_capacity(b * b);
    for (i, a) in anchors.iter().enumerate() {
        for (j, c) in cands.iter().enumerate() {
            let (cos, ga, gc) = cosine_grads(a, c)?;
            logits[i * b + j] = scale * cos;
            parts.push((ga, gc));
        }
    }
    let targets: Vec<usize> = (0..b).collect();
    let (loss, dlogits) = cross_entropy(&logits, b, &targets);
    let inv = F::one() / F::c(b as f64);
    let mut da = vec![vec![F::zero(); anchors[0].len()]; b];
    let mut dc = vec![vec![F::zero(); cands[0].len()]; b];
    for i in 0..b {
        for j in 0..b {
            let g = dlogits[i * b + j] * scale * inv;
            let (ga, gc) = &parts[i * b + j];
            da[i].iter_mut().zip(ga).for_each(|(d, &x)| *d += g * x);
            dc[j].iter_mut().zip(gc).for_each(|(d, &x)| *d += g * x);
        }
    }
    Ok((loss * inv, da, dc))
}

/// Candidate indices by descending similarity to `anchor`; ties keep the
/// lower index first.
pub fn rank_by_similarity(anchor: &[f32], cands: &[Vec<f32>]) -> Result<Vec<usize>> {
    let sims = cands
        .iter()
        .map(|c| cosine_similarity(anchor, c))
        .collect::<Result<Vec<f32>>>()?;
    let mut order: Vec<usize> = (0..cands.len()).collect();
    order.sort_by(|&i, &j| sims[j].total_cmp(&sims[i]).then(i.cmp(&j)));
    Ok(order)
}

fn response_input(text: &str) -> Vec<Utterance> {
    vec![Utterance::system(text)]
}

/// A context with candidate responses, one of them gold.
#[derive(Clone, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct RsPool {
    pub history: Vec<Utterance>,
    pub candidates: Vec<String>,
    pub gold: usize,
}

/// Ranks the pool's candidates for its context.
pub fn rank_responses(model: &Bundle, pool: &RsPool) -> Result<Vec<usize>> {
    if pool.candidates.len() != POOL_SIZE {
        log::warn!("ranking {} candidates instead of {POOL_SIZE}", pool.candidates.len());
    }
    let anchor = model.embed(std::slice::from_ref(&pool.history))?.remove(0);
    let inputs: Vec<Vec<Utterance>> = pool.candidates.iter().map(|c| response_input(c)).collect();
    rank_by_similarity(&anchor, &model.embed(&inputs)?)
}

/// One pool of `size` candidates per example: the gold response at a seeded
/// random position and `size - 1` distinct distractors drawn without
/// replacement from every other response text in `examples`.
pub fn build_rs_pools(examples: &[RsExample], size: usize, seed: u64) -> Result<Vec<RsPool>> {
    if size < 2 {
        return Err(Error::Config(format!("pool size must be at least 2, got {size}")));
    }
    let texts: Vec<&str> = examples
        .iter()
        .map(|e| e.response.as_str())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    if texts.len() < size {
        return Err(Error::Invalid(format!(
            "{} distinct responses cannot fill pools of {size}",
            texts.len()
        )));
    }
    examples
        .iter()
        .enumerate()
        .map(|(i, e)| {
            let mut rng = substream(seed, "rs-pool", i as u64);
            let others: Vec<&str> = texts.iter().copied().filter(|t| *t != e.response).collect();
            let mut candidates: Vec<String> = others
                .choose_multiple(&mut rng, size - 1)
                .map(|s| s.to_string())
                .collect();
            let gold = rng.random_range(0..size);
            candidates.insert(gold, e.response.clone());
            Ok(RsPool {
                history: e.history.clone(),
                candidates,
                gold,
            })
        })
        .collect()
}

/// 1-to-100 and 3-to-100 accuracy over `pools`. Each distinct candidate
/// text is embedded once.
pub fn evaluate_response_selection(model: &Bundle, pools: &[RsPool]) -> Result<MetricReport> {
    let texts: Vec<&str> = pools
        .iter()
        .flat_map(|p| p.candidates.iter().map(String::as_str))
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let inputs: Vec<Vec<Utterance>> = texts.iter().map(|t| response_input(t)).collect();
    let reps = model.embed(&inputs)?;
    let histories: Vec<Vec<Utterance>> = pools.iter().map(|p| p.history.clone()).collect();
    let anchors = model.embed(&histories)?;
    let mut rankings = Vec::with_capacity(pools.len());
    for (p, anchor) in pools.iter().zip(&anchors) {
        if p.candidates.len() != POOL_SIZE {
            log::warn!("ranking {} candidates instead of {POOL_SIZE}", p.candidates.len());
        }
        let cands: Vec<Vec<f32>> = p
            .candidates
            .iter()
            .map(|c| reps[texts.binary_search(&c.as_str()).expect("collected above")].clone())
            .collect();
        rankings.push(rank_by_similarity(anchor, &cands)?);
    }
    let golds: Vec<usize> = pools.iter().map(|p| p.gold).collect();
    rs_metrics(&rankings, &golds)
}

/// Result of response-selection fine-tuning.
#[derive(Clone, Debug)]
pub struct RsReport {
    pub model: Classifier,
    pub report: FinetuneReport,
}

struct Encoded {
    context: TokenSequence,
    response: TokenSequence,
    text: String,
}

/// Mean in-batch loss over `data` in eval mode; batches of one are skipped.
fn eval_loss(model: &Bundle, data: &[Encoded], batch: usize, scale: f32) -> Result<f64> {
    let (mut total, mut n) = (0.0, 0);
    for chunk in data.chunks(batch).filter(|c| c.len() >= 2) {
        let ctx: Vec<&TokenSequence> = chunk.iter().map(|e| &e.context).collect();
        let rsp: Vec<&TokenSequence> = chunk.iter().map(|e| &e.response).collect();
        let a = forward(&model.params, &model.encoder, &ctx, Mode::Eval, false)?;
        let c = forward(&model.params, &model.encoder, &rsp, Mode::Eval, false)?;
        let top = |f: &crate::encoder::Forward<f32>| f.outputs.iter().map(|o| o.top().to_vec()).collect::<Vec<_>>();
        let (l, _, _) = in_batch_loss(&top(&a), &top(&c), scale)?;
        total += f64::from(l);
        n += 1;
    }
    if n == 0 {
        return Err(Error::Empty("validation set yields no batch of two".into()));
    }
    Ok(total / f64::from(n))
}

/// Fine-tunes the encoder with in-batch negatives. With `val`, validates
/// every `eval_every` steps on negative in-batch loss and keeps the best
/// parameters.
pub fn finetune_response_selection(
    model: &Bundle,
    train: &[RsExample],
    val: Option<&[RsExample]>,
    cfg: &FinetuneConfig,
) -> Result<RsReport> {
    cfg.validate()?;
    let batch = cfg.batch_for(Task::Rs);
    if batch < 2 {
        return Err(Error::Config("response selection needs batch_size >= 2".into()));
    }
    if train.len() < 2 {
        return Err(Error::Empty("response selection needs at least 2 training examples".into()));
    }
    let prep = |xs: &[RsExample]| -> Result<Vec<Encoded>> {
        xs.iter()
            .map(|e| {
                Ok(Encoded {
                    context: model.encode(&e.history)?,
                    response: model.encode(&response_input(&e.response))?,
                    text: e.response.clone(),
                })
            })
            .collect()
    };
    let data = prep(train)?;
    let val = match val {
        Some(v) => prep(v)?,
        None => Vec::new(),
    };
    let enc = model.encoder.clone();
    let top = enc.layers - 1;
    let scale = cfg.similarity_scale as f32;
    let mut clf = Classifier::new(model.clone(), HeadKind::Rs, cfg.seed);
    let mut adam = Adam::<f32>::default();
    let per_epoch = data.len() / batch + usize::from(data.len() % batch >= 2);
    let schedule = LinearSchedule {
        base: cfg.learning_rate,
        warmup: 0,
        total: per_epoch * cfg.epochs,
    };
    let mut report = FinetuneReport::default();
    let mut best: Option<(usize, f64, Bundle)> = None;
    let mut since_best = 0;

    'epochs: for epoch in 0..cfg.epochs {
        report.epochs_run = epoch + 1;
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut substream(cfg.seed, "finetune-shuffle", epoch as u64));
        for idx in order.chunks(batch) {
            if idx.len() < 2 {
                log::debug!("epoch {epoch}: dropping a trailing batch of one");
                continue;
            }
            let texts: BTreeSet<&str> = idx.iter().map(|&i| data[i].text.as_str()).collect();
            let dup = idx.len() - texts.len();
            if dup > 0 {
                log::debug!("step {}: {dup} duplicate responses in batch", report.steps);
                report.collisions += dup;
            }
            let ctx: Vec<&TokenSequence> = idx.iter().map(|&i| &data[i].context).collect();
            let rsp: Vec<&TokenSequence> = idx.iter().map(|&i| &data[i].response).collect();
            let mut rng = substream(cfg.seed, "finetune-dropout", report.steps as u64);
            let params = &clf.model.params;
            let fa = forward(params, &enc, &ctx, Mode::Train(&mut rng), true)?;
            let fc = forward(params, &enc, &rsp, Mode::Train(&mut rng), true)?;
            let anchors: Vec<Vec<f32>> = fa.outputs.iter().map(|o| o.top().to_vec()).collect();
            let cands: Vec<Vec<f32>> = fc.outputs.iter().map(|o| o.top().to_vec()).collect();
            let (loss, da, dc) = in_batch_loss(&anchors, &cands, scale)?;
            let mut ga = OutputGrads::new(idx.len(), enc.layers);
            let mut gc = OutputGrads::new(idx.len(), enc.layers);
            for s in 0..idx.len() {
                ga.add_pooled(s, top, &da[s]);
                gc.add_pooled(s, top, &dc[s]);
            }
            let mut grads = fa.backward(params, &enc, &ga)?;
            grads.add_assign(&fc.backward(params, &enc, &gc)?);
            adam.step(clf.model.params.tensors_mut(), grads.tensors(), schedule.lr(report.steps))?;
            if let Some(name) = clf.model.params.first_non_finite() {
                return Err(Error::NonFinite(format!("{name} after fine-tuning step {}", report.steps)));
            }
            report.losses.push(f64::from(loss));
            report.steps += 1;

            if !val.is_empty() && report.steps % cfg.eval_every == 0 {
                let score = -eval_loss(&clf.model, &val, batch, scale)?;
                if best.as_ref().is_none_or(|b| score > b.1) {
                    best = Some((report.steps, score, clf.model.clone()));
                    since_best = 0;
                } else {
                    since_best += 1;
                    if since_best >= cfg.patience {
                        report.stopped_early = true;
                        break 'epochs;
                    }
                }
            }
        }
    }
    if !val.is_empty() && report.steps % cfg.eval_every != 0 {
        let score = -eval_loss(&clf.model, &val, batch, scale)?;
        if best.as_ref().is_none_or(|b| score > b.1) {
            best = Some((report.steps, score, clf.model.clone()));
        }
    }
    match best {
        Some((step, score, m)) => {
            report.best_step = step;
            report.best_score = Some(score);
            clf.model = m;
        }
        None => report.best_step = report.steps,
    }
    Ok(RsReport { model: clf, report })
}
