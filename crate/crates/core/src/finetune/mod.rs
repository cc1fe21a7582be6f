//! Downstream fine-tuning: a single linear head on the pooled top-layer
//! representation for intent recognition (softmax), dialogue act prediction
//! (per-act sigmoid) and dialogue state tracking (one softmax per slot), and
//! a shared encoder trained with in-batch negatives for response selection.

mod data;
mod rs;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use serde_json::json;

pub use data::{
    act_examples, dst_examples, intent_examples, read_jsonl, rs_examples, write_jsonl, ActExample, DstExample,
    IntentExample, RsExample, NONE_VALUE, OOD_LABEL,
};
pub use rs::{
    build_rs_pools, evaluate_response_selection, finetune_response_selection, in_batch_loss, rank_by_similarity,
    rank_responses, RsPool, RsReport, POOL_SIZE,
};

use crate::corpus::Utterance;
use crate::encoder::{forward, read_tensors, write_tensors, Mode, OutputGrads};
use crate::error::{Error, Result};
use crate::eval::{dst_metrics, f1_metrics, intent_metrics, MetricReport};
use crate::model::{embed_sequences, Bundle};
use crate::optim::{Adam, LinearSchedule};
use crate::pretrain::cross_entropy;
use crate::rng::substream;
use crate::tensor::Tensor;
use crate::tokenizer::TokenSequence;

/// Standard deviation of the head weight initialization.
const HEAD_INIT_STD: f64 = 0.02;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Intent,
    Act,
    Dst,
    Rs,
}

impl Task {
    /// Batch sizes used for each task unless configured otherwise.
    pub fn default_batch_size(self) -> usize {
        match self {
            Task::Intent => 8,
            Task::Act => 16,
            Task::Dst => 25,
            Task::Rs => 25,
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Task::Intent => "intent",
            Task::Act => "act",
            Task::Dst => "dst",
            Task::Rs => "rs",
        })
    }
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "intent" => Ok(Task::Intent),
            "act" => Ok(Task::Act),
            "dst" => Ok(Task::Dst),
            "rs" => Ok(Task::Rs),
            _ => Err(Error::Config(format!("unknown task {s:?} (intent, act, dst, rs)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FinetuneConfig {
    pub learning_rate: f64,
    /// Task default when absent.
    pub batch_size: Option<usize>,
    pub epochs: usize,
    /// Validate every this many optimizer steps.
    pub eval_every: usize,
    /// Stop after this many validations without improvement.
    pub patience: usize,
    /// Train the head only, on eval-mode features.
    pub freeze_encoder: bool,
    /// Multiplier on cosine similarities in the response-selection softmax.
    pub similarity_scale: f64,
    /// Share of the training data held out for validation when no
    /// validation set is given.
    pub val_fraction: f64,
    #[serde(skip)]
    pub seed: u64,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        FinetuneConfig {
            learning_rate: 1e-4,
            batch_size: None,
            epochs: 50,
            eval_every: 50,
            patience: 10,
            freeze_encoder: false,
            similarity_scale: 1.0,
            val_fraction: 0.1,
            seed: 0,
        }
    }
}

impl FinetuneConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if self.batch_size == Some(0) || self.epochs == 0 || self.eval_every == 0 || self.patience == 0 {
            return bad("batch_size, epochs, eval_every and patience must be >= 1".into());
        }
        if !(self.similarity_scale > 0.0 && self.similarity_scale.is_finite()) {
            return bad(format!("similarity_scale must be positive, got {}", self.similarity_scale));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return bad(format!("val_fraction must be in [0, 1), got {}", self.val_fraction));
        }
        Ok(())
    }

    pub fn batch_for(&self, task: Task) -> usize {
        self.batch_size.unwrap_or(task.default_batch_size())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlotValues {
    pub name: String,
    /// `none` first, then the observed values in sorted order.
    pub values: Vec<String>,
}

/// Label space of a head, stored with it.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "task", rename_all = "lowercase")]
pub enum HeadKind {
    /// In-domain classes in sorted order, then [`OOD_LABEL`] if present.
    Intent { classes: Vec<String> },
    Act { acts: Vec<String> },
    Dst { slots: Vec<SlotValues> },
    /// Response selection has no head.
    Rs,
}

impl HeadKind {
    pub fn task(&self) -> Task {
        match self {
            HeadKind::Intent { .. } => Task::Intent,
            HeadKind::Act { .. } => Task::Act,
            HeadKind::Dst { .. } => Task::Dst,
            HeadKind::Rs => Task::Rs,
        }
    }

    pub fn outputs(&self) -> usize {
        match self {
            HeadKind::Intent { classes } => classes.len(),
            HeadKind::Act { acts } => acts.len(),
            HeadKind::Dst { slots } => slots.iter().map(|s| s.values.len()).sum(),
            HeadKind::Rs => 0,
        }
    }

    pub fn ood_class(&self) -> Option<usize> {
        match self {
            HeadKind::Intent { classes } => classes.iter().position(|c| c == OOD_LABEL),
            _ => None,
        }
    }

    /// `(offset, len)` of each slot's logits.
    fn segments(&self) -> Vec<(usize, usize)> {
        let mut off = 0;
        match self {
            HeadKind::Dst { slots } => slots
                .iter()
                .map(|s| {
                    let seg = (off, s.values.len());
                    off += s.values.len();
                    seg
                })
                .collect(),
            _ => Vec::new(),
        }
    }
}

/// Training targets.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Target {
    Class(usize),
    Multi(Vec<bool>),
    /// Value index per slot, in head order.
    Slots(Vec<usize>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Labeled {
    pub input: Vec<Utterance>,
    pub target: Target,
}

/// Examples of one classification task.
#[derive(Clone, Debug, PartialEq)]
pub enum TaskData {
    Intent(Vec<IntentExample>),
    Act(Vec<ActExample>),
    Dst(Vec<DstExample>),
}

impl TaskData {
    pub fn read(task: Task, path: impl AsRef<Path>) -> Result<Self> {
        match task {
            Task::Intent => Ok(TaskData::Intent(read_jsonl(path)?)),
            Task::Act => Ok(TaskData::Act(read_jsonl(path)?)),
            Task::Dst => Ok(TaskData::Dst(read_jsonl(path)?)),
            Task::Rs => Err(Error::Config("response selection is not a classification task".into())),
        }
    }

    pub fn len(&self) -> usize {
        match self {
            TaskData::Intent(v) => v.len(),
            TaskData::Act(v) => v.len(),
            TaskData::Dst(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Label space observed in this data.
    pub fn head_kind(&self) -> HeadKind {
        match self {
            TaskData::Intent(v) => {
                let set: BTreeSet<&str> = v.iter().filter(|e| !e.is_ood()).map(|e| e.label.as_str()).collect();
                let mut classes: Vec<String> = set.into_iter().map(String::from).collect();
                if v.iter().any(IntentExample::is_ood) {
                    classes.push(OOD_LABEL.into());
                }
                HeadKind::Intent { classes }
            }
            TaskData::Act(v) => {
                let set: BTreeSet<&str> = v.iter().flat_map(|e| e.acts.iter().map(String::as_str)).collect();
                HeadKind::Act {
                    acts: set.into_iter().map(String::from).collect(),
                }
            }
            TaskData::Dst(v) => {
                let mut values: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
                for e in v {
                    for (k, val) in &e.slots {
                        let entry = values.entry(k.as_str()).or_default();
                        if val != NONE_VALUE {
                            entry.insert(val.as_str());
                        }
                    }
                }
                let slots = values
                    .into_iter()
                    .map(|(name, vals)| SlotValues {
                        name: name.into(),
                        values: std::iter::once(NONE_VALUE)
                            .chain(vals)
                            .map(String::from)
                            .collect(),
                    })
                    .collect();
                HeadKind::Dst { slots }
            }
        }
    }

    /// Converts to targets over `kind`'s label space.
    pub fn labeled(&self, kind: &HeadKind) -> Result<Vec<Labeled>> {
        let unknown = |what: &str, v: &str| Error::Invalid(format!("{what} {v:?} is not in the label space"));
        match (self, kind) {
            (TaskData::Intent(v), HeadKind::Intent { classes }) => v
                .iter()
                .map(|e| {
                    let c = classes.iter().position(|c| *c == e.label).ok_or_else(|| unknown("intent", &e.label))?;
                    Ok(Labeled {
                        input: vec![Utterance::user(e.text.clone())],
                        target: Target::Class(c),
                    })
                })
                .collect(),
            (TaskData::Act(v), HeadKind::Act { acts }) => v
                .iter()
                .map(|e| {
                    let mut y = vec![false; acts.len()];
                    for a in &e.acts {
                        y[acts.iter().position(|x| x == a).ok_or_else(|| unknown("act", a))?] = true;
                    }
                    Ok(Labeled {
                        input: e.history.clone(),
                        target: Target::Multi(y),
                    })
                })
                .collect(),
            (TaskData::Dst(v), HeadKind::Dst { slots }) => v
                .iter()
                .map(|e| {
                    if let Some(k) = e.slots.keys().find(|k| !slots.iter().any(|s| s.name == **k)) {
                        return Err(unknown("slot", k));
                    }
                    let idx = slots
                        .iter()
                        .map(|s| {
                            let val = e.slots.get(&s.name).map_or(NONE_VALUE, String::as_str);
                            s.values.iter().position(|x| x == val).ok_or_else(|| unknown("slot value", val))
                        })
                        .collect::<Result<Vec<_>>>()?;
                    Ok(Labeled {
                        input: e.history.clone(),
                        target: Target::Slots(idx),
                    })
                })
                .collect(),
            _ => Err(Error::Config(format!("{:?} data for a {} head", self.task(), kind.task()))),
        }
    }

    /// Both example lists as one.
    pub fn concat(&self, other: &TaskData) -> Result<TaskData> {
        match (self, other) {
            (TaskData::Intent(a), TaskData::Intent(b)) => Ok(TaskData::Intent([a.as_slice(), b].concat())),
            (TaskData::Act(a), TaskData::Act(b)) => Ok(TaskData::Act([a.as_slice(), b].concat())),
            (TaskData::Dst(a), TaskData::Dst(b)) => Ok(TaskData::Dst([a.as_slice(), b].concat())),
            _ => Err(Error::Config(format!("cannot mix {} and {} data", self.task(), other.task()))),
        }
    }

    pub fn task(&self) -> Task {
        match self {
            TaskData::Intent(_) => Task::Intent,
            TaskData::Act(_) => Task::Act,
            TaskData::Dst(_) => Task::Dst,
        }
    }
}

/// Task output for one input.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Prediction {
    Class(usize),
    Acts(Vec<usize>),
    Slots(BTreeMap<String, String>),
}

/// Index of the largest value; the first one on ties.
pub fn argmax(xs: &[f32]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

pub fn sigmoid(x: f32) -> f32 {
    1.0 / (1.0 + (-x).exp())
}

/// Acts whose probability reaches the 0.5 threshold (inclusive).
pub fn act_set(probs: &[f32]) -> Vec<usize> {
    probs
        .iter()
        .enumerate()
        .filter(|(_, &p)| p >= 0.5)
        .map(|(i, _)| i)
        .collect()
}

/// Decodes head logits into a prediction.
pub fn decide(kind: &HeadKind, logits: &[f32]) -> Result<Prediction> {
    if logits.len() != kind.outputs() {
        return Err(Error::Shape(format!("{} logits for {} outputs", logits.len(), kind.outputs())));
    }
    match kind {
        HeadKind::Intent { .. } => Ok(Prediction::Class(argmax(logits))),
        HeadKind::Act { .. } => {
            let probs: Vec<f32> = logits.iter().map(|&z| sigmoid(z)).collect();
            Ok(Prediction::Acts(act_set(&probs)))
        }
        HeadKind::Dst { slots } => Ok(Prediction::Slots(
            slots
                .iter()
                .zip(kind.segments())
                .map(|(s, (off, len))| (s.name.clone(), s.values[argmax(&logits[off..off + len])].clone()))
                .collect(),
        )),
        HeadKind::Rs => Err(Error::Config("response selection has no classification head".into())),
    }
}

/// Loss of one example and its gradient w.r.t. the logits.
fn head_loss(kind: &HeadKind, logits: &[f32], target: &Target) -> Result<(f64, Vec<f32>)> {
    let out = kind.outputs();
    match (kind, target) {
        (HeadKind::Intent { .. }, Target::Class(c)) if *c < out => {
            let (l, g) = cross_entropy(logits, out, &[*c]);
            Ok((f64::from(l), g))
        }
        (HeadKind::Act { .. }, Target::Multi(y)) if y.len() == out => {
            // binary cross-entropy summed over acts, in the stable form
            let mut loss = 0.0;
            let g = logits
                .iter()
                .zip(y)
                .map(|(&z, &yi)| {
                    let t = if yi { 1.0 } else { 0.0 };
                    loss += f64::from(z.max(0.0) - z * t + (-z.abs()).exp().ln_1p());
                    sigmoid(z) - t
                })
                .collect();
            Ok((loss, g))
        }
        (HeadKind::Dst { .. }, Target::Slots(idx)) if idx.len() == kind.segments().len() => {
            let mut loss = 0.0;
            let mut g = vec![0.0; out];
            for ((off, len), &v) in kind.segments().into_iter().zip(idx) {
                if v >= len {
                    return Err(Error::LabelOutOfRange { label: v as i64, classes: len });
                }
                let (l, gs) = cross_entropy(&logits[off..off + len], len, &[v]);
                loss += f64::from(l);
                g[off..off + len].copy_from_slice(&gs);
            }
            Ok((loss, g))
        }
        (_, Target::Class(c)) => Err(Error::LabelOutOfRange {
            label: *c as i64,
            classes: out,
        }),
        _ => Err(Error::Shape(format!("target {target:?} does not fit a {} head", kind.task()))),
    }
}

/// `w h + b`.
pub fn head_logits(w: &Tensor<f32>, b: &Tensor<f32>, h: &[f32]) -> Vec<f32> {
    w.data
        .chunks_exact(h.len())
        .zip(&b.data)
        .map(|(row, &bias)| row.iter().zip(h).map(|(a, x)| a * x).sum::<f32>() + bias)
        .collect()
}

/// Head gradients for a batch of pooled features, with the loss averaged
/// over the batch.
pub struct HeadGrads {
    pub loss: f64,
    pub w: Tensor<f32>,
    pub b: Tensor<f32>,
    /// Gradient w.r.t. each pooled input.
    pub pooled: Vec<Vec<f32>>,
}

pub fn head_gradients(
    kind: &HeadKind,
    w: &Tensor<f32>,
    b: &Tensor<f32>,
    pooled: &[&[f32]],
    targets: &[&Target],
) -> Result<HeadGrads> {
    if pooled.len() != targets.len() || pooled.is_empty() {
        return Err(Error::Shape(format!("{} inputs for {} targets", pooled.len(), targets.len())));
    }
    let scale = 1.0 / pooled.len() as f32;
    let mut g = HeadGrads {
        loss: 0.0,
        w: Tensor::zeros_like(w),
        b: Tensor::zeros_like(b),
        pooled: Vec::with_capacity(pooled.len()),
    };
    for (h, t) in pooled.iter().zip(targets) {
        let d = h.len();
        let (l, dz) = head_loss(kind, &head_logits(w, b, h), t)?;
        g.loss += l / pooled.len() as f64;
        let mut dh = vec![0.0f32; d];
        for (o, &gz) in dz.iter().enumerate() {
            let gz = gz * scale;
            g.b.data[o] += gz;
            let row = &w.data[o * d..(o + 1) * d];
            let grow = &mut g.w.data[o * d..(o + 1) * d];
            for j in 0..d {
                grow[j] += gz * h[j];
                dh[j] += gz * row[j];
            }
        }
        g.pooled.push(dh);
    }
    Ok(g)
}

/// An encoder with a trained task head.
#[derive(Clone, Debug)]
pub struct Classifier {
    pub kind: HeadKind,
    /// `outputs x hidden`
    pub w: Tensor<f32>,
    pub b: Tensor<f32>,
    pub model: Bundle,
}

pub const HEAD_DIR: &str = "head";

impl Classifier {
    /// Fresh head with small random weights.
    pub fn new(model: Bundle, kind: HeadKind, seed: u64) -> Self {
        let (out, d) = (kind.outputs(), model.encoder.hidden);
        let normal = Normal::new(0.0, HEAD_INIT_STD).expect("valid std");
        let mut rng = substream(seed, "head", 0);
        let w = Tensor {
            shape: vec![out, d],
            data: (0..out * d).map(|_| normal.sample(&mut rng) as f32).collect(),
        };
        Classifier {
            kind,
            w,
            b: Tensor::zeros(&[out]),
            model,
        }
    }

    pub fn logits(&self, pooled: &[f32]) -> Vec<f32> {
        head_logits(&self.w, &self.b, pooled)
    }

    pub fn predict(&self, inputs: &[Vec<Utterance>]) -> Result<Vec<Prediction>> {
        self.model
            .embed(inputs)?
            .iter()
            .map(|h| decide(&self.kind, &self.logits(h)))
            .collect()
    }

    /// Scores `data` with the task's metrics.
    pub fn evaluate(&self, data: &[Labeled]) -> Result<MetricReport> {
        let inputs: Vec<Vec<Utterance>> = data.iter().map(|l| l.input.clone()).collect();
        let preds = self.predict(&inputs)?;
        match &self.kind {
            HeadKind::Intent { .. } => {
                let p: Vec<usize> = preds.iter().map(|p| if let Prediction::Class(c) = p { *c } else { 0 }).collect();
                let g = data
                    .iter()
                    .map(|l| match l.target {
                        Target::Class(c) => Ok(c),
                        _ => Err(Error::Shape("intent gold must be a class".into())),
                    })
                    .collect::<Result<Vec<_>>>()?;
                intent_metrics(&p, &g, self.kind.ood_class())
            }
            HeadKind::Act { acts } => {
                let p: Vec<Vec<bool>> = preds
                    .iter()
                    .map(|p| {
                        let mut row = vec![false; acts.len()];
                        if let Prediction::Acts(set) = p {
                            set.iter().for_each(|&i| row[i] = true);
                        }
                        row
                    })
                    .collect();
                let g = data
                    .iter()
                    .map(|l| match &l.target {
                        Target::Multi(y) => Ok(y.clone()),
                        _ => Err(Error::Shape("act gold must be a binary vector".into())),
                    })
                    .collect::<Result<Vec<_>>>()?;
                f1_metrics(&p, &g)
            }
            HeadKind::Dst { slots } => {
                let p: Vec<BTreeMap<String, String>> = preds
                    .into_iter()
                    .map(|p| if let Prediction::Slots(m) = p { m } else { BTreeMap::new() })
                    .collect();
                let g = data
                    .iter()
                    .map(|l| match &l.target {
                        Target::Slots(idx) => Ok(slots
                            .iter()
                            .zip(idx)
                            .map(|(s, &i)| (s.name.clone(), s.values[i].clone()))
                            .collect()),
                        _ => Err(Error::Shape("dst gold must be slot indices".into())),
                    })
                    .collect::<Result<Vec<_>>>()?;
                dst_metrics(&p, &g)
            }
            HeadKind::Rs => Err(Error::Config("use evaluate_response_selection for rs".into())),
        }
    }

    /// The headline validation metric of the task.
    fn score(&self, data: &[Labeled]) -> Result<f64> {
        let r = self.evaluate(data)?;
        let key = match self.kind {
            HeadKind::Intent { .. } => "acc_all",
            HeadKind::Act { .. } => "micro_f1",
            _ => "joint_acc",
        };
        Ok(r.get(key).unwrap_or(0.0))
    }

    /// Writes the encoder bundle to `dir` and the head to `dir/head`.
    pub fn save(&self, dir: impl AsRef<Path>, metadata: serde_json::Value) -> Result<()> {
        let dir = dir.as_ref();
        let epoch = self.model.manifest.as_ref().map_or(0, |m| m.epoch);
        self.model.save(dir, epoch, metadata.clone())?;
        let named = if self.kind == HeadKind::Rs {
            Vec::new()
        } else {
            vec![("head.w".to_string(), &self.w), ("head.b".to_string(), &self.b)]
        };
        write_tensors(dir.join(HEAD_DIR), &named, serde_json::to_value(&self.kind)?, epoch, metadata)?;
        Ok(())
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let model = Bundle::load(dir)?;
        let (manifest, named) = read_tensors::<f32>(dir.join(HEAD_DIR))?;
        let kind: HeadKind = serde_json::from_value(manifest.config)?;
        let (out, d) = (kind.outputs(), model.encoder.hidden);
        let mut w = Tensor::zeros(&[out, d]);
        let mut b = Tensor::zeros(&[out]);
        for (name, t) in named {
            match name.as_str() {
                "head.w" if t.shape == w.shape => w = t,
                "head.b" if t.shape == b.shape => b = t,
                _ => return Err(Error::Shape(format!("unexpected head tensor {name} {:?}", t.shape))),
            }
        }
        Ok(Classifier { kind, w, b, model })
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FinetuneReport {
    pub steps: usize,
    pub epochs_run: usize,
    /// Step whose parameters were kept (the last one without validation).
    pub best_step: usize,
    pub best_score: Option<f64>,
    pub stopped_early: bool,
    /// Mean training loss of each step.
    pub losses: Vec<f64>,
    /// In-batch duplicate responses seen (response selection only).
    #[serde(default)]
    pub collisions: usize,
}

struct Snapshot {
    step: usize,
    score: f64,
    clf: Classifier,
}

/// Fine-tunes the encoder and a fresh head on `train`, validating on `val`
/// every `eval_every` steps with early stopping. Without validation data the
/// run goes the full `epochs` and keeps the final parameters.
pub fn finetune_classifier(
    model: &Bundle,
    train: &TaskData,
    val: Option<&TaskData>,
    cfg: &FinetuneConfig,
) -> Result<(Classifier, FinetuneReport)> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::Empty("fine-tuning training set".into()));
    }
    // labels seen only in validation still get an output
    let kind = match val {
        Some(v) => train.concat(v)?.head_kind(),
        None => train.head_kind(),
    };
    let examples = train.labeled(&kind)?;
    let val = match val {
        Some(v) => v.labeled(&kind)?,
        None => Vec::new(),
    };
    let seqs = examples
        .iter()
        .map(|l| model.encode(&l.input))
        .collect::<Result<Vec<TokenSequence>>>()?;
    let task = kind.task();
    let batch_size = cfg.batch_for(task);
    let enc = model.encoder.clone();
    let top = enc.layers - 1;
    let mut clf = Classifier::new(model.clone(), kind, cfg.seed);
    let mut adam = Adam::<f32>::default();
    let per_epoch = examples.len().div_ceil(batch_size);
    let schedule = LinearSchedule {
        base: cfg.learning_rate,
        warmup: 0,
        total: per_epoch * cfg.epochs,
    };
    let frozen = if cfg.freeze_encoder {
        Some(embed_sequences(&model.params, &enc, &seqs)?)
    } else {
        None
    };
    let mut report = FinetuneReport::default();
    let mut best: Option<Snapshot> = None;
    let mut since_best = 0;

    'epochs: for epoch in 0..cfg.epochs {
        report.epochs_run = epoch + 1;
        let mut order: Vec<usize> = (0..examples.len()).collect();
        order.shuffle(&mut substream(cfg.seed, "finetune-shuffle", epoch as u64));
        for idx in order.chunks(batch_size) {
            let targets: Vec<&Target> = idx.iter().map(|&i| &examples[i].target).collect();
            let lr = schedule.lr(report.steps);
            let loss = match &frozen {
                Some(feats) => {
                    let pooled: Vec<&[f32]> = idx.iter().map(|&i| feats[i].as_slice()).collect();
                    let g = head_gradients(&clf.kind, &clf.w, &clf.b, &pooled, &targets)?;
                    adam.step(vec![&mut clf.w, &mut clf.b], vec![&g.w, &g.b], lr)?;
                    g.loss
                }
                None => {
                    let batch: Vec<&TokenSequence> = idx.iter().map(|&i| &seqs[i]).collect();
                    let mut rng = substream(cfg.seed, "finetune-dropout", report.steps as u64);
                    let fw = forward(&clf.model.params, &enc, &batch, Mode::Train(&mut rng), true)?;
                    let pooled: Vec<&[f32]> = fw.outputs.iter().map(|o| o.top()).collect();
                    let g = head_gradients(&clf.kind, &clf.w, &clf.b, &pooled, &targets)?;
                    let mut og = OutputGrads::new(idx.len(), enc.layers);
                    for (s, dh) in g.pooled.iter().enumerate() {
                        og.add_pooled(s, top, dh);
                    }
                    let ge = fw.backward(&clf.model.params, &enc, &og)?;
                    let mut ps = clf.model.params.tensors_mut();
                    ps.push(&mut clf.w);
                    ps.push(&mut clf.b);
                    let mut gs = ge.tensors();
                    gs.push(&g.w);
                    gs.push(&g.b);
                    adam.step(ps, gs, lr)?;
                    g.loss
                }
            };
            if let Some(name) = clf.model.params.first_non_finite() {
                return Err(Error::NonFinite(format!("{name} after fine-tuning step {}", report.steps)));
            }
            report.losses.push(loss);
            report.steps += 1;

            if !val.is_empty() && report.steps % cfg.eval_every == 0 {
                let score = clf.score(&val)?;
                log::debug!("step {}: validation {score:.4}", report.steps);
                if best.as_ref().is_none_or(|b| score > b.score) {
                    best = Some(Snapshot {
                        step: report.steps,
                        score,
                        clf: clf.clone(),
                    });
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
        let score = clf.score(&val)?;
        if best.as_ref().is_none_or(|b| score > b.score) {
            best = Some(Snapshot {
                step: report.steps,
                score,
                clf: clf.clone(),
            });
        }
    }
    match best {
        Some(b) => {
            report.best_step = b.step;
            report.best_score = Some(b.score);
            clf = b.clf;
        }
        None => report.best_step = report.steps,
    }
    Ok((clf, report))
}

/// Metadata stored with a fine-tuned checkpoint.
pub fn head_metadata(task: Task, cfg: &FinetuneConfig, report: &FinetuneReport) -> serde_json::Value {
    json!({
        "task": task,
        "seed": cfg.seed,
        "finetune": cfg,
        "steps": report.steps,
        "best_step": report.best_step,
        "best_score": report.best_score,
    })
}

#[cfg(test)]
mod tests;
