//! Future distillation: a student encodes the (masked) context, a frozen
//! teacher encodes the context plus a window of future turns, and the
//! student is trained on the sum of the per-layer representation distance
//! and its own MLM loss. Every `E` epochs the teacher is overwritten with the
//! student.

mod loss;

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use serde_json::json;

pub use loss::{cross_entropy, distill_loss, distill_terms, mlm_loss, total_loss};

use crate::corpus::{sample_split_sample, Dialogue, FuturePolicy, SplitSample};
use crate::encoder::{
    forward, init_params, mlm_backward, mlm_forward, params_hash, EncoderConfig, EncoderParams, Mode, OutputGrads,
};
use crate::error::{Error, Result};
use crate::model::save_bundle;
use crate::optim::{Adam, LinearSchedule};
use crate::rng::substream;
use crate::tensor::Real;
use crate::tokenizer::{apply_mlm_mask, encode, TokenSequence, Vocab};

/// What the teacher encodes.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TeacherInput {
    #[default]
    ContextPlusFuture,
    FutureOnly,
}

impl FromStr for TeacherInput {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "context_plus_future" => Ok(TeacherInput::ContextPlusFuture),
            "future_only" => Ok(TeacherInput::FutureOnly),
            _ => Err(Error::Config(format!(
                "teacher_input must be context_plus_future or future_only, got {s:?}"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PretrainConfig {
    /// Total epochs `M`.
    pub epochs: usize,
    /// Teacher sync interval `E`, in epochs.
    pub sync_interval: usize,
    pub mlm_ratio: f64,
    /// Number of top layers `K` in the distillation loss; `None` means all.
    /// Values above the encoder depth are clamped.
    pub distill_layers: Option<usize>,
    pub future_policy: FuturePolicy,
    pub teacher_input: TeacherInput,
    /// Scale pooled vectors to unit length before taking the distance.
    pub normalize: bool,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub warmup_steps: usize,
    /// Write student/teacher checkpoints every this many epochs (0: only
    /// the final one).
    pub checkpoint_every: usize,
    #[serde(skip)]
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig {
            epochs: 30,
            sync_interval: 10,
            mlm_ratio: 0.15,
            distill_layers: None,
            future_policy: FuturePolicy::All,
            teacher_input: TeacherInput::ContextPlusFuture,
            normalize: false,
            batch_size: 32,
            learning_rate: 5e-5,
            warmup_steps: 0,
            checkpoint_every: 1,
            seed: 0,
        }
    }
}

impl PretrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.epochs == 0 {
            return bad("epochs must be >= 1".into());
        }
        if self.sync_interval == 0 || self.sync_interval > self.epochs {
            return bad(format!("sync_interval must be in 1..={}, got {}", self.epochs, self.sync_interval));
        }
        if !(self.mlm_ratio > 0.0 && self.mlm_ratio < 1.0) {
            return bad(format!("mlm_ratio must be in (0, 1), got {}", self.mlm_ratio));
        }
        if self.distill_layers == Some(0) {
            return bad("distill_layers must be >= 1".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        Ok(())
    }

    /// `K`, clamped to the encoder depth.
    pub fn layers_for(&self, enc: &EncoderConfig) -> usize {
        self.distill_layers.unwrap_or(enc.layers).clamp(1, enc.layers)
    }
}

/// Encoded inputs of one training example.
#[derive(Clone, Debug, PartialEq)]
pub struct PreparedSample {
    /// Masked context.
    pub student: TokenSequence,
    /// Unmasked context plus future window, or the window alone.
    pub teacher: TokenSequence,
}

/// Encodes a split for training. Returns `None` when masking selected no
/// position, in which case the sample is skipped.
pub fn prepare_sample<R: rand::Rng + ?Sized>(
    split: &SplitSample,
    vocab: &Vocab,
    max_len: usize,
    cfg: &PretrainConfig,
    rng: &mut R,
) -> Result<Option<PreparedSample>> {
    let context = encode(&split.context, vocab, max_len)?;
    let student = match apply_mlm_mask(&context, vocab, cfg.mlm_ratio, rng) {
        Ok(s) if s.masked_count() > 0 => s,
        Ok(_) | Err(Error::NoMaskableTokens) => return Ok(None),
        Err(e) => return Err(e),
    };
    let teacher = match cfg.teacher_input {
        TeacherInput::ContextPlusFuture => {
            let mut utts = split.context.clone();
            utts.extend_from_slice(&split.future_window);
            encode(&utts, vocab, max_len)?
        }
        TeacherInput::FutureOnly => encode(&split.future_window, vocab, max_len)?,
    };
    Ok(Some(PreparedSample { student, teacher }))
}

/// Batch-mean loss components and the student gradient.
pub struct BatchLoss<F> {
    pub dis: f64,
    pub mlm: f64,
    pub total: f64,
    pub grads: EncoderParams<F>,
}

/// Mean over the batch of `L_dis + L_mlm` per sample, with its gradient
/// with respect to the student. The teacher runs in eval mode without a
/// tape and receives no gradient.
pub fn batch_loss_and_grad<F: Real>(
    student: &EncoderParams<F>,
    teacher: &EncoderParams<F>,
    enc: &EncoderConfig,
    batch: &[PreparedSample],
    k: usize,
    normalize: bool,
    mode: Mode<'_>,
) -> Result<BatchLoss<F>> {
    if batch.is_empty() {
        return Err(Error::Empty("training batch".into()));
    }
    let tseqs: Vec<&TokenSequence> = batch.iter().map(|b| &b.teacher).collect();
    let sseqs: Vec<&TokenSequence> = batch.iter().map(|b| &b.student).collect();
    let targets = forward(teacher, enc, &tseqs, Mode::Eval, false)?;
    let fw = forward(student, enc, &sseqs, mode, true)?;

    let scale = F::c(1.0 / batch.len() as f64);
    let top = enc.layers - 1;
    let mut og = OutputGrads::new(batch.len(), enc.layers);
    let mut dis = 0.0;
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    let mut where_ = Vec::new();
    for (s, (out, sample)) in fw.outputs.iter().zip(batch).enumerate() {
        let (d, grads) = distill_terms(&out.pooled, &targets.outputs[s].pooled, k, normalize)?;
        dis += d.to_f64().unwrap_or(f64::NAN);
        for (l, g) in grads {
            let g: Vec<F> = g.into_iter().map(|x| x * scale).collect();
            og.add_pooled(s, l, &g);
        }
        for (pos, &label) in sample.student.mlm_labels[..out.len].iter().enumerate() {
            if label >= 0 {
                rows.extend_from_slice(out.state(top, pos));
                labels.push(label as usize);
                where_.push((s, pos));
            }
        }
    }
    if labels.is_empty() {
        return Err(Error::NoMaskedPositions);
    }
    let (logits, tape) = mlm_forward(student, enc, rows);
    let (mlm, mut dlogits) = cross_entropy(&logits, enc.vocab_size, &labels);
    dlogits.iter_mut().for_each(|g| *g *= scale);
    let mut grads = student.zeros_like();
    let dx = mlm_backward(student, enc, &tape, &dlogits, &mut grads);
    for (i, &(s, pos)) in where_.iter().enumerate() {
        og.add_top_state(s, pos, &dx[i * enc.hidden..(i + 1) * enc.hidden]);
    }
    grads.add_assign(&fw.backward(student, enc, &og)?);

    let n = batch.len() as f64;
    let (dis, mlm) = (dis / n, mlm.to_f64().unwrap_or(f64::NAN) / n);
    Ok(BatchLoss {
        dis,
        mlm,
        total: dis + mlm,
        grads,
    })
}

/// One logged optimizer step; losses are batch means.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub step: usize,
    pub epoch: usize,
    pub dis: f64,
    pub mlm: f64,
    pub total: f64,
}

#[derive(Clone, Debug)]
pub struct TrainState {
    pub student: EncoderParams<f32>,
    pub teacher: EncoderParams<f32>,
    pub optimizer: Adam<f32>,
    /// Completed epochs `m`.
    pub epoch: usize,
    /// Completed optimizer steps.
    pub step: usize,
    pub history: Vec<LossRecord>,
    /// Samples dropped because masking selected nothing.
    pub skipped: usize,
    /// Epochs after which the teacher was synced.
    pub syncs: Vec<usize>,
}

impl TrainState {
    /// Student and teacher both start from `init`.
    pub fn new(init: EncoderParams<f32>) -> Self {
        TrainState {
            teacher: init.clone(),
            student: init,
            optimizer: Adam::default(),
            epoch: 0,
            step: 0,
            history: Vec::new(),
            skipped: 0,
            syncs: Vec::new(),
        }
    }

    /// Mean total loss of each epoch, in epoch order.
    pub fn epoch_means(&self) -> Vec<f64> {
        let mut sums: Vec<(f64, usize)> = Vec::new();
        for r in &self.history {
            if sums.len() < r.epoch {
                sums.resize(r.epoch, (0.0, 0));
            }
            let e = &mut sums[r.epoch - 1];
            e.0 += r.total;
            e.1 += 1;
        }
        sums.into_iter()
            .map(|(s, n)| if n == 0 { f64::NAN } else { s / n as f64 })
            .collect()
    }
}

/// One optimizer step on the student. The teacher is read-only.
pub fn pretrain_step(
    state: &mut TrainState,
    batch: &[PreparedSample],
    enc: &EncoderConfig,
    cfg: &PretrainConfig,
    lr: f64,
) -> Result<LossRecord> {
    let k = cfg.layers_for(enc);
    let mut rng = substream(cfg.seed, "dropout", state.step as u64);
    let out = batch_loss_and_grad(
        &state.student,
        &state.teacher,
        enc,
        batch,
        k,
        cfg.normalize,
        Mode::Train(&mut rng),
    )?;
    let step = state.step;
    let total = total_loss(out.dis, out.mlm)
        .map_err(|_| Error::NonFinite(format!("loss at step {step}: L_dis={}, L_mlm={}", out.dis, out.mlm)))?;
    if let Some(name) = out.grads.first_non_finite() {
        return Err(Error::NonFinite(format!("gradient of {name} at step {step}")));
    }
    state.optimizer.step(state.student.tensors_mut(), out.grads.tensors(), lr)?;
    if let Some(name) = state.student.first_non_finite() {
        return Err(Error::NonFinite(format!("student {name} after step {step} (lr {lr})")));
    }
    let rec = LossRecord {
        step,
        epoch: state.epoch + 1,
        dis: out.dis,
        mlm: out.mlm,
        total,
    };
    state.step += 1;
    state.history.push(rec);
    Ok(rec)
}

/// Copies the student into the teacher. Optimizer state is untouched.
pub fn sync_teacher(state: &mut TrainState) {
    state.teacher.clone_from(&state.student);
}

/// Progress notifications from [`Pretraining::run_with`].
#[derive(Debug)]
pub enum Event<'a> {
    Step(&'a LossRecord),
    Epoch { epoch: usize, synced: bool },
}

/// A configured pre-training run.
pub struct Pretraining<'a> {
    pub corpus: &'a [Dialogue],
    pub vocab: &'a Vocab,
    pub encoder: EncoderConfig,
    pub config: PretrainConfig,
    /// Starting parameters; drawn from the `"init"` stream when absent.
    pub init: Option<EncoderParams<f32>>,
    /// Where to write the loss curve and checkpoints.
    pub out_dir: Option<PathBuf>,
}

impl<'a> Pretraining<'a> {
    pub fn new(corpus: &'a [Dialogue], vocab: &'a Vocab, encoder: EncoderConfig, config: PretrainConfig) -> Self {
        Pretraining {
            corpus,
            vocab,
            encoder,
            config,
            init: None,
            out_dir: None,
        }
    }

    pub fn output(mut self, dir: impl Into<PathBuf>) -> Self {
        self.out_dir = Some(dir.into());
        self
    }

    pub fn run(self) -> Result<TrainState> {
        self.run_with(&mut |_, _| {})
    }

    /// Split, mask and batch the corpus for epoch `m` (1-based).
    fn epoch_batches(&self, m: usize) -> Result<(Vec<PreparedSample>, usize)> {
        let seed = self.config.seed;
        let mut order: Vec<usize> = (0..self.corpus.len()).collect();
        order.shuffle(&mut substream(seed, "shuffle", m as u64));
        let mut split_rng = substream(seed, "split", m as u64);
        let mut mask_rng = substream(seed, "mask", m as u64);
        let mut samples = Vec::with_capacity(order.len());
        let mut skipped = 0;
        for i in order {
            let split = sample_split_sample(&self.corpus[i], self.config.future_policy, &mut split_rng)?;
            match prepare_sample(&split, self.vocab, self.encoder.max_len, &self.config, &mut mask_rng)? {
                Some(s) => samples.push(s),
                None => skipped += 1,
            }
        }
        Ok((samples, skipped))
    }

    pub fn run_with(mut self, observer: &mut dyn FnMut(&TrainState, Event<'_>)) -> Result<TrainState> {
        self.config.validate()?;
        if self.encoder.vocab_size == 0 {
            self.encoder.vocab_size = self.vocab.len();
        }
        if self.encoder.vocab_size != self.vocab.len() {
            return Err(Error::Config(format!(
                "encoder vocab_size {} does not match vocabulary of {}",
                self.encoder.vocab_size,
                self.vocab.len()
            )));
        }
        self.encoder.validate()?;
        if self.corpus.is_empty() {
            return Err(Error::Empty("pre-training corpus".into()));
        }
        let (enc, cfg) = (&self.encoder, &self.config);

        // The schedule needs the exact step count, which depends on how many
        // samples each epoch skips. Preparation is cheap and seeded, so count
        // first and rebuild each epoch's batches when it runs.
        let mut total_steps = 0;
        for m in 1..=cfg.epochs {
            total_steps += self.epoch_batches(m)?.0.len().div_ceil(cfg.batch_size);
        }
        if total_steps == 0 {
            return Err(Error::Empty("no split sample with a masked position".into()));
        }
        let schedule = LinearSchedule {
            base: cfg.learning_rate,
            warmup: cfg.warmup_steps,
            total: total_steps,
        };

        let init = match self.init.take() {
            Some(p) => p,
            None => init_params(enc, &mut substream(cfg.seed, "init", 0))?,
        };
        let mut state = TrainState::new(init);
        if let Some(dir) = &self.out_dir {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        log::info!(
            "pre-training {} dialogues, {} params, {total_steps} steps",
            self.corpus.len(),
            state.student.param_count()
        );
        for m in 1..=cfg.epochs {
            let (samples, skipped) = self.epoch_batches(m)?;
            state.skipped += skipped;
            for batch in samples.chunks(cfg.batch_size) {
                let lr = schedule.lr(state.step);
                let rec = pretrain_step(&mut state, batch, enc, cfg, lr)?;
                observer(&state, Event::Step(&rec));
            }
            state.epoch = m;
            let synced = m % cfg.sync_interval == 0;
            if synced {
                sync_teacher(&mut state);
                state.syncs.push(m);
            }
            if let Some(mean) = state.epoch_means().last() {
                log::info!("epoch {m}: mean loss {mean:.4}, skipped {skipped}, synced {synced}");
            }
            if let Some(dir) = &self.out_dir {
                let every = cfg.checkpoint_every;
                if m == cfg.epochs || (every > 0 && m % every == 0) {
                    self.write_epoch(dir, &state)?;
                }
                write_loss_csv(dir.join("loss.csv"), &state.history)?;
            }
            observer(&state, Event::Epoch { epoch: m, synced });
        }
        if let Some(dir) = &self.out_dir {
            save_bundle(dir.join("final"), &state.student, enc, self.vocab, state.epoch, self.metadata(&state, "student"))?;
        }
        Ok(state)
    }

    fn metadata(&self, state: &TrainState, role: &str) -> serde_json::Value {
        json!({
            "role": role,
            "seed": self.config.seed,
            "step": state.step,
            "syncs": state.syncs,
            "teacher_hash": params_hash(&state.teacher),
            "pretrain": self.config,
        })
    }

    fn write_epoch(&self, dir: &Path, state: &TrainState) -> Result<()> {
        let name = format!("epoch-{:03}", state.epoch);
        let enc = &self.encoder;
        let s = self.metadata(state, "student");
        save_bundle(dir.join("student").join(&name), &state.student, enc, self.vocab, state.epoch, s)?;
        let t = self.metadata(state, "teacher");
        save_bundle(dir.join("teacher").join(&name), &state.teacher, enc, self.vocab, state.epoch, t)?;
        Ok(())
    }
}

/// Runs pre-training with default options and no output directory.
pub fn run_pretraining(
    corpus: &[Dialogue],
    vocab: &Vocab,
    encoder: &EncoderConfig,
    cfg: &PretrainConfig,
) -> Result<TrainState> {
    Pretraining::new(corpus, vocab, encoder.clone(), cfg.clone()).run()
}

/// Loss curve as CSV: `step,epoch,L_dis,L_mlm,L`.
pub fn write_loss_csv(path: impl AsRef<Path>, history: &[LossRecord]) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::from("step,epoch,L_dis,L_mlm,L\n");
    for r in history {
        let _ = writeln!(out, "{},{},{},{},{}", r.step, r.epoch, r.dis, r.mlm, r.total);
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}
