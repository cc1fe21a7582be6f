//! Command-line interface. Every command is a thin wrapper over library
//! calls and writes a run manifest beside its outputs.

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use crate::config::{resolve_config, RunDocument};
use crate::corpus::{corpus_stats, load_corpus, save_corpus, synth_corpus, SynthSpec};
use crate::error::{Error, Result};
use crate::eval::{build_probe_set, export_embeddings, probe_summary, run_probe, write_probe_csv, EmbedItem};
use crate::finetune::{
    act_examples, build_rs_pools, dst_examples, evaluate_response_selection, finetune_classifier,
    finetune_response_selection, head_metadata, intent_examples, read_jsonl, rs_examples, write_jsonl, Classifier,
    IntentExample, RsExample, Task, TaskData, POOL_SIZE,
};
use crate::model::Bundle;
use crate::pretrain::{Event, Pretraining};
use crate::rng::substream;
use crate::run::RunRecorder;
use crate::tokenizer::build_vocab;
use crate::corpus::Utterance;

#[derive(Debug, Parser)]
#[command(name = "future-distill", version, about = "Dialogue encoder pre-training with future-turn distillation")]
pub struct Cli {
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    /// Run seed; overrides the config file's.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// More log output (-v debug, -vv trace).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Clone, Default)]
pub struct ConfigArgs {
    /// JSON config document.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// `key=value` override, repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic corpus and its task files.
    Synth {
        /// Generator spec (JSON); defaults when absent.
        #[arg(long)]
        spec: Option<PathBuf>,
        /// Overrides the spec's dialogue count.
        #[arg(long)]
        dialogues: Option<usize>,
    },
    /// Corpus statistics.
    Stats {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, default_value_t = 1)]
        min_freq: usize,
    },
    /// Pre-train an encoder.
    Pretrain {
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Fine-tune a checkpoint on a downstream task.
    Finetune {
        #[arg(long)]
        task: Task,
        /// Task JSONL.
        #[arg(long)]
        data: PathBuf,
        /// Validation JSONL; a share of `data` is held out when absent.
        #[arg(long)]
        val: Option<PathBuf>,
        #[arg(long)]
        checkpoint: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Score a fine-tuned checkpoint.
    Evaluate {
        #[arg(long)]
        task: Task,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
    },
    /// Future-distance probe over a dialogue corpus.
    Probe {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Dialogue JSONL.
        #[arg(long)]
        data: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Pooled representations of intent utterances as CSV.
    ExportEmbeddings {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Intent JSONL (`text`, `label`).
        #[arg(long)]
        data: PathBuf,
    },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Synth { .. } => "synth",
            Command::Stats { .. } => "stats",
            Command::Pretrain { .. } => "pretrain",
            Command::Finetune { .. } => "finetune",
            Command::Evaluate { .. } => "evaluate",
            Command::Probe { .. } => "probe",
            Command::ExportEmbeddings { .. } => "export-embeddings",
        }
    }
}

fn resolve(cfg: &ConfigArgs, seed: Option<u64>) -> Result<RunDocument> {
    let mut sets = cfg.set.clone();
    if let Some(s) = seed {
        sets.push(format!("seed={s}"));
    }
    resolve_config(cfg.config.as_deref(), &sets)
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(value)?).map_err(|e| Error::io(path, e))
}

/// Short content fingerprint of a checkpoint and a data file.
fn fingerprint(checkpoint: &Path, data: &Path) -> Result<String> {
    let a = crate::run::hash_path(checkpoint)?;
    let b = crate::run::hash_path(data)?;
    Ok(format!("{}:{}", &a[..16], &b[..16]))
}

impl Cli {
    pub fn log_level(&self) -> log::LevelFilter {
        match self.verbose {
            0 => log::LevelFilter::Info,
            1 => log::LevelFilter::Debug,
            _ => log::LevelFilter::Trace,
        }
    }
}

/// Runs one command.
pub fn run(cli: &Cli) -> Result<()> {
    let out = cli.out.as_path();
    create_dir(out)?;
    let args: Vec<String> = std::env::args().skip(1).collect();
    match &cli.command {
        Command::Synth { spec, dialogues } => {
            let mut s: SynthSpec = match spec {
                Some(p) => {
                    let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
                    serde_json::from_str(&text)?
                }
                None => SynthSpec::default(),
            };
            if let Some(n) = dialogues {
                s.dialogues = *n;
            }
            let seed = cli.seed.unwrap_or(0);
            let mut rec = RunRecorder::new("synth", args, seed, serde_json::to_value(&s)?);
            if let Some(p) = spec {
                rec.input(p)?;
            }
            let ds = synth_corpus(&s, &mut substream(seed, "corpus", 0))?;
            save_corpus(out.join("corpus.jsonl"), &ds)?;
            let tasks = out.join("tasks");
            create_dir(&tasks)?;
            write_jsonl(tasks.join("intent.jsonl"), &intent_examples(&ds)?)?;
            write_jsonl(tasks.join("act.jsonl"), &act_examples(&ds)?)?;
            write_jsonl(tasks.join("dst.jsonl"), &dst_examples(&ds)?)?;
            write_jsonl(tasks.join("rs.jsonl"), &rs_examples(&ds))?;
            println!("{} dialogues written to {}", ds.len(), out.display());
            rec.finish(out)?;
        }
        Command::Stats { corpus, min_freq } => {
            let seed = cli.seed.unwrap_or(0);
            let mut rec = RunRecorder::new("stats", args, seed, json!({ "min_freq": min_freq }));
            rec.input(corpus)?;
            let ds = load_corpus(corpus)?;
            let vocab = build_vocab(&ds, *min_freq)?;
            let stats = corpus_stats(&ds, &vocab)?;
            let report = json!({ "stats": stats, "vocab_size": vocab.len() });
            println!("{}", serde_json::to_string_pretty(&report)?);
            write_json(&out.join("stats.json"), &report)?;
            rec.finish(out)?;
        }
        Command::Pretrain { cfg } => {
            let doc = resolve(cfg, cli.seed)?;
            let mut rec = RunRecorder::new("pretrain", args, doc.seed, serde_json::to_value(&doc)?);
            if let Some(p) = &doc.corpus {
                rec.input(p)?;
            }
            let ds = doc.dialogues()?;
            let vocab = build_vocab(&ds, doc.min_freq)?;
            let mut enc = doc.encoder.clone();
            enc.vocab_size = vocab.len();
            let state = Pretraining::new(&ds, &vocab, enc, doc.pretrain.clone())
                .output(out)
                .run_with(&mut |state, ev| {
                    if let Event::Epoch { epoch, synced } = ev {
                        let mean = state.epoch_means().last().copied().unwrap_or(f64::NAN);
                        log::info!("epoch {epoch}: mean loss {mean:.4}{}", if synced { " (teacher synced)" } else { "" });
                    }
                })?;
            println!(
                "{} steps, {} syncs, {} samples skipped; final epoch mean loss {:.4}",
                state.step,
                state.syncs.len(),
                state.skipped,
                state.epoch_means().last().copied().unwrap_or(f64::NAN)
            );
            rec.finish(out)?;
        }
        Command::Finetune {
            task,
            data,
            val,
            checkpoint,
            cfg,
        } => {
            let doc = resolve(cfg, cli.seed)?;
            let ft = doc.finetune.clone();
            let mut rec = RunRecorder::new("finetune", args, doc.seed, json!({ "task": task, "finetune": ft }));
            rec.input(data)?;
            rec.input(checkpoint)?;
            if let Some(v) = val {
                rec.input(v)?;
            }
            let model = Bundle::load(checkpoint)?;
            let (clf, report) = if *task == Task::Rs {
                let all: Vec<RsExample> = read_jsonl(data)?;
                let (train, held) = match val {
                    Some(v) => (all, read_jsonl(v)?),
                    None => holdout(all, ft.val_fraction, doc.seed),
                };
                let held = (held.len() >= 2).then_some(held.as_slice());
                let r = finetune_response_selection(&model, &train, held, &ft)?;
                (r.model, r.report)
            } else {
                let (train, held) = match val {
                    Some(v) => (TaskData::read(*task, data)?, Some(TaskData::read(*task, v)?)),
                    None => split_task_data(TaskData::read(*task, data)?, ft.val_fraction, doc.seed),
                };
                finetune_classifier(&model, &train, held.as_ref(), &ft)?
            };
            clf.save(out, head_metadata(*task, &ft, &report))?;
            write_json(&out.join("finetune_report.json"), &report)?;
            println!(
                "{} steps over {} epochs; kept step {} (validation {:?})",
                report.steps, report.epochs_run, report.best_step, report.best_score
            );
            rec.finish(out)?;
        }
        Command::Evaluate { task, checkpoint, data } => {
            let seed = cli.seed.unwrap_or(0);
            let mut rec = RunRecorder::new("evaluate", args, seed, json!({ "task": task }));
            rec.input(checkpoint)?;
            rec.input(data)?;
            let mut report = evaluate_task(*task, checkpoint, data, seed)?;
            report.fingerprint = fingerprint(checkpoint, data)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
            report.save(out.join("metrics.json"))?;
            rec.finish(out)?;
        }
        Command::Probe { checkpoint, data, cfg } => {
            let doc = resolve(cfg, cli.seed)?;
            let mut rec = RunRecorder::new("probe", args, doc.seed, json!({ "probe": doc.probe, "seed": doc.seed }));
            rec.input(checkpoint)?;
            rec.input(data)?;
            let model = Bundle::load(checkpoint)?;
            let ds = load_corpus(data)?;
            let mut items = build_probe_set(&ds, doc.probe.distractors, doc.seed)?;
            if let Some(n) = doc.probe.max_items {
                items.truncate(n);
            }
            let results = run_probe(&model, &items)?;
            write_probe_csv(out.join("probe.csv"), &results)?;
            let summary = probe_summary(&results)?;
            println!("{}", serde_json::to_string_pretty(&summary)?);
            write_json(&out.join("probe_summary.json"), &summary)?;
            rec.finish(out)?;
        }
        Command::ExportEmbeddings { checkpoint, data } => {
            let seed = cli.seed.unwrap_or(0);
            let mut rec = RunRecorder::new("export-embeddings", args, seed, json!({}));
            rec.input(checkpoint)?;
            rec.input(data)?;
            let model = Bundle::load(checkpoint)?;
            let examples: Vec<IntentExample> = read_jsonl(data)?;
            let items: Vec<EmbedItem> = examples
                .into_iter()
                .enumerate()
                .map(|(i, e)| EmbedItem {
                    id: i.to_string(),
                    label: e.label,
                    input: vec![Utterance::user(e.text)],
                })
                .collect();
            let path = out.join("embeddings.csv");
            let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
            export_embeddings(&model, &items, BufWriter::new(file))?;
            println!("{} embeddings written to {}", items.len(), path.display());
            rec.finish(out)?;
        }
    }
    Ok(())
}

/// Scores a saved checkpoint on a task file. Response selection ranks pools
/// of 100 built from the file's responses with `seed`.
pub fn evaluate_task(task: Task, checkpoint: &Path, data: &Path, seed: u64) -> Result<crate::eval::MetricReport> {
    let clf = Classifier::load(checkpoint)?;
    if clf.kind.task() != task {
        return Err(Error::Config(format!(
            "{} holds a {} model, not {task}",
            checkpoint.display(),
            clf.kind.task()
        )));
    }
    if task == Task::Rs {
        let ex: Vec<RsExample> = read_jsonl(data)?;
        let pools = build_rs_pools(&ex, POOL_SIZE, seed)?;
        return evaluate_response_selection(&clf.model, &pools);
    }
    let labeled = TaskData::read(task, data)?.labeled(&clf.kind)?;
    clf.evaluate(&labeled)
}

/// Seeded split of `items` into `(train, held out)`.
fn holdout<T>(mut items: Vec<T>, fraction: f64, seed: u64) -> (Vec<T>, Vec<T>) {
    use rand::seq::SliceRandom;
    let n_held = (items.len() as f64 * fraction).floor() as usize;
    let mut idx: Vec<usize> = (0..items.len()).collect();
    idx.shuffle(&mut substream(seed, "holdout", 0));
    let held: std::collections::BTreeSet<usize> = idx[..n_held].iter().copied().collect();
    let mut train = Vec::new();
    let mut val = Vec::new();
    for (i, x) in items.drain(..).enumerate() {
        if held.contains(&i) {
            val.push(x);
        } else {
            train.push(x);
        }
    }
    (train, val)
}

fn split_task_data(data: TaskData, fraction: f64, seed: u64) -> (TaskData, Option<TaskData>) {
    fn wrap<T>(items: Vec<T>, fraction: f64, seed: u64, f: fn(Vec<T>) -> TaskData) -> (TaskData, Option<TaskData>) {
        let (train, val) = holdout(items, fraction, seed);
        let val = (!val.is_empty()).then(|| f(val));
        (f(train), val)
    }
    match data {
        TaskData::Intent(v) => wrap(v, fraction, seed, TaskData::Intent),
        TaskData::Act(v) => wrap(v, fraction, seed, TaskData::Act),
        TaskData::Dst(v) => wrap(v, fraction, seed, TaskData::Dst),
    }
}
