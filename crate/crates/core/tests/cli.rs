//! End-to-end runs of the command-line binary on a tiny configuration.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use future_distill::cli::evaluate_task;
use future_distill::eval::MetricReport;
use future_distill::finetune::Task;
use future_distill::run::{RunManifest, RUN_MANIFEST};

const BIN: &str = env!("CARGO_BIN_EXE_future-distill");

const TINY: &[&str] = &[
    "--set",
    "encoder.layers=2",
    "--set",
    "encoder.hidden=16",
    "--set",
    "encoder.heads=2",
    "--set",
    "encoder.ffn=32",
    "--set",
    "max_len=96",
    "--set",
    "batch=8",
    "--set",
    "lr=1e-3",
    "--set",
    "M=2",
    "--set",
    "E=1",
];

fn cli(out: &Path, args: &[&str]) -> Output {
    Command::new(BIN)
        .arg("--out")
        .arg(out)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(out: &Path, args: &[&str]) -> String {
    let o = cli(out, args);
    assert!(
        o.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&o.stderr)
    );
    String::from_utf8(o.stdout).unwrap()
}

fn manifest(dir: &Path) -> RunManifest {
    serde_json::from_str(&std::fs::read_to_string(dir.join(RUN_MANIFEST)).unwrap()).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Synthesizes a corpus and pre-trains on it; returns (root, data, pretrain).
fn prepared() -> (tempfile::TempDir, PathBuf, PathBuf) {
    let root = tempfile::tempdir().unwrap();
    let data = root.path().join("data");
    ok(&data, &["--seed", "2", "synth", "--dialogues", "40"]);
    let pre = root.path().join("pre");
    let corpus = format!("corpus=\"{}\"", data.join("corpus.jsonl").display());
    let mut args = vec!["--seed", "2", "pretrain", "--set", &corpus];
    args.extend_from_slice(TINY);
    ok(&pre, &args);
    (root, data, pre)
}

#[test]
fn synth_writes_corpus_and_tasks() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["--seed", "4", "synth", "--dialogues", "12"]);
    let corpus = std::fs::read_to_string(dir.path().join("corpus.jsonl")).unwrap();
    assert_eq!(corpus.lines().count(), 12);
    for t in ["intent", "act", "dst", "rs"] {
        assert!(dir.path().join("tasks").join(format!("{t}.jsonl")).exists(), "{t}");
    }
    let m = manifest(dir.path());
    assert_eq!((m.command.as_str(), m.seed), ("synth", 4));

    let again = tempfile::tempdir().unwrap();
    ok(again.path(), &["--seed", "4", "synth", "--dialogues", "12"]);
    assert_eq!(corpus, std::fs::read_to_string(again.path().join("corpus.jsonl")).unwrap());
}

#[test]
fn stats_reports_counts() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["synth", "--dialogues", "10"]);
    let corpus = dir.path().join("corpus.jsonl");
    ok(dir.path(), &["stats", "--corpus", s(&corpus)]);
    let stats: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("stats.json")).unwrap()).unwrap();
    assert_eq!(stats["stats"]["dialogue_count"], 10);
    assert!(stats["vocab_size"].as_u64().unwrap() > 7);
    assert_eq!(manifest(dir.path()).inputs.len(), 1);
}

#[test]
fn pipeline_from_pretraining_to_evaluation() {
    let (root, data, pre) = prepared();
    assert!(pre.join("loss.csv").exists());
    assert!(pre.join("final").join("params.bin").exists());
    let m = manifest(&pre);
    assert_eq!(m.config["pretrain"]["epochs"], 2);
    assert_eq!(m.config["encoder"]["hidden"], 16);
    assert_eq!(m.inputs.len(), 1);

    let intent = data.join("tasks").join("intent.jsonl");
    let ft = root.path().join("ft");
    ok(
        &ft,
        &[
            "--seed", "3", "finetune", "--task", "intent", "--data", s(&intent), "--checkpoint",
            s(&pre.join("final")), "--set", "finetune.epochs=2", "--set", "finetune.learning_rate=1e-3",
        ],
    );
    assert!(ft.join("finetune_report.json").exists());

    let ev = root.path().join("ev");
    ok(&ev, &["evaluate", "--task", "intent", "--checkpoint", s(&ft), "--data", s(&intent)]);
    let report = MetricReport::load(ev.join("metrics.json")).unwrap();
    assert!(!report.fingerprint.is_empty());
    let direct = evaluate_task(Task::Intent, &ft, &intent, 0).unwrap();
    assert_eq!(report.metrics, direct.metrics);
    assert_eq!(report.n, direct.n);

    // a classifier of one task cannot be scored on another
    let act = data.join("tasks").join("act.jsonl");
    let o = cli(&ev, &["evaluate", "--task", "act", "--checkpoint", s(&ft), "--data", s(&act)]);
    assert!(!o.status.success());

    let probe = root.path().join("probe");
    ok(
        &probe,
        &[
            "probe", "--checkpoint", s(&pre.join("final")), "--data", s(&data.join("corpus.jsonl")), "--set",
            "probe.max_items=5", "--set", "probe.distractors=9",
        ],
    );
    let csv = std::fs::read_to_string(probe.join("probe.csv")).unwrap();
    assert!(csv.starts_with("example_id,golden_distance,mean_random_distance\n"));
    assert_eq!(csv.lines().count(), 6);

    let emb = root.path().join("emb");
    ok(&emb, &["export-embeddings", "--checkpoint", s(&pre.join("final")), "--data", s(&intent)]);
    let csv = std::fs::read_to_string(emb.join("embeddings.csv")).unwrap();
    let header = csv.lines().next().unwrap();
    assert_eq!(header.split(',').count(), 2 + 16);
}

#[test]
fn response_selection_round_trip() {
    let (root, data, pre) = prepared();
    let rs = data.join("tasks").join("rs.jsonl");
    let ft = root.path().join("rs");
    ok(
        &ft,
        &["finetune", "--task", "rs", "--data", s(&rs), "--checkpoint", s(&pre.join("final")), "--set", "finetune.epochs=1"],
    );
    let ev = root.path().join("ev");
    ok(&ev, &["--seed", "9", "evaluate", "--task", "rs", "--checkpoint", s(&ft), "--data", s(&rs)]);
    let report = MetricReport::load(ev.join("metrics.json")).unwrap();
    assert!(report.get("1-to-100").unwrap() <= report.get("3-to-100").unwrap());
    assert_eq!(report.metrics, evaluate_task(Task::Rs, &ft, &rs, 9).unwrap().metrics);
}

#[test]
fn config_file_and_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.json5");
    std::fs::write(
        &cfg,
        r#"{"seed": 8, "synth": {"dialogues": 10}, "pretrain": {"epochs": 3, "sync_interval": 3}}"#,
    )
    .unwrap();
    let out = dir.path().join("out");
    let mut args = vec!["pretrain", "--config", s(&cfg)];
    args.extend_from_slice(TINY);
    args.extend_from_slice(&["--set", "M=1"]);
    // E=1 from the overrides, M=1 overrides both the file and the earlier M=2
    ok(&out, &args);
    let m = manifest(&out);
    assert_eq!(m.seed, 8);
    assert_eq!(m.config["pretrain"]["epochs"], 1);
    assert_eq!(m.config["pretrain"]["sync_interval"], 1);
    assert_eq!(m.config["synth"]["dialogues"], 10);
    assert!(m.inputs.is_empty());
}

#[test]
fn unknown_keys_fail_with_their_name() {
    let dir = tempfile::tempdir().unwrap();
    let o = cli(dir.path(), &["pretrain", "--set", "pretrain.sync_intervall=3"]);
    assert_eq!(o.status.code(), Some(1));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("pretrain.sync_intervall"), "{err}");

    let cfg = dir.path().join("bad.json");
    std::fs::write(&cfg, r#"{"pretrain": {"warmup": 10}}"#).unwrap();
    let o = cli(dir.path(), &["pretrain", "--config", s(&cfg)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("warmup"));

    let o = cli(dir.path(), &["pretrain", "--set", "E=40"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn missing_inputs_are_reported() {
    let dir = tempfile::tempdir().unwrap();
    let o = cli(dir.path(), &["stats", "--corpus", "/nonexistent/corpus.jsonl"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("/nonexistent/corpus.jsonl"));
}
