//! Future-knowledge probes: how far a response moves the representation of
//! its dialogue history, for the gold response against random ones.

use std::fmt::Write as _;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{Dialogue, Utterance};
use crate::error::{Error, Result};
use crate::finetune::{build_rs_pools, rs_examples, RsPool};
use crate::model::Bundle;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeResult {
    pub id: String,
    /// Distance between history and history plus gold response.
    pub golden: f64,
    /// Mean of the same distance over the distractors.
    pub random: f64,
    /// Strictly smaller; ties count as false.
    pub golden_smaller: bool,
}

/// Mean of squared coordinate differences.
pub fn mse(a: &[f32], b: &[f32]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!("mse of vectors of length {} and {}", a.len(), b.len())));
    }
    if a.is_empty() {
        return Err(Error::Empty("mse of empty vectors".into()));
    }
    let s: f64 = a.iter().zip(b).map(|(&x, &y)| (f64::from(x) - f64::from(y)).powi(2)).sum();
    Ok(s / a.len() as f64)
}

fn extended(history: &[Utterance], response: &str) -> Vec<Utterance> {
    let mut v = history.to_vec();
    v.push(Utterance::system(response));
    v
}

/// Eval-mode distance probe of one history against its gold response and
/// the distractors.
pub fn future_distance_probe(model: &Bundle, history: &[Utterance], gold: &str, distractors: &[String]) -> Result<ProbeResult> {
    if distractors.is_empty() {
        return Err(Error::Empty("probe needs at least one distractor".into()));
    }
    let mut inputs = Vec::with_capacity(distractors.len() + 2);
    inputs.push(history.to_vec());
    inputs.push(extended(history, gold));
    inputs.extend(distractors.iter().map(|r| extended(history, r)));
    let reps = model.embed(&inputs)?;
    let golden = mse(&reps[0], &reps[1])?;
    let random = reps[2..].iter().map(|r| mse(&reps[0], r)).sum::<Result<f64>>()? / distractors.len() as f64;
    if !golden.is_finite() || !random.is_finite() {
        return Err(Error::NonFinite("probe distance".into()));
    }
    Ok(ProbeResult {
        id: String::new(),
        golden,
        random,
        golden_smaller: golden < random,
    })
}

/// Share of results whose gold distance is the smaller one.
pub fn golden_smaller_ratio(results: &[ProbeResult]) -> Result<f64> {
    if results.is_empty() {
        return Err(Error::Empty("no probe results".into()));
    }
    Ok(results.iter().filter(|r| r.golden_smaller).count() as f64 / results.len() as f64)
}

/// One probe example: a candidate pool whose gold is the true response.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProbeItem {
    pub id: String,
    pub pool: RsPool,
}

/// One item per system turn of `dialogues`, with `distractors` responses
/// drawn corpus-wide without replacement. Ids are `dialogue#turn`.
pub fn build_probe_set(dialogues: &[Dialogue], distractors: usize, seed: u64) -> Result<Vec<ProbeItem>> {
    let mut ids = Vec::new();
    let mut examples = Vec::new();
    for d in dialogues {
        for (t, ex) in rs_examples(std::slice::from_ref(d)).into_iter().enumerate() {
            ids.push(format!("{}#{t}", d.id));
            examples.push(ex);
        }
    }
    if examples.is_empty() {
        return Err(Error::Empty("no system turns to probe".into()));
    }
    let pools = build_rs_pools(&examples, distractors + 1, seed)?;
    Ok(ids.into_iter().zip(pools).map(|(id, pool)| ProbeItem { id, pool }).collect())
}

/// Probes every item, in order.
pub fn run_probe(model: &Bundle, items: &[ProbeItem]) -> Result<Vec<ProbeResult>> {
    items
        .iter()
        .map(|item| {
            let p = &item.pool;
            let distractors: Vec<String> = p
                .candidates
                .iter()
                .enumerate()
                .filter(|&(i, _)| i != p.gold)
                .map(|(_, c)| c.clone())
                .collect();
            let mut r = future_distance_probe(model, &p.history, &p.candidates[p.gold], &distractors)?;
            r.id = item.id.clone();
            Ok(r)
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeSummary {
    pub n: usize,
    pub golden_smaller_ratio: f64,
    pub mean_golden: f64,
    pub mean_random: f64,
}

pub fn probe_summary(results: &[ProbeResult]) -> Result<ProbeSummary> {
    let ratio = golden_smaller_ratio(results)?;
    let n = results.len() as f64;
    Ok(ProbeSummary {
        n: results.len(),
        golden_smaller_ratio: ratio,
        mean_golden: results.iter().map(|r| r.golden).sum::<f64>() / n,
        mean_random: results.iter().map(|r| r.random).sum::<f64>() / n,
    })
}

/// CSV with columns `example_id,golden_distance,mean_random_distance`.
pub fn write_probe_csv(path: impl AsRef<Path>, results: &[ProbeResult]) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::from("example_id,golden_distance,mean_random_distance\n");
    for r in results {
        writeln!(out, "{},{},{}", r.id, r.golden, r.random).expect("write to string");
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// An input to embed with its identifier and label.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EmbedItem {
    pub id: String,
    pub label: String,
    pub input: Vec<Utterance>,
}

/// Writes `id,label,h0..h{d-1}` rows of eval-mode pooled representations.
pub fn export_embeddings<W: Write>(model: &Bundle, items: &[EmbedItem], mut out: W) -> Result<()> {
    if items.is_empty() {
        return Err(Error::Empty("nothing to embed".into()));
    }
    let io = |e| Error::io("embeddings output", e);
    let d = model.encoder.hidden;
    let header: Vec<String> = ["id".to_string(), "label".to_string()]
        .into_iter()
        .chain((0..d).map(|j| format!("h{j}")))
        .collect();
    writeln!(out, "{}", header.join(",")).map_err(io)?;
    let inputs: Vec<Vec<Utterance>> = items.iter().map(|i| i.input.clone()).collect();
    for (item, rep) in items.iter().zip(model.embed(&inputs)?) {
        let mut line = format!("{},{}", csv_field(&item.id), csv_field(&item.label));
        for v in rep {
            write!(line, ",{v}").expect("write to string");
        }
        writeln!(out, "{line}").map_err(io)?;
    }
    out.flush().map_err(io)
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}
