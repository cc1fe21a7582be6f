//! Downstream task metrics.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub task: String,
    pub metrics: BTreeMap<String, f64>,
    pub n: usize,
    /// Identifies the model and data the report was computed from.
    #[serde(default)]
    pub fingerprint: String,
    /// Definitions and conventions worth carrying with the numbers.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub notes: BTreeMap<String, String>,
}

impl MetricReport {
    fn new(task: &str, n: usize) -> Self {
        MetricReport {
            task: task.into(),
            metrics: BTreeMap::new(),
            n,
            fingerprint: String::new(),
            notes: BTreeMap::new(),
        }
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.metrics.get(name).copied()
    }

    /// Every metric is a rate in `[0, 1]`, `n > 0`, and top-1 never beats
    /// top-3.
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::Invalid(format!("{} report over zero examples", self.task)));
        }
        if let Some((k, v)) = self.metrics.iter().find(|(_, v)| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Invalid(format!("{}: {k} = {v} is not a rate", self.task)));
        }
        if let (Some(a), Some(b)) = (self.get("1-to-100"), self.get("3-to-100")) {
            if a > b {
                return Err(Error::Invalid(format!("1-to-100 {a} exceeds 3-to-100 {b}")));
            }
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, serde_json::to_string_pretty(self)?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

fn aligned<A, B>(a: &[A], b: &[B]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!("{} predictions for {} golds", a.len(), b.len())));
    }
    if a.is_empty() {
        return Err(Error::Empty("no examples to score".into()));
    }
    Ok(())
}

fn rate(hits: usize, total: usize) -> Option<f64> {
    (total > 0).then(|| hits as f64 / total as f64)
}

pub const ACC_OUT_NOTE: &str = "binary in-domain vs out-of-domain decision accuracy over all examples";

/// Intent metrics. `Acc(all)` is exact match over everything, `Acc(in)`
/// exact match over in-domain golds, `Recall(out)` the share of OOD golds
/// predicted OOD, and `Acc(out)` the accuracy of the in/out decision.
/// Metrics whose denominator is empty are absent.
pub fn intent_metrics(preds: &[usize], golds: &[usize], ood_class: Option<usize>) -> Result<MetricReport> {
    aligned(preds, golds)?;
    let is_ood = |c: usize| Some(c) == ood_class;
    let mut r = MetricReport::new("intent", golds.len());
    let pairs = || preds.iter().zip(golds);
    let correct = pairs().filter(|(p, g)| p == g).count();
    r.metrics.insert("acc_all".into(), correct as f64 / golds.len() as f64);
    let ins: Vec<_> = pairs().filter(|(_, &g)| !is_ood(g)).collect();
    if let Some(v) = rate(ins.iter().filter(|(p, g)| p == g).count(), ins.len()) {
        r.metrics.insert("acc_in".into(), v);
    }
    if ood_class.is_some() {
        let outs: Vec<_> = pairs().filter(|(_, &g)| is_ood(g)).collect();
        if let Some(v) = rate(outs.iter().filter(|(&p, _)| is_ood(p)).count(), outs.len()) {
            r.metrics.insert("recall_out".into(), v);
        }
        let decided = pairs().filter(|(&p, &g)| is_ood(p) == is_ood(g)).count();
        r.metrics.insert("acc_out".into(), decided as f64 / golds.len() as f64);
        r.notes.insert("acc_out".into(), ACC_OUT_NOTE.into());
    }
    Ok(r)
}

/// Joint accuracy (every slot of a turn right) and slot accuracy (share of
/// individual slot values right). Pred and gold must cover the same slots.
pub fn dst_metrics(preds: &[BTreeMap<String, String>], golds: &[BTreeMap<String, String>]) -> Result<MetricReport> {
    aligned(preds, golds)?;
    let (mut joint, mut slots_right, mut slots) = (0, 0, 0);
    for (i, (p, g)) in preds.iter().zip(golds).enumerate() {
        if !p.keys().eq(g.keys()) {
            let pk: BTreeSet<_> = p.keys().collect();
            let gk: BTreeSet<_> = g.keys().collect();
            let diff: Vec<_> = pk.symmetric_difference(&gk).collect();
            return Err(Error::Shape(format!("turn {i}: ontology mismatch on {diff:?}")));
        }
        let right = g.iter().filter(|(k, v)| p[*k] == **v).count();
        slots_right += right;
        slots += g.len();
        joint += usize::from(right == g.len());
    }
    let mut r = MetricReport::new("dst", golds.len());
    r.metrics.insert("joint_acc".into(), joint as f64 / golds.len() as f64);
    r.metrics.insert("slot_acc".into(), rate(slots_right, slots).unwrap_or(1.0));
    Ok(r)
}

fn f1(tp: usize, fp: usize, fnn: usize) -> f64 {
    let denom = 2 * tp + fp + fnn;
    if denom == 0 {
        0.0
    } else {
        2.0 * tp as f64 / denom as f64
    }
}

/// Micro-F1 pools counts over all acts; macro-F1 averages per-act F1, with
/// an act that is never gold nor predicted scoring 0.
pub fn f1_metrics(preds: &[Vec<bool>], golds: &[Vec<bool>]) -> Result<MetricReport> {
    aligned(preds, golds)?;
    let acts = golds[0].len();
    if acts == 0 {
        return Err(Error::Shape("zero act types".into()));
    }
    let mut counts = vec![(0usize, 0usize, 0usize); acts];
    for (i, (p, g)) in preds.iter().zip(golds).enumerate() {
        if p.len() != acts || g.len() != acts {
            return Err(Error::Shape(format!("row {i}: expected {acts} acts, got {} / {}", p.len(), g.len())));
        }
        for (c, (&pp, &gg)) in counts.iter_mut().zip(p.iter().zip(g)) {
            match (pp, gg) {
                (true, true) => c.0 += 1,
                (true, false) => c.1 += 1,
                (false, true) => c.2 += 1,
                (false, false) => {}
            }
        }
    }
    let (tp, fp, fnn) = counts
        .iter()
        .fold((0, 0, 0), |a, c| (a.0 + c.0, a.1 + c.1, a.2 + c.2));
    let mut r = MetricReport::new("act", golds.len());
    r.metrics.insert("micro_f1".into(), f1(tp, fp, fnn));
    let macro_f1 = counts.iter().map(|c| f1(c.0, c.1, c.2)).sum::<f64>() / acts as f64;
    r.metrics.insert("macro_f1".into(), macro_f1);
    r.notes.insert("macro_f1".into(), "acts with zero support count as F1 = 0".into());
    Ok(r)
}

/// Checks that `ranking` is a permutation of `0..ranking.len()`.
pub fn check_permutation(ranking: &[usize]) -> Result<()> {
    let mut seen = vec![false; ranking.len()];
    for &i in ranking {
        if i >= seen.len() || std::mem::replace(&mut seen[i], true) {
            return Err(Error::Invalid(format!("ranking is not a permutation (index {i})")));
        }
    }
    Ok(())
}

/// Share of examples whose gold candidate is ranked within the top `k`.
pub fn k_to_100(rankings: &[Vec<usize>], golds: &[usize], k: usize) -> Result<f64> {
    aligned(rankings, golds)?;
    let mut hits = 0;
    for (ranking, &gold) in rankings.iter().zip(golds) {
        check_permutation(ranking)?;
        if ranking.len() != 100 {
            log::warn!("ranking over {} candidates instead of 100", ranking.len());
        }
        let pos = ranking
            .iter()
            .position(|&i| i == gold)
            .ok_or_else(|| Error::Invalid(format!("gold index {gold} outside the pool")))?;
        hits += usize::from(pos < k);
    }
    Ok(hits as f64 / golds.len() as f64)
}

/// 1-to-100 and 3-to-100 accuracy.
pub fn rs_metrics(rankings: &[Vec<usize>], golds: &[usize]) -> Result<MetricReport> {
    let mut r = MetricReport::new("rs", golds.len());
    r.metrics.insert("1-to-100".into(), k_to_100(rankings, golds, 1)?);
    r.metrics.insert("3-to-100".into(), k_to_100(rankings, golds, 3)?);
    r.validate()?;
    Ok(r)
}
