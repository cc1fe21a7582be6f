//! Task-oriented dialogues: loading, validation, and context/future splitting.

mod stats;
mod synth;

use std::collections::BTreeMap;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use stats::{corpus_stats, CorpusStats};
pub use synth::{synth_corpus, IntentSpec, SynthSpec, Templates};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    User,
    System,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Utterance {
    pub role: Role,
    pub text: String,
}

impl Utterance {
    pub fn user(text: impl Into<String>) -> Self {
        Utterance {
            role: Role::User,
            text: text.into(),
        }
    }

    pub fn system(text: impl Into<String>) -> Self {
        Utterance {
            role: Role::System,
            text: text.into(),
        }
    }
}

/// Latent labels kept by the synthetic generator so downstream tasks can be
/// built without annotated corpora.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DialogueMeta {
    /// Intent name, or `None` for an out-of-domain dialogue.
    pub intent: Option<String>,
    /// Belief state (`domain.slot` -> value) after each user turn.
    pub states: Vec<BTreeMap<String, String>>,
    /// Dialogue acts of each system turn.
    pub acts: Vec<Vec<String>>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dialogue {
    pub id: String,
    pub turns: Vec<Utterance>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub meta: Option<DialogueMeta>,
}

impl Dialogue {
    /// Builds a dialogue, canonicalizing role alternation and validating it.
    pub fn new(id: impl Into<String>, turns: Vec<Utterance>) -> Result<Self> {
        let mut d = Dialogue {
            id: id.into(),
            turns,
            meta: None,
        };
        d.canonicalize()?;
        Ok(d)
    }

    /// Number of (user, system) turn pairs.
    pub fn turn_pairs(&self) -> usize {
        self.turns.len() / 2
    }

    /// Merges consecutive same-role utterances, drops system utterances that
    /// precede the first user turn and a trailing unanswered user turn, then
    /// checks the remaining invariants.
    pub fn canonicalize(&mut self) -> Result<()> {
        let invalid = |message: String| Error::InvalidDialogue {
            id: self.id.clone(),
            message,
        };
        for (i, u) in self.turns.iter().enumerate() {
            if u.text.trim().is_empty() {
                return Err(invalid(format!("utterance {i} is empty")));
            }
        }

        let mut merged: Vec<Utterance> = Vec::with_capacity(self.turns.len());
        for u in self.turns.drain(..) {
            match merged.last_mut() {
                Some(last) if last.role == u.role => {
                    last.text.push(' ');
                    last.text.push_str(u.text.trim());
                }
                None if u.role == Role::System => {}
                _ => merged.push(Utterance {
                    role: u.role,
                    text: u.text.trim().to_string(),
                }),
            }
        }
        if merged.last().is_some_and(|u| u.role == Role::User) {
            merged.pop();
        }
        let changed = self
            .meta
            .as_ref()
            .is_some_and(|m| m.acts.len() != merged.len() / 2);
        self.turns = merged;
        if changed {
            log::warn!("dialogue {}: canonicalization invalidated labels; dropping them", self.id);
            self.meta = None;
        }
        if self.turns.len() < 2 {
            return Err(Error::InvalidDialogue {
                id: self.id.clone(),
                message: "needs at least one user turn followed by a system turn".into(),
            });
        }
        Ok(())
    }
}

/// One pre-training example: the dialogue cut at turn `t`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SplitSample {
    /// `U1, S1, ..., Ut`
    pub context: Vec<Utterance>,
    /// `St, U(t+1), ..., Sn`
    pub future: Vec<Utterance>,
    pub split_turn: usize,
    /// Prefix of `future` shown to the teacher.
    pub future_window: Vec<Utterance>,
}

/// Splits `d` at turn `t` (1-based). The future window is the whole future.
pub fn split_at_turn(d: &Dialogue, t: usize) -> Result<SplitSample> {
    let n = d.turn_pairs();
    if n == 0 {
        return Err(Error::InvalidDialogue {
            id: d.id.clone(),
            message: "too short to split".into(),
        });
    }
    if t == 0 || t > n {
        return Err(Error::SplitOutOfRange {
            id: d.id.clone(),
            turn: t,
            max: n,
        });
    }
    let cut = 2 * t - 1;
    let future = d.turns[cut..].to_vec();
    Ok(SplitSample {
        context: d.turns[..cut].to_vec(),
        future_window: future.clone(),
        future,
        split_turn: t,
    })
}

/// Draws a split turn uniformly from `1..=n`.
pub fn sample_split<R: Rng + ?Sized>(d: &Dialogue, rng: &mut R) -> Result<usize> {
    let n = d.turn_pairs();
    if n == 0 {
        return Err(Error::InvalidDialogue {
            id: d.id.clone(),
            message: "no valid split".into(),
        });
    }
    Ok(rng.random_range(1..=n))
}

/// Upper bound on how many future utterances the teacher sees.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum FuturePolicy {
    /// Window length uniform in `1..=min(P, |F|)`.
    Max(usize),
    /// Window length uniform in `1..=|F|`.
    All,
    /// Always the whole future.
    Fix,
}

impl Default for FuturePolicy {
    fn default() -> Self {
        FuturePolicy::All
    }
}

impl fmt::Display for FuturePolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FuturePolicy::Max(p) => write!(f, "{p}"),
            FuturePolicy::All => f.write_str("all"),
            FuturePolicy::Fix => f.write_str("fix"),
        }
    }
}

impl FromStr for FuturePolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "all" => Ok(FuturePolicy::All),
            "fix" => Ok(FuturePolicy::Fix),
            other => match other.parse::<usize>() {
                Ok(p) if p >= 1 => Ok(FuturePolicy::Max(p)),
                _ => Err(Error::Config(format!(
                    "future_policy must be a positive integer, \"all\" or \"fix\", got {s:?}"
                ))),
            },
        }
    }
}

impl Serialize for FuturePolicy {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for FuturePolicy {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(usize),
            Str(String),
        }
        let text = match Raw::deserialize(d)? {
            Raw::Num(n) => n.to_string(),
            Raw::Str(s) => s,
        };
        text.parse().map_err(serde::de::Error::custom)
    }
}

/// Picks a non-empty prefix of `future` according to `policy`.
pub fn sample_future_window<R: Rng + ?Sized>(
    future: &[Utterance],
    policy: FuturePolicy,
    rng: &mut R,
) -> Vec<Utterance> {
    assert!(!future.is_empty(), "future must be non-empty");
    let len = match policy {
        FuturePolicy::Fix => future.len(),
        FuturePolicy::All => rng.random_range(1..=future.len()),
        FuturePolicy::Max(p) => rng.random_range(1..=p.clamp(1, future.len())),
    };
    future[..len].to_vec()
}

/// Draws a split turn and a future window in one go.
pub fn sample_split_sample<R: Rng + ?Sized>(
    d: &Dialogue,
    policy: FuturePolicy,
    rng: &mut R,
) -> Result<SplitSample> {
    let t = sample_split(d, rng)?;
    let mut s = split_at_turn(d, t)?;
    s.future_window = sample_future_window(&s.future, policy, rng);
    Ok(s)
}

/// Reads a JSONL corpus, one dialogue per line. Blank lines are skipped.
pub fn load_corpus(path: impl AsRef<Path>) -> Result<Vec<Dialogue>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let schema = |message: String| Error::Schema {
            path: path.to_path_buf(),
            line: i + 1,
            message,
        };
        let mut d: Dialogue = serde_json::from_str(&line).map_err(|e| schema(e.to_string()))?;
        d.canonicalize().map_err(|e| schema(e.to_string()))?;
        out.push(d);
    }
    if out.is_empty() {
        return Err(Error::Empty(format!("no dialogues in {}", path.display())));
    }
    Ok(out)
}

pub fn save_corpus(path: impl AsRef<Path>, dialogues: &[Dialogue]) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for d in dialogues {
        serde_json::to_writer(&mut w, d)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use proptest::prelude::*;

    fn dialogue(pairs: usize) -> Dialogue {
        let mut turns = Vec::new();
        for i in 1..=pairs {
            turns.push(Utterance::user(format!("u{i}")));
            turns.push(Utterance::system(format!("s{i}")));
        }
        Dialogue::new("d", turns).unwrap()
    }

    fn texts(us: &[Utterance]) -> Vec<&str> {
        us.iter().map(|u| u.text.as_str()).collect()
    }

    #[test]
    fn smallest_split() {
        let s = split_at_turn(&dialogue(2), 1).unwrap();
        assert_eq!(texts(&s.context), ["u1"]);
        assert_eq!(texts(&s.future), ["s1", "u2", "s2"]);
    }

    #[test]
    fn split_at_second_turn() {
        let s = split_at_turn(&dialogue(3), 2).unwrap();
        assert_eq!(texts(&s.context), ["u1", "s1", "u2"]);
        assert_eq!(texts(&s.future), ["s2", "u3", "s3"]);
        assert_eq!(s.future_window, s.future);
    }

    #[test]
    fn single_pair_has_exactly_one_split() {
        // enumerate every candidate t and keep the ones satisfying the split invariants
        let d = dialogue(1);
        let valid: Vec<usize> = (0..=3)
            .filter(|&t| split_at_turn(&d, t).is_ok())
            .collect();
        assert_eq!(valid, [1]);
        let s = split_at_turn(&d, 1).unwrap();
        assert_eq!(texts(&s.context), ["u1"]);
        assert_eq!(texts(&s.future), ["s1"]);
    }

    #[test]
    fn out_of_range_split_is_an_error() {
        assert!(matches!(
            split_at_turn(&dialogue(2), 3),
            Err(Error::SplitOutOfRange { turn: 3, max: 2, .. })
        ));
        assert!(split_at_turn(&dialogue(2), 0).is_err());
    }

    #[test]
    fn canonicalization_merges_and_trims() {
        let d = Dialogue::new(
            "x",
            vec![
                Utterance::system("welcome"),
                Utterance::user("hi"),
                Utterance::user("i need a taxi"),
                Utterance::system("where to ?"),
                Utterance::system("and when ?"),
                Utterance::user("dangling"),
            ],
        )
        .unwrap();
        assert_eq!(d.turns.len(), 2);
        assert_eq!(d.turns[0].text, "hi i need a taxi");
        assert_eq!(d.turns[1].text, "where to ? and when ?");
        assert!(Dialogue::new("y", vec![Utterance::user("alone")]).is_err());
        assert!(Dialogue::new("z", vec![Utterance::user(" "), Utterance::system("s")]).is_err());
    }

    #[test]
    fn split_turn_is_uniform_for_two_pairs() {
        let d = dialogue(2);
        let mut rng = seeded(11);
        let draws = 10_000;
        let ones = (0..draws)
            .filter(|_| sample_split(&d, &mut rng).unwrap() == 1)
            .count() as f64;
        let sigma = (draws as f64 * 0.25).sqrt();
        assert!((ones - 5000.0).abs() < 3.0 * sigma, "ones = {ones}");
    }

    #[test]
    fn single_pair_always_splits_at_one() {
        let mut rng = seeded(3);
        for _ in 0..100 {
            assert_eq!(sample_split(&dialogue(1), &mut rng).unwrap(), 1);
        }
    }

    #[test]
    fn sampling_is_seed_deterministic() {
        let d = dialogue(6);
        let run = |seed| {
            let mut rng = seeded(seed);
            (0..50)
                .map(|_| sample_split(&d, &mut rng).unwrap())
                .collect::<Vec<_>>()
        };
        assert_eq!(run(5), run(5));
    }

    #[test]
    fn window_policies() {
        let f: Vec<Utterance> = ["St", "Ut+1", "St+1", "Ut+2", "St+2"]
            .iter()
            .map(|t| Utterance::user(*t))
            .collect();
        let mut rng = seeded(1);
        let mut seen = std::collections::BTreeSet::new();
        for _ in 0..500 {
            seen.insert(sample_future_window(&f, FuturePolicy::Max(3), &mut rng).len());
        }
        assert_eq!(seen.into_iter().collect::<Vec<_>>(), [1, 2, 3]);
        assert_eq!(sample_future_window(&f, FuturePolicy::Fix, &mut rng), f);

        let short = &f[..2];
        let mut counts = [0usize; 3];
        for _ in 0..4000 {
            counts[sample_future_window(short, FuturePolicy::Max(5), &mut rng).len()] += 1;
        }
        assert_eq!(counts[0], 0);
        let sigma = (4000.0f64 * 0.25).sqrt();
        assert!((counts[1] as f64 - 2000.0).abs() < 3.0 * sigma);
    }

    #[test]
    fn policy_parsing() {
        assert_eq!("3".parse::<FuturePolicy>().unwrap(), FuturePolicy::Max(3));
        assert_eq!("All".parse::<FuturePolicy>().unwrap(), FuturePolicy::All);
        assert_eq!("fix".parse::<FuturePolicy>().unwrap(), FuturePolicy::Fix);
        assert!("0".parse::<FuturePolicy>().is_err());
        let p: FuturePolicy = serde_json::from_str("5").unwrap();
        assert_eq!(p, FuturePolicy::Max(5));
        assert_eq!(serde_json::to_string(&FuturePolicy::All).unwrap(), "\"all\"");
    }

    #[test]
    fn load_reports_bad_lines() {
        let dir = tempfile::tempdir().unwrap();
        let good = dir.path().join("good.jsonl");
        std::fs::write(
            &good,
            concat!(
                r#"{"id":"a","turns":[{"role":"user","text":"hi"},{"role":"system","text":"hello"}]}"#,
                "\n",
                r#"{"id":"b","turns":[{"role":"user","text":"taxi"},{"role":"system","text":"where"}]}"#,
                "\n"
            ),
        )
        .unwrap();
        assert_eq!(load_corpus(&good).unwrap().len(), 2);

        let bad = dir.path().join("bad.jsonl");
        std::fs::write(
            &bad,
            concat!(
                r#"{"id":"a","turns":[{"role":"user","text":"hi"},{"role":"system","text":"hello"}]}"#,
                "\n",
                r#"{"id":"b","turns":[{"role":"agent","text":"x"},{"role":"system","text":"y"}]}"#,
                "\n"
            ),
        )
        .unwrap();
        match load_corpus(&bad) {
            Err(Error::Schema { line, message, .. }) => {
                assert_eq!(line, 2);
                assert!(message.contains("agent"), "{message}");
            }
            other => panic!("expected schema error, got {other:?}"),
        }

        let missing = dir.path().join("missing.jsonl");
        std::fs::write(&missing, r#"{"id":"a","turns":[{"role":"user"}]}"#).unwrap();
        assert!(matches!(load_corpus(&missing), Err(Error::Schema { line: 1, .. })));

        let empty = dir.path().join("empty.jsonl");
        std::fs::write(&empty, "\n").unwrap();
        assert!(matches!(load_corpus(&empty), Err(Error::Empty(_))));
        assert!(matches!(load_corpus(dir.path().join("nope")), Err(Error::Io { .. })));
    }

    proptest! {
        #[test]
        fn splits_are_lossless(pairs in 1usize..8, seed in any::<u64>(), p in 1usize..7) {
            let d = dialogue(pairs);
            let mut rng = seeded(seed);
            let policy = match p { 6 => FuturePolicy::All, 5 => FuturePolicy::Fix, n => FuturePolicy::Max(n) };
            let s = sample_split_sample(&d, policy, &mut rng).unwrap();
            let mut joined = s.context.clone();
            joined.extend(s.future.iter().cloned());
            prop_assert_eq!(&joined, &d.turns);
            prop_assert_eq!(s.context.last().unwrap().role, Role::User);
            prop_assert_eq!(s.future[0].role, Role::System);
            prop_assert!(!s.future_window.is_empty());
            prop_assert!(s.future.starts_with(&s.future_window));
        }
    }
}
