//! Template-driven synthetic task-oriented dialogues.
//!
//! Each dialogue pursues one intent: the user opens with a request, the
//! system asks for unfilled slots one at a time, the user supplies values,
//! and the system finally books. Out-of-domain dialogues consist of
//! out-of-scope requests and refusals. Intent, belief state after every user
//! turn, and system acts are kept in [`DialogueMeta`] for the downstream
//! tasks.

use std::collections::BTreeMap;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Dialogue, DialogueMeta, Utterance};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SlotSpec {
    pub name: String,
    pub values: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntentSpec {
    pub name: String,
    pub domain: String,
    /// Paraphrases of the request, slotted into `{trigger}`.
    pub triggers: Vec<String>,
    pub slots: Vec<SlotSpec>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Templates {
    pub user_open: Vec<String>,
    pub user_inform: Vec<String>,
    pub user_confirm: Vec<String>,
    pub system_request: Vec<String>,
    pub system_preamble: Vec<String>,
    pub system_confirm: Vec<String>,
    pub system_book: Vec<String>,
    pub system_reqmore: Vec<String>,
    pub ood_request: Vec<String>,
    pub system_decline: Vec<String>,
}

fn strings(xs: &[&str]) -> Vec<String> {
    xs.iter().map(|s| s.to_string()).collect()
}

impl Default for Templates {
    fn default() -> Self {
        Templates {
            user_open: strings(&[
                "i want to {trigger} .",
                "hello , i need to {trigger} .",
                "can you help me {trigger} ?",
                "i am looking to {trigger} .",
                "hi , i would like to {trigger} please .",
            ]),
            user_inform: strings(&[
                "{value} please .",
                "i would like {value} .",
                "the {slot} should be {value} .",
                "{value} , thanks .",
                "make it {value} .",
            ]),
            user_confirm: strings(&["yes please .", "yes , go ahead .", "sure , thank you .", "that is right ."]),
            system_request: strings(&[
                "what {slot} would you like ?",
                "which {slot} do you prefer ?",
                "do you have a {slot} in mind ?",
                "could you tell me the {slot} ?",
            ]),
            system_preamble: strings(&["there are several options .", "i can help with that .", "sure ."]),
            system_confirm: strings(&[
                "shall i go ahead and book the {domain} ?",
                "do you want me to book the {domain} now ?",
                "should i reserve the {domain} for you ?",
            ]),
            system_book: strings(&[
                "i have booked the {domain} for you .",
                "your {domain} is booked .",
                "the {domain} booking is confirmed .",
            ]),
            system_reqmore: strings(&["anything else ?", "is there anything else i can do ?"]),
            ood_request: strings(&[
                "tell me a joke .",
                "what is the meaning of life ?",
                "who won the football game ?",
                "can you sing a song ?",
                "what is your favourite colour ?",
                "how old are you ?",
                "what is the weather like on mars ?",
                "can you do my homework ?",
                "recommend a good book .",
                "how do i fix my bike ?",
            ]),
            system_decline: strings(&[
                "sorry , i can not help with that .",
                "i am afraid i can only help with bookings .",
                "that is outside what i can do , sorry .",
            ]),
        }
    }
}

fn slot(name: &str, values: &[&str]) -> SlotSpec {
    SlotSpec {
        name: name.into(),
        values: strings(values),
    }
}

fn intent(name: &str, domain: &str, triggers: &[&str], slots: Vec<SlotSpec>) -> IntentSpec {
    IntentSpec {
        name: name.into(),
        domain: domain.into(),
        triggers: strings(triggers),
        slots,
    }
}

/// The built-in intent catalog.
pub fn default_catalog() -> Vec<IntentSpec> {
    let area = || slot("area", &["north", "south", "east", "west", "centre", "riverside"]);
    let day = || slot("day", &["monday", "tuesday", "wednesday", "thursday", "friday", "saturday"]);
    let people = || slot("people", &["one", "two", "three", "four", "five", "six"]);
    let time = || slot("time", &["noon", "six pm", "seven pm", "eight pm", "nine am", "ten am"]);
    let city = |n: &str| slot(n, &["london", "cambridge", "leeds", "oxford", "bristol", "york"]);
    vec![
        intent(
            "book_restaurant",
            "restaurant",
            &["book a table", "reserve a table", "find a restaurant", "get a place to eat", "have dinner out"],
            vec![
                slot("food", &["italian", "chinese", "indian", "french", "thai", "mexican"]),
                area(),
                people(),
                time(),
            ],
        ),
        intent(
            "book_hotel",
            "hotel",
            &["book a hotel", "find a room", "reserve a room", "get a place to stay", "stay overnight"],
            vec![
                slot("stars", &["two star", "three star", "four star", "five star", "budget", "luxury"]),
                area(),
                slot("nights", &["one night", "two nights", "three nights", "four nights", "a week", "the weekend"]),
                slot("parking", &["free parking", "no parking", "street parking", "garage parking", "valet", "any parking"]),
            ],
        ),
        intent(
            "book_taxi",
            "taxi",
            &["book a taxi", "get a cab", "order a car", "arrange a ride", "call a driver"],
            vec![city("destination"), city("departure"), slot("leave", &["now", "soon", "at noon", "tonight", "at dawn", "later"]), slot("car", &["sedan", "van", "estate", "minibus", "electric car", "black cab"])],
        ),
        intent(
            "book_train",
            "train",
            &["book a train", "buy train tickets", "travel by rail", "catch a train", "take the railway"],
            vec![city("destination"), day(), people(), city("departure")],
        ),
        intent(
            "find_attraction",
            "attraction",
            &["find an attraction", "see something fun", "visit a museum", "go sightseeing", "explore the sights"],
            vec![
                slot("type", &["museum", "park", "theatre", "gallery", "college", "church"]),
                area(),
                slot("price", &["free", "cheap", "moderate", "expensive", "any price", "discounted"]),
                day(),
            ],
        ),
        intent(
            "book_flight",
            "flight",
            &["book a flight", "buy a plane ticket", "fly somewhere", "travel by air", "catch a plane"],
            vec![
                slot("destination", &["paris", "rome", "madrid", "berlin", "lisbon", "vienna"]),
                day(),
                slot("class", &["economy", "business", "first class", "premium", "basic", "flexible"]),
                people(),
            ],
        ),
        intent(
            "find_hospital",
            "hospital",
            &["find a hospital", "see a doctor", "get medical help", "visit a clinic", "reach the emergency room"],
            vec![
                slot("department", &["cardiology", "neurology", "paediatrics", "oncology", "surgery", "dermatology"]),
                area(),
                day(),
                time(),
            ],
        ),
        intent(
            "book_movie",
            "cinema",
            &["buy movie tickets", "see a film", "go to the cinema", "watch a movie", "catch a screening"],
            vec![
                slot("genre", &["comedy", "horror", "drama", "action", "romance", "animation"]),
                time(),
                people(),
                area(),
            ],
        ),
    ]
}

/// Generator configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSpec {
    pub dialogues: usize,
    /// Inclusive range of (user, system) turn pairs per dialogue.
    pub min_turns: usize,
    pub max_turns: usize,
    /// Number of catalog intents used.
    pub intents: usize,
    pub slots_per_intent: usize,
    pub values_per_slot: usize,
    /// Fraction of out-of-domain dialogues.
    pub ood_fraction: f64,
    /// Overrides the built-in catalog when present.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub catalog: Option<Vec<IntentSpec>>,
    pub templates: Templates,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            dialogues: 2000,
            min_turns: 3,
            max_turns: 6,
            intents: 6,
            slots_per_intent: 3,
            values_per_slot: 5,
            ood_fraction: 0.1,
            catalog: None,
            templates: Templates::default(),
        }
    }
}

impl SynthSpec {
    /// The intents actually in use, trimmed to the configured sizes.
    pub fn active_intents(&self) -> Result<Vec<IntentSpec>> {
        self.validate()?;
        let catalog = self.catalog.clone().unwrap_or_else(default_catalog);
        Ok(catalog
            .into_iter()
            .take(self.intents)
            .map(|mut i| {
                i.slots.truncate(self.slots_per_intent);
                for s in &mut i.slots {
                    s.values.truncate(self.values_per_slot);
                }
                i
            })
            .collect())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.dialogues == 0 {
            return bad("dialogues must be positive".into());
        }
        if self.intents == 0 {
            return bad("at least one intent is required".into());
        }
        if self.min_turns == 0 || self.min_turns > self.max_turns {
            return bad(format!("invalid turn range {}..={}", self.min_turns, self.max_turns));
        }
        if self.slots_per_intent == 0 || self.values_per_slot == 0 {
            return bad("slots_per_intent and values_per_slot must be positive".into());
        }
        if !(0.0..1.0).contains(&self.ood_fraction) {
            return bad(format!("ood_fraction {} outside [0, 1)", self.ood_fraction));
        }
        let catalog = self.catalog.clone().unwrap_or_else(default_catalog);
        if catalog.len() < self.intents {
            return bad(format!("catalog has {} intents, {} requested", catalog.len(), self.intents));
        }
        for i in catalog.iter().take(self.intents) {
            if i.triggers.is_empty() {
                return bad(format!("intent {} has no triggers", i.name));
            }
            if i.slots.len() < self.slots_per_intent {
                return bad(format!("intent {} has fewer than {} slots", i.name, self.slots_per_intent));
            }
            if let Some(s) = i.slots.iter().take(self.slots_per_intent).find(|s| s.values.len() < self.values_per_slot) {
                return bad(format!("slot {}.{} has fewer than {} values", i.domain, s.name, self.values_per_slot));
            }
        }
        let t = &self.templates;
        let lists = [
            ("user_open", &t.user_open),
            ("user_inform", &t.user_inform),
            ("user_confirm", &t.user_confirm),
            ("system_request", &t.system_request),
            ("system_preamble", &t.system_preamble),
            ("system_confirm", &t.system_confirm),
            ("system_book", &t.system_book),
            ("system_reqmore", &t.system_reqmore),
            ("ood_request", &t.ood_request),
            ("system_decline", &t.system_decline),
        ];
        if let Some((name, _)) = lists.iter().find(|(_, l)| l.is_empty()) {
            return bad(format!("template list {name} is empty"));
        }
        Ok(())
    }
}

/// Dialogue act names used by the generator.
pub mod acts {
    pub const INFORM: &str = "inform";
    pub const CONFIRM: &str = "confirm";
    pub const BOOK: &str = "book";
    pub const REQMORE: &str = "reqmore";
    pub const DECLINE: &str = "decline";

    pub fn request(slot: &str) -> String {
        format!("request_{slot}")
    }
}

fn fill(template: &str, pairs: &[(&str, &str)]) -> String {
    let mut out = template.to_string();
    for (k, v) in pairs {
        out = out.replace(&format!("{{{k}}}"), v);
    }
    out
}

fn pick<'a, R: Rng + ?Sized>(xs: &'a [String], rng: &mut R) -> &'a str {
    xs.choose(rng).expect("validated non-empty")
}

/// Generates `spec.dialogues` dialogues. Intent labels (including the
/// out-of-domain class) are assigned in balanced proportions and shuffled.
pub fn synth_corpus<R: Rng + ?Sized>(spec: &SynthSpec, rng: &mut R) -> Result<Vec<Dialogue>> {
    let intents = spec.active_intents()?;
    let n_ood = (spec.dialogues as f64 * spec.ood_fraction).round() as usize;
    let mut labels: Vec<Option<usize>> = (0..spec.dialogues - n_ood)
        .map(|i| Some(i % intents.len()))
        .chain(std::iter::repeat_n(None, n_ood))
        .collect();
    labels.shuffle(rng);

    labels
        .into_iter()
        .enumerate()
        .map(|(i, label)| {
            let pairs = rng.random_range(spec.min_turns..=spec.max_turns);
            let id = format!("synth-{i:05}");
            match label {
                Some(k) => in_domain(&id, &intents[k], pairs, &spec.templates, rng),
                None => out_of_domain(&id, pairs, &spec.templates, rng),
            }
        })
        .collect()
}

fn in_domain<R: Rng + ?Sized>(
    id: &str,
    intent: &IntentSpec,
    pairs: usize,
    t: &Templates,
    rng: &mut R,
) -> Result<Dialogue> {
    let domain = intent.domain.as_str();
    let mut order: Vec<&SlotSpec> = intent.slots.iter().collect();
    order.shuffle(rng);
    let mut state: BTreeMap<String, String> = BTreeMap::new();
    let mut turns = Vec::with_capacity(2 * pairs);
    let mut states = Vec::with_capacity(pairs);
    let mut act_seq = Vec::with_capacity(pairs);

    let inform = |s: &SlotSpec, rng: &mut R, state: &mut BTreeMap<String, String>| {
        let value = s.values.choose(rng).expect("validated non-empty");
        state.insert(format!("{domain}.{}", s.name), value.clone());
        fill(pick(&t.user_inform, rng), &[("slot", &s.name), ("value", value)])
    };

    let trigger = pick(&intent.triggers, rng);
    let mut opening = fill(pick(&t.user_open, rng), &[("trigger", trigger)]);
    let mut next = 0;
    if rng.random_bool(0.5) {
        opening.push(' ');
        opening.push_str(&inform(order[0], rng, &mut state));
        next = 1;
    }
    turns.push(Utterance::user(opening));
    states.push(state.clone());

    for _ in 1..pairs {
        if let Some(s) = order.get(next) {
            let mut acts = vec![acts::request(&s.name)];
            let mut text = fill(pick(&t.system_request, rng), &[("slot", &s.name), ("domain", domain)]);
            if rng.random_bool(0.3) {
                text = format!("{} {text}", pick(&t.system_preamble, rng));
                acts.insert(0, acts::INFORM.to_string());
            }
            turns.push(Utterance::system(text));
            act_seq.push(acts);
            turns.push(Utterance::user(inform(s, rng, &mut state)));
            next += 1;
        } else {
            turns.push(Utterance::system(fill(pick(&t.system_confirm, rng), &[("domain", domain)])));
            act_seq.push(vec![acts::CONFIRM.to_string()]);
            turns.push(Utterance::user(pick(&t.user_confirm, rng).to_string()));
        }
        states.push(state.clone());
    }

    let mut closing = fill(pick(&t.system_book, rng), &[("domain", domain)]);
    let mut acts = vec![acts::BOOK.to_string()];
    if rng.random_bool(0.5) {
        closing.push(' ');
        closing.push_str(pick(&t.system_reqmore, rng));
        acts.push(acts::REQMORE.to_string());
    }
    turns.push(Utterance::system(closing));
    act_seq.push(acts);

    let mut d = Dialogue::new(id, turns)?;
    d.meta = Some(DialogueMeta {
        intent: Some(intent.name.clone()),
        states,
        acts: act_seq,
    });
    Ok(d)
}

fn out_of_domain<R: Rng + ?Sized>(id: &str, pairs: usize, t: &Templates, rng: &mut R) -> Result<Dialogue> {
    let mut turns = Vec::with_capacity(2 * pairs);
    for _ in 0..pairs {
        turns.push(Utterance::user(pick(&t.ood_request, rng).to_string()));
        turns.push(Utterance::system(pick(&t.system_decline, rng).to_string()));
    }
    let mut d = Dialogue::new(id, turns)?;
    d.meta = Some(DialogueMeta {
        intent: None,
        states: vec![BTreeMap::new(); pairs],
        acts: vec![vec![acts::DECLINE.to_string()]; pairs],
    });
    Ok(d)
}
