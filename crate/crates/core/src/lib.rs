//! Dialogue encoder pre-training by distilling future knowledge.
//!
//! A student transformer encodes a dialogue context while a frozen teacher
//! (a periodic copy of the student) encodes the same context extended with
//! future turns. The student is trained to match the teacher's per-layer
//! representations alongside a masked-language-modeling objective. The
//! crate also carries the downstream fine-tuning tasks (intent recognition,
//! dialogue act prediction, dialogue state tracking, response selection),
//! their metrics, and the future-distance probes.
//!
//! Everything runs on the CPU with hand-written forward and backward passes
//! so results are bit-reproducible under a fixed seed.
//!
//! See `examples/` for one runnable program per capability:
//!
//! ```bash
//! cargo run --release -p future-distill --example synth_corpus
//! cargo run --release -p future-distill --example pretrain
//! ```

pub mod cli;
pub mod config;
pub mod corpus;
pub mod encoder;
pub mod error;
pub mod model;
pub mod eval;
pub mod finetune;
pub mod optim;
pub mod pretrain;
pub mod rng;
pub mod run;
pub mod tensor;
pub mod tokenizer;

pub use error::{Error, Result};
