//! Domain-prefix likelihood-ratio corpus selection.
//!
//! A small reference corpus tunes a per-layer key/value prefix on a frozen
//! byte-level language model. Candidates are then scored by
//! `log p(y | prefix) − log p(y)` and kept when the score exceeds `ln τ`.
//! Baselines (perplexity, hashed n-gram importance, random, full) and an
//! evaluation harness over synthetic labeled domains live alongside.

pub mod baselines;
pub mod cli;
pub mod corpus;
pub mod error;
pub mod evaluation;
pub mod prefix;
pub mod scoring;
pub mod tensor;
pub mod tiny_lm;

pub use error::{Error, Result};
