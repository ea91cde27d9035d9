//! Corpus-quality and grammatical-error-detection toolkit.
//!
//! The pipeline: generate synthetic corrupted/correct pairs ([`corrupt`]),
//! fit an n-gram model ([`lm`]), turn per-token distributions into
//! metrics and per-text features ([`metrics`]), analyze edits between
//! pairs ([`edits`]), flag anomalous texts ([`detect`]), and score
//! predictions with F0.5 on class-balanced data ([`eval`]).

pub mod cli;
pub mod corpus;
pub mod corrupt;
pub mod detect;
pub mod edits;
pub mod error;
pub mod eval;
pub mod lm;
pub mod metrics;
pub mod par;
pub mod seed;
pub mod stats;

pub use error::{Error, Result};
