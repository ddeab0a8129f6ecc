//! Core of a probabilistic rule-learning pipeline for binary text
//! classification.
//!
//! Rules are natural-language statements judged per example by a pluggable
//! backend into ternary values (+1 positive, -1 negative, 0 abstain). This
//! crate holds everything that is pure: the domain types, coverage and
//! feature mapping, deterministic dataset splitting and sampling, prompt
//! template parsing/rendering, response parsing, the elastic-net logistic
//! combiner, the refinement-loop policies (coverage filtering, hard-example
//! mining, merge/prune, early stopping), and the evaluation metrics.
//!
//! IO, backends, caching, and the CLI live in the companion `rlie` crate.
//! This crate is `no_std` + `alloc`.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod combiner;
pub mod dataset;
pub mod error;
pub mod genesis;
pub mod judge;
pub mod metrics;
pub mod refine;
pub mod types;

pub use error::CoreError;
pub use types::{Example, Judgment, JudgmentMatrix, Rule, RuleOrigin, RuleSet, SplitBundle};
