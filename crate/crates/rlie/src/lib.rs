//! IO and orchestration companion to `rlie-core`: chat and judge backends,
//! the persistent judgment cache, JSONL dataset ingestion, prompt-template
//! files, the refinement-loop pipeline, strategy evaluation, and the CLI.

pub mod backend;
pub mod cli;
pub mod config;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod judge;
pub mod pipeline;
pub mod synthetic;
pub mod templates;

pub use error::{Result, RlieError};
