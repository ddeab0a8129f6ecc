//! Error type shared by the core modules.

use alloc::string::String;

/// Errors raised by the pure pipeline operations.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CoreError {
    /// An operation received an argument that violates its precondition.
    #[error("invalid usage: {0}")]
    Usage(String),

    /// A lookup by id found nothing.
    #[error("unknown id: {0}")]
    UnknownId(String),

    /// Two aligned inputs disagree on length or shape.
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    /// Rule text that is empty after normalization.
    #[error("invalid rule: {0}")]
    InvalidRule(String),

    /// A backend response that cannot be mapped to a judgment or label.
    /// Carries the raw response text for diagnosis.
    #[error("unparseable response: {reason}; raw: {raw:?}")]
    Parse { reason: String, raw: String },

    /// A generation response yielded zero usable rules.
    #[error("no rules parsed from generation response; raw: {raw:?}")]
    Generation { raw: String },

    /// Template rendering failed (missing binding, unexpanded placeholder,
    /// malformed template file).
    #[error("template error: {0}")]
    Template(String),

    /// The solver produced a non-finite intermediate value.
    #[error("solver error: {0}")]
    Solver(String),

    /// Hyperparameter selection cannot proceed (e.g. single-class validation
    /// set).
    #[error("selection error: {0}")]
    Selection(String),

    /// A configuration value violates its invariant.
    #[error("config error: {0}")]
    Config(String),

    /// Data violates a structural invariant (duplicate ids, bad labels).
    #[error("integrity error: {0}")]
    Integrity(String),

    /// Too few examples to form non-empty disjoint splits.
    #[error("cannot split {available} examples into three non-empty splits")]
    CannotSplit { available: usize },
}

pub type Result<T> = core::result::Result<T, CoreError>;
