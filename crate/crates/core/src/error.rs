//! Crate-wide error type.

use thiserror::Error;

/// Errors surfaced by the distillation toolkit.
///
/// Every variant carries enough context to point at the offending input;
/// callers that need process exit codes map `Error` to a code at the binary
/// boundary rather than in the library.
#[derive(Debug, Error)]
pub enum Error {
    /// A maze description failed validation (out-of-bounds target, zero
    /// dimension, overlapping special cells, bad discount, ...).
    #[error("invalid maze: {0}")]
    InvalidMaze(String),

    /// Exhaustive state enumeration would exceed the configured cap.
    #[error("state enumeration of {requested} joint observations exceeds cap {cap}")]
    StateCapExceeded { requested: usize, cap: usize },

    /// An action index outside the move set was submitted to the simulator.
    #[error("invalid action index {index} for agent {agent} (move set has {n_actions} entries)")]
    InvalidAction {
        agent: usize,
        index: usize,
        n_actions: usize,
    },

    /// Two vectors that must share a dimension do not.
    #[error("dimension mismatch: {context} ({left} vs {right})")]
    DimensionMismatch {
        context: &'static str,
        left: usize,
        right: usize,
    },

    /// A zero-norm vector reached a cosine computation.
    #[error("zero-norm action-value vector for observation {observation}: cosine distance undefined")]
    ZeroNormVector { observation: usize },

    /// Clustering was asked for more distinct directions than the data has.
    #[error("clustering rejected: {distinct} distinct vector directions available, {requested} labels requested")]
    TooFewDirections { distinct: usize, requested: usize },

    /// An SVM training set contained a single class.
    #[error("svm training set has a single class; a separating hyperplane is undefined")]
    SingleClassSvm,

    /// Generic invalid-argument error for API misuse.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Versioned artifact with an unknown or unsupported version tag.
    #[error("unsupported artifact version {found} (expected {expected}) in {context}")]
    UnsupportedVersion {
        context: &'static str,
        found: u32,
        expected: u32,
    },

    /// Serialization/deserialization failure.
    #[error("serialization: {0}")]
    Serde(#[from] serde_json::Error),

    /// Filesystem failure while reading or writing an artifact.
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// Convenience alias used across the crate.
pub type Result<T> = std::result::Result<T, Error>;
