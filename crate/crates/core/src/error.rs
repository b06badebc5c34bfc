use thiserror::Error;

/// Errors shared across the audit library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("invalid input: {0}")]
    Validation(String),

    #[error("attribute '{0}' not found in dataset")]
    AttributeNotFound(String),

    #[error("empty distribution: {0}")]
    EmptyDistribution(String),

    #[error("support mismatch: {0}")]
    SupportMismatch(String),

    #[error("infinite divergence: ideal probability is zero for observed outcome '{0}'")]
    InfiniteDivergence(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("out-of-vocabulary words: {}", .0.join(", "))]
    OutOfVocabulary(Vec<String>),

    #[error("infeasible: {0}")]
    Infeasible(String),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
