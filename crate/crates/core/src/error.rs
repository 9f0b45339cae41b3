use thiserror::Error;

/// Errors raised across the engine. Variants map one-to-one onto the
/// failure categories callers are expected to distinguish.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("knowledge base is frozen: cannot {0}")]
    Frozen(String),

    #[error("knowledge base must be frozen before {0}")]
    NotFrozen(String),

    #[error("negative weight {weight} on non-trainable relation `{relation}`")]
    WeightDomain { relation: String, weight: f64 },

    #[error("unknown symbol `{0}`")]
    UnknownSymbol(String),

    #[error("index {index} out of range (size {size})")]
    Index { index: usize, size: usize },

    #[error("parse error at {line}:{column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("arity error at {line}:{column}: `{predicate}` has {found} arguments, expected 2")]
    Arity {
        line: usize,
        column: usize,
        predicate: String,
        found: usize,
    },

    #[error("rule `{rule}` is not a chain: variable `{variable}` breaks the chain")]
    Chain { rule: String, variable: String },

    #[error("builtin `{builtin}` must be the final body atom in `{rule}`")]
    BuiltinPosition { rule: String, builtin: String },

    #[error("unknown predicate `{0}`")]
    UnknownPredicate(String),

    #[error("recursive predicate `{0}` has no non-recursive base rule")]
    NoBaseCase(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("proof enumeration exceeded budget of {0} proofs")]
    OracleBudget(usize),

    #[error("input distribution sums to {0}, expected 1")]
    Normalization(f64),

    #[error("softmax over an empty support")]
    EmptySupport,

    #[error("training diverged at epoch {0}")]
    Divergence(usize),

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("ingest error at line {line}: {message}")]
    Ingest { line: usize, message: String },

    #[error("not enough labeled examples for class `{class}`: need {needed}, have {available}")]
    Split {
        class: String,
        needed: usize,
        available: usize,
    },

    #[error("I/O error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
