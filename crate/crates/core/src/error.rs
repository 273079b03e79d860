use thiserror::Error;

use crate::network::UnitId;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("input shape mismatch: expected {expected} values, got {actual}")]
    InputShape { expected: usize, actual: usize },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("parse error at {path}: {message}")]
    Parse { path: String, message: String },

    #[error("knapsack infeasible: minimum weight {required} exceeds budget {budget} (deficit {deficit})")]
    KnapsackInfeasible {
        required: u64,
        budget: u64,
        deficit: u64,
    },

    #[error(
        "error budget {delta} is below the minimum achievable global bound {min_achievable} for output {output}"
    )]
    BudgetInfeasible {
        output: usize,
        delta: f64,
        min_achievable: f64,
    },

    #[error("encoding error: no abstraction for unit {0}")]
    MissingAbstraction(UnitId),

    #[error("model error: {0}")]
    Model(String),

    #[error(
        "model has {binaries} binaries, over the built-in solver cap of {cap}; export it with --emit-lp and use an external solver"
    )]
    BinaryCapExceeded { binaries: usize, cap: usize },

    #[error("solution parse error on line {line}: {message}")]
    SolutionParse { line: usize, message: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn parse(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            message: message.into(),
        }
    }

    pub(crate) fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        Error::Io {
            path: path.display().to_string(),
            source,
        }
    }
}
