use thiserror::Error;

/// Errors produced by model construction, inference and I/O.
#[derive(Debug, Error)]
pub enum Error {
    #[error("transition matrix is not ergodic (irreducible and aperiodic)")]
    NotErgodic,

    #[error("argument outside the function domain: {0}")]
    DomainError(String),

    #[error("value {value} is outside the support of the {family} family")]
    UnsupportedValue { family: &'static str, value: f64 },

    #[error("operation is not defined for the {0} family")]
    UnsupportedFamily(&'static str),

    #[error("fewer than 2 jointly present items to compare")]
    EmptyOverlap,

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("unknown preset `{0}`")]
    UnknownPreset(String),

    #[error("enumeration size {size} exceeds budget {budget}")]
    BudgetExceeded { size: f64, budget: u64 },

    #[error("all restarts collapsed to fewer than {n_groups} occupied groups")]
    DegenerateFit { n_groups: usize },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
