use thiserror::Error;

/// Errors produced by the estimation pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("schema error: {0}")]
    Schema(String),

    #[error("validation error at row {row}, column `{column}`: {message}")]
    Validation {
        row: usize,
        column: String,
        message: String,
    },

    #[error("degenerate design: {0}")]
    DegenerateDesign(String),

    #[error("degenerate outcome: all outcomes equal {0}")]
    DegenerateOutcome(f64),

    #[error("cannot build {k} folds: arm {arm} has only {arm_size} observations")]
    InfeasibleFolds { k: usize, arm: u8, arm_size: usize },

    #[error("rank deficient design: {rows} rows for {cols} columns")]
    Rank { rows: usize, cols: usize },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("learner `{learner}` failed: {message}")]
    Learner { learner: String, message: String },

    #[error("fold {fold}: {source}")]
    Fold {
        fold: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(
        "degenerate variance estimate {value:e} for arm {arm}; report the per-arm variances instead"
    )]
    DegenerateVariance { arm: u8, value: f64 },

    #[error(
        "one-step variance estimate for arm {arm} is negative ({value:e}); use the TMLE, which respects the parameter bounds"
    )]
    NegativeVariance { arm: u8, value: f64 },

    #[error("targeting step did not converge after {iterations} iterations (final score {score:e})")]
    TiltNonConvergence {
        iterations: usize,
        score: f64,
        trace: Vec<f64>,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Strips fold annotations to reach the underlying failure.
    pub fn root(&self) -> &Error {
        match self {
            Error::Fold { source, .. } => source.root(),
            other => other,
        }
    }

    pub(crate) fn in_fold(self, fold: usize) -> Error {
        Error::Fold {
            fold,
            source: Box::new(self),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
