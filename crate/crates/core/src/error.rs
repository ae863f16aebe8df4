use thiserror::Error;

/// Errors produced anywhere in the engine.
#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("csv parse error at line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error("empty table")]
    EmptyTable,

    #[error("non-numeric value {value:?} in column {column:?}, row {row}")]
    NonNumeric {
        column: String,
        row: usize,
        value: String,
    },

    #[error("unknown column {0:?}")]
    UnknownColumn(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("feature {0:?} appears continuous, refuse protected grouping")]
    ContinuousProtected(String),

    #[error("infeasible constraint set")]
    Infeasible,

    #[error("singular normal equations; use ridge_lambda > 0")]
    Singular,

    #[error("R² undefined: y_true is constant")]
    ConstantTarget,

    #[error("constraint vacuous: training DIDI is zero")]
    VacuousConstraint,

    #[error("adjustment solver did not converge at iteration {iteration}")]
    NotConverged { iteration: usize },

    #[error("config error: {0}")]
    Config(String),

    #[error("mismatch: {0}")]
    Mismatch(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::Dimension { expected, got })
    }
}
