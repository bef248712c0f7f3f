//! Crate-wide error type.

use thiserror::Error;

#[derive(Error, Debug)]
pub enum Error {
    #[error("invalid config: {0}")]
    InvalidConfig(String),

    /// Rubin pooling over an empty repetition list.
    #[error("no repetitions")]
    NoRepetitions,

    /// The normal equations are not positive definite at lambda = 0.
    #[error("singular design; use lambda > 0")]
    SingularDesign,

    /// AUC requires both classes to be present.
    #[error("AUC undefined: scores contain a single class")]
    AucUndefined,

    /// Covariance matrix too ill-conditioned to invert, even after
    /// ridge regularization.
    #[error("numerically singular covariance matrix (condition number {0:.3e})")]
    SingularCovariance(f64),

    #[error("marginalization weight must lie in [0, 1], got {0}")]
    InvalidWeight(f64),

    /// Malformed marker in the template wire format.
    #[error("malformed marker at byte {offset}: {detail}")]
    MalformedMarker { offset: usize, detail: String },

    /// Source text contains reserved control bytes outside a marker.
    #[error("reserved control byte {byte:#04x} at offset {offset}; escaping is not supported")]
    ReservedControlByte { byte: u8, offset: usize },

    #[error("name pool has no entries for gender '{0}'")]
    EmptyNamePool(String),

    #[error("report '{report}' is missing column '{column}'")]
    MissingColumn { report: String, column: String },

    #[error("stage '{stage}' failed for config {config_hash}: {source}")]
    Stage {
        stage: String,
        config_hash: String,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
