//! Central error type shared by every module in the crate.
//!
//! Errors fall into two broad families and the distinction matters to
//! callers (the CLI maps them to different exit codes):
//!
//! * **input errors** — bad files, malformed rows, impossible configs.
//!   These are the caller's fault and are always recoverable by fixing
//!   the input.
//! * **contract violations** — an internal invariant failed (a finished
//!   model that does not satisfy its own audit, an attribution set that
//!   does not sum to the prediction). These indicate a bug and are never
//!   the caller's fault.

use thiserror::Error;

/// Convenient alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

/// Everything that can go wrong inside the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    /// A data file could not be parsed. `row` is the 1-based data-row
    /// index (the header is row 0); `column` names the offending field
    /// when known.
    #[error("ingestion error at row {row}{}: {reason}", fmt_column(.column))]
    Ingestion {
        row: usize,
        column: Option<String>,
        reason: String,
    },

    /// A split request could not be honored (class too small, fraction
    /// out of range, empty cohort, ...).
    #[error("split error: {0}")]
    Split(String),

    /// A simulation config was internally inconsistent or produced an
    /// unusable cohort.
    #[error("simulation error: {0}")]
    Simulation(String),

    /// Feature selection failed (empty input, invalid threshold, ...).
    #[error("selection error: {0}")]
    Selection(String),

    /// Model training could not proceed or diverged.
    #[error("training error: {0}")]
    Training(String),

    /// A prediction input did not match the model (wrong arity,
    /// non-finite values).
    #[error("prediction error: {0}")]
    Prediction(String),

    /// Hyper-parameter search failed; names the config and fold where
    /// the failure happened.
    #[error("tuning error: {0}")]
    Tuning(String),

    /// A metric was requested on unusable input (single-class labels,
    /// non-finite scores, length mismatch).
    #[error("metrics error: {0}")]
    Metrics(String),

    /// Attribution could not be computed (malformed model, too many
    /// features for exact enumeration, unknown sample).
    #[error("explanation error: {0}")]
    Explain(String),

    /// Outcome partitioning / group comparison failed (a group too
    /// small to compare, unknown feature).
    #[error("analysis error: {0}")]
    Analysis(String),

    /// A persisted model carries a schema version this build does not
    /// understand.
    #[error("model schema version {found} is not supported (expected {expected})")]
    ModelSchema { found: u32, expected: u32 },

    /// An internal invariant failed. Always a bug, never a user error.
    #[error("contract violation: {0}")]
    Contract(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True when the error indicates an internal bug rather than bad
    /// input. The CLI uses this to pick its exit code.
    pub fn is_contract_violation(&self) -> bool {
        matches!(self, Error::Contract(_))
    }
}

fn fmt_column(column: &Option<String>) -> String {
    match column {
        Some(c) => format!(", column '{c}'"),
        None => String::new(),
    }
}
