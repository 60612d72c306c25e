//! Error and warning types shared across the crate.

use serde::Serialize;

/// Convenience alias used by every fallible operation in this crate.
pub type Result<T> = std::result::Result<T, Error>;

/// All the ways an operation in this crate can fail.
///
/// Variants carry enough context to point at the offending input (row
/// numbers, group indices, parameter values) so callers can report the
/// problem without re-deriving it.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// The CSV header is missing a required column.
    #[error("missing required column `{name}` in CSV header")]
    MissingColumn { name: String },

    /// One or more cells failed to parse. Every bad cell is listed, not
    /// just the first: `rows` are 1-based data-record numbers (the header
    /// is not counted).
    #[error("{} malformed cell(s): {}", cells.len(), format_cells(cells))]
    InvalidCells { cells: Vec<CellError> },

    /// A time was zero or negative where a positive duration is required.
    #[error("non-positive time {time} on row {row}")]
    NonPositiveTime { row: usize, time: f64 },

    /// Tie smoothing requires every time to sit on the resolution grid.
    #[error("time {time} on row {row} is not a multiple of resolution {resolution} (within 1e-9)")]
    TimeOffGrid { row: usize, time: f64, resolution: f64 },

    /// A parameter was outside its documented domain.
    #[error("invalid argument: {message}")]
    InvalidArgument { message: String },

    /// The tail index `k` must satisfy `1 <= k <= n - 1`.
    #[error("tail sample size k={k} out of range for n={n} (need 1 <= k <= n-1)")]
    KOutOfRange { k: usize, n: usize },

    /// Pooled sample values must be strictly distinct for rank-based
    /// statistics to be well defined.
    #[error("duplicate value {value} in pooled sample (positions {first} and {second})")]
    DuplicateValues { value: f64, first: usize, second: usize },

    /// Log-moment spacings degenerated (`m2 <= m1^2`), so the moment
    /// estimator's variance ratio is undefined. Usually means `k` is too
    /// small (k=1 always degenerates).
    #[error("degenerate log spacings: m2={m2} <= m1^2={m1_sq}")]
    DegenerateSpacings { m2: f64, m1_sq: f64 },

    /// A finite endpoint only exists for a negative extreme value index.
    #[error("no finite endpoint: gamma={gamma} is not negative")]
    NoFiniteEndpoint { gamma: f64 },

    /// Every athlete entering the dependence estimator needs at least two
    /// observations; route the sample through `prepare_for_lambda` first.
    #[error(
        "athlete group {group} has {size} observation(s); the dependence estimator needs at \
         least 2 per group (apply a singleton policy via prepare_for_lambda)"
    )]
    GroupTooSmall { group: usize, size: usize },

    /// The structural description of a sample is inconsistent
    /// (offsets/sizes/values disagree).
    #[error("inconsistent sample structure: {message}")]
    InvalidSampleStructure { message: String },

    /// A simulation scenario failed validation.
    #[error("invalid scenario: {message}")]
    InvalidScenario { message: String },

    /// Wrapper for I/O failures, tagged with the path involved.
    ///
    /// The cause is carried in the error chain, not the message, so
    /// reporters that walk sources print it exactly once.
    #[error("i/o error on {path}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    /// Wrapper for CSV-level failures (not per-cell parse issues).
    #[error("csv error on {path}")]
    Csv {
        path: String,
        #[source]
        source: csv::Error,
    },

    /// Wrapper for JSON (de)serialization failures.
    #[error("json error")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Shorthand for an [`Error::InvalidArgument`].
    pub fn invalid(message: impl Into<String>) -> Self {
        Error::InvalidArgument { message: message.into() }
    }

    /// Shorthand for an [`Error::InvalidScenario`].
    pub fn scenario(message: impl Into<String>) -> Self {
        Error::InvalidScenario { message: message.into() }
    }

    /// Shorthand for an [`Error::InvalidSampleStructure`].
    pub fn structure(message: impl Into<String>) -> Self {
        Error::InvalidSampleStructure { message: message.into() }
    }

    /// Tag an I/O error with the path it happened on.
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}

/// One malformed CSV cell: which data record, which column, what the cell
/// contained.
#[derive(Debug, Clone, PartialEq)]
pub struct CellError {
    /// 1-based data-record number (the header row is not counted).
    pub row: usize,
    /// Column name as given in the header.
    pub column: String,
    /// Raw cell contents.
    pub value: String,
}

fn format_cells(cells: &[CellError]) -> String {
    let parts: Vec<String> = cells
        .iter()
        .map(|c| format!("row {} column `{}` value {:?}", c.row, c.column, c.value))
        .collect();
    parts.join("; ")
}

/// A non-fatal diagnostic produced while processing data.
///
/// Warnings never abort a computation; they surface decisions the library
/// made on the caller's behalf (resolved ties, clamped values, excluded
/// sweep points) so reports can disclose them.
#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct Warning {
    /// Stable machine-readable code, e.g. `"delta-clamped"`.
    pub code: String,
    /// Human-readable description.
    pub message: String,
}

impl Warning {
    pub fn new(code: impl Into<String>, message: impl Into<String>) -> Self {
        Warning { code: code.into(), message: message.into() }
    }
}
