//! Error type shared by every module in the crate.

use std::fmt;

#[derive(Debug)]
pub enum Error {
    /// Matrix dimensions do not line up for the requested operation.
    Shape(String),
    /// Input contains NaN or infinite entries, or is otherwise unusable.
    InvalidInput(String),
    /// Every singular value is zero; there is no spectrum to partition.
    DegenerateSpectrum,
    /// Requested minor-subspace size is outside `1..=d`.
    InvalidK { k: usize, d: usize },
    /// A dataset with zero examples was supplied.
    EmptyDataset,
    /// A task stream with zero tasks was supplied.
    EmptyStream,
    /// Tasks were presented out of order or the run state is inconsistent.
    Protocol(String),
    /// A text input (CSV row, manifest) failed to parse.
    Parse { line: usize, message: String },
    /// Task labels are not usable (gaps, non-contiguous class ids, ...).
    InvalidLabels(String),
    Io(std::io::Error),
    Json(serde_json::Error),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Shape(msg) => write!(f, "shape mismatch: {msg}"),
            Error::InvalidInput(msg) => write!(f, "invalid input: {msg}"),
            Error::DegenerateSpectrum => write!(f, "degenerate spectrum: all singular values are zero"),
            Error::InvalidK { k, d } => write!(f, "invalid subspace size k={k} for d={d}"),
            Error::EmptyDataset => write!(f, "empty dataset"),
            Error::EmptyStream => write!(f, "empty task stream"),
            Error::Protocol(msg) => write!(f, "protocol error: {msg}"),
            Error::Parse { line, message } => write!(f, "parse error at line {line}: {message}"),
            Error::InvalidLabels(msg) => write!(f, "invalid labels: {msg}"),
            Error::Io(e) => write!(f, "io error: {e}"),
            Error::Json(e) => write!(f, "json error: {e}"),
        }
    }
}

impl std::error::Error for Error {}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e)
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Json(e)
    }
}
