use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the kernel, table, inference and data layers.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument fell outside the mathematical domain of an operation.
    #[error("domain error in {op}: {detail}")]
    Domain { op: &'static str, detail: String },

    /// Inconsistent shapes, bad flags or otherwise invalid requests.
    #[error("usage error: {0}")]
    Usage(String),

    /// A file did not match its expected layout.
    #[error("format error in {source_name}: {detail}")]
    Format { source_name: String, detail: String },

    /// A layer second moment vanished, leaving the maxout correlation undefined.
    #[error("degenerate input: row {row} of {set} has zero second moment at layer {layer}")]
    DegenerateInput { set: &'static str, row: usize, layer: usize },

    /// The kernel correlation left [-1, 1] by more than the rounding band.
    #[error("correlation {value} outside [-1, 1] at layer {layer} (entry {row}, {col})")]
    CorrelationBound { value: f64, layer: usize, row: usize, col: usize },

    /// The jittered training kernel never admitted a Cholesky factorization.
    #[error("irrecoverable conditioning: factorization failed with noise {noise:e} after {escalations} escalations")]
    Conditioning { noise: f64, escalations: u32 },

    #[error("i/o error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

impl Error {
    pub(crate) fn usage(msg: impl Into<String>) -> Self {
        Error::Usage(msg.into())
    }

    pub(crate) fn format(source_name: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::Format { source_name: source_name.into(), detail: detail.into() }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
