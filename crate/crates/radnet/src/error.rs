use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum Error {
    /// Operand dimensions do not fit together.
    #[error("shape error: {0}")]
    Shape(String),
    /// Input data is unusable (non-finite entries, empty batches, ...).
    #[error("data error: {0}")]
    Data(String),
    /// A model or dataset file could not be parsed.
    #[error("parse error at {location}: {message}")]
    Parse { location: String, message: String },
    /// A model file was written by an incompatible format version.
    #[error("unsupported model format version {found} (expected {expected})")]
    UnsupportedVersion { found: u64, expected: u64 },
    /// A network construction precondition failed.
    #[error("construction error: {0}")]
    Construction(String),
    /// The requested configuration is outside what the method supports.
    #[error("unsupported: {0}")]
    Unsupported(String),
    /// A configured resource bound would be exceeded.
    #[error("resource error: {0}")]
    Resource(String),
    /// Training produced a non-finite loss.
    #[error("training diverged at epoch {epoch}: loss = {loss}")]
    Divergence { epoch: usize, loss: f64 },
    /// An internal invariant was violated beyond tolerance.
    #[error("internal consistency error: {0}")]
    Consistency(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
