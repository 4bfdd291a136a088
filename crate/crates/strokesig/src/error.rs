//! Crate-wide error type.

/// Convenience alias used by every fallible operation in the crate.
pub type Result<T> = std::result::Result<T, Error>;

/// Everything that can go wrong across the pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Underlying I/O failure (file missing, unreadable, ...).
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    /// The image decoder rejected the file.
    #[error("image error: {0}")]
    Image(#[from] image::ImageError),

    /// CSV parse or encode failure (manifests, feature tables).
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    /// JSON parse or encode failure (strokes, models, reports).
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    /// A configuration file or value is malformed; the string names the key.
    #[error("invalid configuration: {0}")]
    Config(String),

    /// Caller passed data that violates a documented precondition.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Binarization found no usable two-tone split in the gray histogram.
    #[error("image has no bimodal gray separation; nothing to binarize")]
    NoBimodalSeparation,

    /// An operation that needs ink was handed an empty mask or stroke set.
    #[error("empty input: {0}")]
    Empty(String),

    /// A contour or path is too short or collapsed for the requested
    /// descriptor.
    #[error("degenerate geometry: {0}")]
    Degenerate(String),

    /// Training produced a non-finite loss; the run cannot continue.
    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },

    /// Two data structures that must agree in shape do not.
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    /// The optimizer failed to reach its stopping condition.
    #[error("did not converge: {0}")]
    NoConvergence(String),
}
