//! One error type for the whole crate.

/// Anything that can go wrong across the pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Tensor or graph dimensions do not line up.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// An index referred outside its container.
    #[error("index {index} out of range for length {len}")]
    IndexOutOfRange { index: usize, len: usize },

    /// Geometry input that the algorithms cannot handle (collinear point
    /// sets, empty hulls, zero-area triangles in a mesh).
    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),

    /// A simulation or rollout produced non-finite values.
    #[error("diverged: {0}")]
    Diverged(String),

    /// User-supplied configuration that fails validation.
    #[error("invalid configuration: {0}")]
    Config(String),

    /// A file did not match the expected on-disk format.
    #[error("format error in {path}: {detail}")]
    Format { path: String, detail: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit code for the CLI: configuration problems exit with 2,
    /// runtime failures with 3.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            _ => 3,
        }
    }

    pub fn format(path: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::Format { path: path.into(), detail: detail.into() }
    }
}
