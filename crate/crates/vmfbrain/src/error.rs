//! Error type shared across the crate.

use thiserror::Error;

/// Errors produced by dataset handling, model construction, training and
/// evaluation.
#[derive(Debug, Error)]
pub enum VmfError {
    #[error("non-finite value at position ({row}, {col}) of the input tensor")]
    NonFiniteInput { row: usize, col: usize },

    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: String,
        expected: String,
        actual: String,
    },

    #[error("kernel {index} has near-zero norm {norm:.3e}; cannot renormalize")]
    DegenerateKernel { index: usize, norm: f64 },

    #[error("clustering requires at least {required} vectors, got {actual}")]
    TooFewVectors { required: usize, actual: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("slice index {index} out of bounds for volume with {slices} slices")]
    SliceOutOfBounds { index: usize, slices: usize },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("dataset error: {0}")]
    Dataset(String),

    #[error("checkpoint config hash mismatch: checkpoint {stored:#018x}, resolved config {actual:#018x}")]
    ConfigHashMismatch { stored: u64, actual: u64 },

    #[error("missing artifact: {0}")]
    MissingArtifact(String),

    #[error("NIfTI error in {path}: {message}")]
    Nifti { path: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("image encode error: {0}")]
    Image(#[from] image::ImageError),
}

pub type Result<T> = std::result::Result<T, VmfError>;

impl VmfError {
    /// Process exit code for the CLI: 2 config error, 3 missing artifact,
    /// 4 runtime failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            VmfError::InvalidConfig(_) | VmfError::ConfigHashMismatch { .. } => 2,
            VmfError::MissingArtifact(_) => 3,
            _ => 4,
        }
    }
}
