use std::path::PathBuf;

/// Errors produced by every layer of the toolkit.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch in {context}: expected {expected}, got {actual}")]
    ShapeMismatch {
        context: String,
        expected: String,
        actual: String,
    },

    #[error("channel mismatch in {context}: expected {expected} channels, got {actual}")]
    ChannelMismatch {
        context: String,
        expected: usize,
        actual: usize,
    },

    #[error("invalid convolution spec: {0}")]
    InvalidConvSpec(String),

    #[error("convolution output extent < 1: input {input}x{input_w} with effective kernel {k_eff}, padding {padding}, stride {stride}")]
    EmptyConvOutput {
        input: usize,
        input_w: usize,
        k_eff: usize,
        padding: usize,
        stride: usize,
    },

    #[error("loss node must be scalar, got shape {0}")]
    NonScalarLoss(String),

    #[error("gradient check requires 64-bit tensors, graph holds {0}")]
    PrecisionRequired(&'static str),

    #[error("batch norm in training mode needs batch*h*w >= 2, got {0}")]
    BatchTooSmall(usize),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("missing view {index:03} in {dir}")]
    MissingView { index: usize, dir: PathBuf },

    #[error("view {index:03} has size {actual} but expected {expected}")]
    ViewSizeMismatch {
        index: usize,
        expected: String,
        actual: String,
    },

    #[error("not a PFM file: {0}")]
    NotPfm(String),

    #[error("truncated PFM payload: expected {expected} bytes, got {actual}")]
    PfmTruncated { expected: usize, actual: usize },

    #[error("bad checkpoint container: {0}")]
    BadContainer(String),

    #[error("crop window ({x},{y}) size {size} exceeds image {w}x{h}")]
    CropOutOfBounds {
        x: usize,
        y: usize,
        size: usize,
        w: usize,
        h: usize,
    },

    #[error("index out of range: {0}")]
    IndexOutOfRange(String),

    #[error("non-finite loss at epoch {epoch}, step {step}")]
    NanLoss { epoch: usize, step: usize },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {message}")]
    ImageFormat { path: PathBuf, message: String },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
