use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum HexError {
    #[error("{op}: shape mismatch: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("invalid axis {axis} for shape {shape:?}")]
    InvalidAxis { axis: usize, shape: Vec<usize> },
    #[error("non-finite values detected in {context}")]
    NonFinite { context: String },
    #[error("{op}: {msg}")]
    Domain { op: &'static str, msg: String },
    #[error("backward requires a scalar root, got shape {shape:?}")]
    NonScalarRoot { shape: Vec<usize> },
    #[error("backward already ran on this tape (use backward_retain to reuse it)")]
    TapeConsumed,
    #[error("backward root is not tracked on this tape")]
    UntrackedRoot,
    #[error("unknown parameter '{0}'")]
    UnknownParam(String),
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("dataset error: {0}")]
    Data(String),
    #[error("bad IDX magic: expected {expected:#010x}, found {found:#010x}")]
    IdxBadMagic { expected: u32, found: u32 },
    #[error("truncated IDX payload: header promises {expected} bytes, file has {found}")]
    IdxTruncated { expected: usize, found: usize },
    #[error("IDX image/label count mismatch: {images} images vs {labels} labels")]
    IdxCountMismatch { images: usize, labels: usize },
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("watchdog halt: {0}")]
    WatchdogHalt(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, HexError>;
