use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {left:?} vs {right:?}")]
    ShapeMismatch { left: Vec<usize>, right: Vec<usize> },

    #[error("image of {height}x{width} is smaller than the {min}x{min} window")]
    ImageTooSmall { height: usize, width: usize, min: usize },

    #[error("channel mismatch: kernel expects {expected} input channels, input has {found}")]
    ChannelMismatch { expected: usize, found: usize },

    #[error("max pooling needs even spatial dims, got {height}x{width}; pad first")]
    OddDimensions { height: usize, width: usize },

    #[error("reflection pad of {pad} is not smaller than the dimension {dim}")]
    PadTooLarge { pad: usize, dim: usize },

    #[error("spatial dims {height}x{width} are not divisible by {divisor}; use pad_to_multiple first")]
    IndivisibleExtent { height: usize, width: usize, divisor: usize },

    #[error("non-finite gradient in {op}")]
    NonFiniteGradient { op: String },

    #[error("non-finite loss at step {step} (batch {batch})")]
    NonFiniteLoss { step: usize, batch: String },

    #[error("training diverged at step {step}: generator adversarial loss saturated for {window} consecutive steps")]
    Divergence { step: usize, window: usize },

    #[error("invalid configuration:\n  - {}", .0.join("\n  - "))]
    InvalidConfig(Vec<String>),

    #[error("leakage guard: {0}")]
    Leakage(String),

    #[error("{0}")]
    InvalidArgument(String),

    #[error("corpus validation failed:\n  - {}", .0.join("\n  - "))]
    Corpus(Vec<String>),

    #[error("malformed data: {0}")]
    Format(String),

    #[error("unsupported format version {found} (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn shape(left: &[usize], right: &[usize]) -> Self {
        Error::ShapeMismatch {
            left: left.to_vec(),
            right: right.to_vec(),
        }
    }
}
