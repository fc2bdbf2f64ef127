use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("level-0 center rejected {tries} times in a row")]
    SamplingExhausted { tries: usize },

    #[error("no discriminator tap named `{0}`")]
    UnknownTap(String),

    #[error("no discriminator tap at resolution {0}x{0}")]
    MissingTapForLevel(usize),

    #[error("pool of {have} scores is smaller than the {need} drawn per repeat")]
    PoolTooSmall { have: usize, need: usize },

    #[error("non-finite {what} at step {step}: {diagnostics}")]
    NonFinite { step: u64, what: String, diagnostics: String },

    #[error("config: {0}")]
    Config(String),

    #[error("checkpoint {path}: {reason}")]
    Checkpoint { path: PathBuf, reason: String },

    #[error("checkpoint format version {found} is not supported (expected {expected})")]
    CheckpointVersion { found: u32, expected: u32 },

    #[error("image: {0}")]
    Image(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
