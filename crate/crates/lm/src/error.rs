use thiserror::Error;

#[derive(Debug, Error)]
pub enum LmError {
    #[error("{stream} token {value} is outside the vocabulary")]
    VocabOverflow { stream: &'static str, value: u32 },
    #[error("length {len} is not a multiple of the patch size {p}")]
    NotPatchAligned { len: usize, p: usize },
    #[error("non-finite loss")]
    NonFiniteLoss,
    #[error("invalid prompt: {0}")]
    InvalidPrompt(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
