use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("non-finite value in layer {layer}")]
    NonFinite { layer: usize },

    #[error("non-finite loss for member {member} at step {step}")]
    NonFiniteLoss { member: usize, step: u64 },

    #[error("sparsity schedule exhausted at step {step} (t_final = {t_final})")]
    ScheduleExhausted { step: u64, t_final: u64 },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("replay buffer is empty")]
    EmptyBuffer,

    #[error("empty input: {0}")]
    Empty(String),

    #[error("parse error at byte {offset} (record {record:?}): {message}")]
    Parse {
        offset: usize,
        record: Option<usize>,
        message: String,
    },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("schema mismatch; differing fields: {0:?}")]
    Schema(Vec<String>),

    #[error("checkpoint was written for a different configuration (digest {found}, expected {expected})")]
    DigestMismatch { expected: String, found: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
