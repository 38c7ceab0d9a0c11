use thiserror::Error;

/// Error type shared across the crate.
#[derive(Debug, Error)]
pub enum VeritasError {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("invalid trace: {0}")]
    InvalidTrace(String),

    #[error("invalid video model: {0}")]
    InvalidVideo(String),

    #[error("invalid player config: {0}")]
    InvalidConfig(String),

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("invalid parameter {name}: {why}")]
    InvalidParam { name: &'static str, why: String },

    #[error("chunk {chunk}: {why}")]
    ChunkInvariant { chunk: usize, why: String },

    #[error("log invariant violation: {0}")]
    LogInvariant(String),

    #[error("parse error at line {line}: {why}")]
    Parse { line: usize, why: String },

    #[error("session log is empty")]
    EmptyLog,

    #[error("operation needs at least {need} chunks, log has {got}")]
    TooFewChunks { need: usize, got: usize },

    #[error("trace exhausted at t={at_s}s and tail hold is disabled")]
    TraceExhausted { at_s: f64 },

    #[error("download blocked: capacity stays zero through the end of the trace")]
    BlockedForever,

    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, VeritasError>;
