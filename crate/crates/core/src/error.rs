use thiserror::Error;

/// Errors produced across the simulation, learning and I/O layers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    Param(String),

    #[error("integration diverged at t = {time:.4} s")]
    Divergence { time: f64 },

    #[error("LQR synthesis failed: {0}")]
    Synthesis(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("usage error: {0}")]
    Usage(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("degenerate distribution: {0}")]
    Degenerate(String),

    #[error("data error at line {line}: {msg}")]
    Data { line: usize, msg: String },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("config error in `{field}`: {msg}")]
    Config { field: String, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
