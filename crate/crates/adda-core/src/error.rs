//! Error types shared across the engine.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Tensor or vector dimensions do not line up.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// An argument is outside its mathematical domain.
    #[error("domain error: {0}")]
    Domain(String),

    /// A vector that must be normalized has (near-)zero norm.
    #[error("degenerate embedding: {0}")]
    DegenerateEmbedding(String),

    /// A sub-batch plan cannot satisfy its size constraints.
    #[error("infeasible plan: {0}")]
    InfeasiblePlan(String),

    /// NaN or Inf appeared where the training contract forbids it.
    #[error("non-finite value: {0}")]
    NonFinite(String),

    /// Bad key or value in a config file.
    #[error("config error: {0}")]
    Config(String),

    /// Malformed binary file (dataset or checkpoint).
    #[error("format error at byte {offset}: {message}")]
    Format { offset: u64, message: String },

    /// Malformed metrics CSV.
    #[error("csv parse error at line {line}: {message}")]
    Csv { line: usize, message: String },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
