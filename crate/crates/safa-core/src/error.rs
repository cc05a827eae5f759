use thiserror::Error;

/// Unified error type for the whole toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("geometry error: {0}")]
    Geometry(String),

    #[error("index {index} out of range (limit {limit})")]
    Index { index: usize, limit: usize },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("schedule error: {0}")]
    Schedule(String),

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("quadrature did not converge: {0}")]
    Quadrature(String),

    #[error("rank-deficient system: {0}")]
    Rank(String),

    #[error("singular matrix: {0}")]
    Singular(String),

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("malformed file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
