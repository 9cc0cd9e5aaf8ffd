use thiserror::Error;

/// Errors raised across the inference pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("assembly failed: {0}")]
    Assembly(String),

    #[error("linear solve failed: {0}")]
    Solve(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("no interior maximum in bracket [{lo}, {hi}]")]
    Bracket { lo: f64, hi: f64, scanned: Vec<(f64, f64)> },

    #[error("non-negative curvature at mode: {0}")]
    Curvature(String),

    #[error("grid error: {0}")]
    Grid(String),

    #[error("quadrature failed: {0}")]
    Quadrature(String),

    #[error("invalid experimental setup: {0}")]
    Setup(String),

    #[error("expected information gain failed: {dropped} of {replications} replications dropped")]
    Eig { dropped: usize, replications: usize },

    #[error("too few samples: {0}")]
    SampleCount(String),

    #[error("covariance factorization failed: {0}")]
    Covariance(String),

    #[error("sensor not aligned with reference grid: {0}")]
    Alignment(String),

    #[error("reference solver failed: {0}")]
    Reference(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
