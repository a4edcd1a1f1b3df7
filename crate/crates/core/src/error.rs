use thiserror::Error;

use crate::linalg::LinalgError;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    /// The QP Hessian is not positive definite on the constraint null space,
    /// or the KKT system is numerically singular.
    #[error("basis at coarse node {node}: KKT system not definite (pivot {pivot:e})")]
    Definiteness { node: usize, pivot: f64 },
    #[error("sample {sample}")]
    Sample {
        sample: usize,
        #[source]
        source: Box<Error>,
    },
    #[error("reduced mass matrix is rank deficient near coarse nodes {nodes:?}")]
    RankDeficient { nodes: Vec<usize> },
    #[error("linear algebra: {0}")]
    Linalg(#[from] LinalgError),
    #[error("config: {0}")]
    Config(String),
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("cache: {0}")]
    Cache(String),
    #[error("cache key mismatch: cache was built for {found}, config requires {expected}")]
    CacheMismatch { expected: String, found: String },
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}
