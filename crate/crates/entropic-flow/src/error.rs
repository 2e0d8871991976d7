use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("invalid path: {0}")]
    InvalidPath(String),
    #[error("invalid measure: {0}")]
    InvalidMeasure(String),
    #[error("invalid map: {0}")]
    InvalidMap(String),
    #[error("degenerate window: g(s) = g(t) = {0}")]
    DegenerateWindow(f64),
    #[error("representation error: {0}")]
    Representation(String),
    #[error("size mismatch: {0} vs {1}")]
    SizeMismatch(usize, usize),
    #[error("numerical failure: {0}")]
    Numerical(String),
}

pub type Result<T> = std::result::Result<T, Error>;
