use std::path::PathBuf;

/// Errors produced by the basis, phantom, learning and reconstruction routines.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("infeasible residual bound: epsilon {epsilon:e} below best achievable residual {best:e}")]
    Infeasible { epsilon: f64, best: f64 },

    #[error("solver did not converge after {iterations} iterations (kkt residual {residual:e})")]
    NotConverged { iterations: usize, residual: f64 },

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("spec mismatch: file has N={file_n} L={file_l}, requested N={want_n} L={want_l}")]
    SpecMismatch { file_n: usize, file_l: usize, want_n: usize, want_l: usize },

    #[error("format error in {path}: {msg}")]
    Format { path: PathBuf, msg: String },

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub fn format(path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        Error::Format { path: path.into(), msg: msg.into() }
    }
}
