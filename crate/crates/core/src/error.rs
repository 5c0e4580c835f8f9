use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("index out of range: {what} = {index}, allowed {lo}..={hi}")]
    Index {
        what: &'static str,
        index: usize,
        lo: usize,
        hi: usize,
    },

    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("mesh topology error: {0}")]
    Topology(String),

    #[error("discrete maximum principle condition violated: {0}")]
    Admissibility(String),

    #[error("linear solver did not converge: {iterations} iterations, relative residual {residual:e}")]
    NonConvergence { iterations: usize, residual: f64 },

    #[error("linear solver breakdown: {0}")]
    Breakdown(String),

    #[error("singular matrix: {0}")]
    Singular(String),

    #[error("time level {level}: {source}")]
    Step {
        level: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("config error at `{path}`: {msg}")]
    Config { path: String, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
