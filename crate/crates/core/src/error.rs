use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("case parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("invalid grid model: {0}")]
    Model(String),

    #[error("network is not connected: bus {0} unreachable from the slack bus")]
    Disconnected(usize),

    #[error("more than one slack bus (buses {0} and {1})")]
    DuplicateSlack(usize, usize),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("power flow did not converge after {iters} iterations (max mismatch {mismatch:.3e})")]
    PowerFlowDiverged { iters: usize, mismatch: f64 },

    #[error("infeasible operating point: {0}")]
    Infeasible(String),

    #[error("Newton iteration failed at t = {t:.4} s after {iters} iterations (residual {residual:.3e})")]
    NewtonFailed { t: f64, iters: usize, residual: f64 },

    #[error("unknown load index {0}")]
    UnknownLoad(usize),

    #[error("invalid attack target: {0}")]
    InvalidTarget(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("not viable: {0}")]
    NotViable(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("missing channel {0}")]
    MissingChannel(String),

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}
