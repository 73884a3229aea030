use thiserror::Error;

/// Errors raised anywhere in the condensation pipeline.
///
/// The variants line up with the CLI's exit-code classes so the binary can
/// map them without inspecting messages.
#[derive(Debug, Error)]
pub enum Error {
    /// Shapes, indices or label values that violate an operation's contract.
    #[error("validation error: {0}")]
    Validation(String),
    /// Invalid configuration (rates, thresholds, step counts).
    #[error("config error: {0}")]
    Config(String),
    /// Numeric domain violation, e.g. log of a non-positive value.
    #[error("domain error: {0}")]
    Domain(String),
    /// Misuse of a recording tape.
    #[error("state error: {0}")]
    State(String),
    /// A differentiable path was cut where it must stay connected.
    #[error("contract violation: {0}")]
    Contract(String),
    /// Malformed dataset or synthetic-graph files.
    #[error("{file}:{line}: {message}")]
    Parse {
        file: String,
        line: usize,
        message: String,
    },
    /// Non-finite loss during optimization.
    #[error("numeric divergence: {0}")]
    Divergence(String),
    /// Input too large for a dense routine.
    #[error("not supported at this scale: {0}")]
    ScaleUnsupported(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn validation(msg: impl Into<String>) -> Error {
    Error::Validation(msg.into())
}

pub(crate) fn config(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}
