//! Error type shared by every module in the crate.

use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, SigmaError>;

#[derive(Debug, Error)]
pub enum SigmaError {
    /// Operand extents do not line up. Arithmetic never broadcasts silently.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// A configuration value is out of its allowed range.
    #[error("invalid configuration: {0}")]
    Config(String),

    /// A value left the domain an operation requires (e.g. a timestep <= 0).
    #[error("domain error: {0}")]
    Domain(String),

    /// The state matrix would make the recurrence unstable.
    #[error("stability error: {0}")]
    Stability(String),

    /// A non-finite value was produced or supplied. `index` is the flat
    /// position of the first offending element.
    #[error("numeric error at index {index}: {detail}")]
    Numeric { index: usize, detail: String },

    /// Malformed file content. `offset` is the byte position of the failure.
    #[error("parse error at byte {offset}: {detail}")]
    Parse { offset: usize, detail: String },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl SigmaError {
    pub fn dim(msg: impl Into<String>) -> Self {
        SigmaError::Dimension(msg.into())
    }

    pub fn config(msg: impl Into<String>) -> Self {
        SigmaError::Config(msg.into())
    }

    pub fn domain(msg: impl Into<String>) -> Self {
        SigmaError::Domain(msg.into())
    }

    /// Machine-readable rendering used by the CLI's stderr diagnostics.
    pub fn to_json(&self) -> serde_json::Value {
        let kind = match self {
            SigmaError::Dimension(_) => "dimension",
            SigmaError::Config(_) => "config",
            SigmaError::Domain(_) => "domain",
            SigmaError::Stability(_) => "stability",
            SigmaError::Numeric { .. } => "numeric",
            SigmaError::Parse { .. } => "parse",
            SigmaError::Io(_) => "io",
            SigmaError::Json(_) => "json",
        };
        serde_json::json!({ "kind": kind, "error": self.to_string() })
    }
}
