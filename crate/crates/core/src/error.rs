use thiserror::Error;

/// Engine-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// A caller-supplied value violated a precondition.
    #[error("input error: {0}")]
    Input(String),

    /// A brute-force operation would exceed its enumeration limit.
    #[error("capability error: {0}")]
    Capability(String),

    /// The external scorer or embedder misbehaved; carries the raw reply.
    #[error("scorer error: {0}")]
    Scorer(String),

    /// A run configuration failed validation; lists every violated field.
    #[error("invalid configuration:\n{}", .0.join("\n"))]
    Validation(Vec<String>),

    /// A non-finite loss or gradient aborted an optimizer run.
    #[error("numeric failure at step {step}: {detail}")]
    Numeric { step: usize, detail: String },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
}

impl Error {
    pub fn input(msg: impl Into<String>) -> Self {
        Error::Input(msg.into())
    }

    pub fn capability(msg: impl Into<String>) -> Self {
        Error::Capability(msg.into())
    }

    /// Process exit code per the CLI contract: 1 validation, 2 numeric.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Numeric { .. } => 2,
            _ => 1,
        }
    }
}
