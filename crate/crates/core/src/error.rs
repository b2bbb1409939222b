use thiserror::Error;

/// Errors raised by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("not available: {0}")]
    NotAvailable(String),

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("unsupported function kind: {0}")]
    UnsupportedKind(String),

    #[error("problem is infeasible: {0}")]
    Infeasible(String),

    #[error("agent {agent} at t={t}: {source}")]
    Agent {
        agent: usize,
        t: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("invariant violated at t={t}: {detail}")]
    Invariant { t: usize, detail: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    /// Attaches the agent id and iteration index to a lower-level error.
    pub(crate) fn at_agent(self, agent: usize, t: usize) -> Self {
        Error::Agent {
            agent,
            t,
            source: Box::new(self),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
