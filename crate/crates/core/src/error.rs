use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument fell outside the domain of the operation.
    #[error("input out of domain: {0}")]
    Domain(String),

    /// A model or configuration parameter failed validation. `key` is the
    /// dotted path of the offending field.
    #[error("invalid parameter `{key}`: {reason}")]
    InvalidParameter { key: String, reason: String },

    #[error("drift chain is reducible; communicating classes: {classes:?}")]
    Reducible { classes: Vec<Vec<usize>> },

    #[error("non-finite value at state (q={q}, theta={theta})")]
    NonFinite { q: usize, theta: usize },

    #[error(
        "value iteration did not converge after {iterations} iterations (residual {residual:e})"
    )]
    NotConverged {
        iterations: usize,
        residual: f64,
        trace: Vec<f64>,
    },

    #[error("policy undefined at state (q={q}, theta={theta})")]
    PolicyUndefined { q: usize, theta: usize },

    #[error("config error: {0}")]
    Config(String),

    #[error("malformed artifact: {0}")]
    Artifact(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(key: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            key: key.into(),
            reason: reason.into(),
        }
    }

    /// True for errors caused by bad input rather than numerics or IO.
    pub fn is_config_error(&self) -> bool {
        matches!(
            self,
            Error::Domain(_)
                | Error::InvalidParameter { .. }
                | Error::Reducible { .. }
                | Error::Config(_)
                | Error::PolicyUndefined { .. }
        )
    }

    pub fn is_numeric_error(&self) -> bool {
        matches!(self, Error::NonFinite { .. } | Error::NotConverged { .. })
    }
}
