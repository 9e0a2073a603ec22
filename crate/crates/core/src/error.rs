use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("lookup failed: {0}")]
    Lookup(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("structural error: {0}")]
    Structural(String),

    #[error("no convergence after {iters} iterations (residual {residual:.3e}): {context}")]
    NonConvergence {
        context: String,
        iters: usize,
        residual: f64,
        /// Last iterate, when the failing solver has one.
        last: Option<Vec<f64>>,
    },

    #[error("config error in `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn lookup(msg: impl Into<String>) -> Self {
        Error::Lookup(msg.into())
    }

    pub(crate) fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }

    /// Wraps an error with the name of the pipeline stage that produced it.
    pub fn in_stage(self, stage: &str) -> Self {
        match self {
            Error::NonConvergence {
                context,
                iters,
                residual,
                last,
            } => Error::NonConvergence {
                context: format!("{stage}: {context}"),
                iters,
                residual,
                last,
            },
            Error::Domain(m) => Error::Domain(format!("{stage}: {m}")),
            Error::Lookup(m) => Error::Lookup(format!("{stage}: {m}")),
            Error::Structural(m) => Error::Structural(format!("{stage}: {m}")),
            other => other,
        }
    }
}
