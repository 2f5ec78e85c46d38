use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("series too short: need at least {minimum} steps, got {got}")]
    Sizing { minimum: usize, got: usize },

    #[error("format error at row {row}: {message}")]
    Format { row: usize, message: String },

    #[error("schema error: {0}")]
    Schema(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("series {series} is degenerate: zero standard deviation over the training range")]
    Degenerate { series: usize },

    #[error("split error: {0}")]
    Split(String),

    #[error("contract violated: {0}")]
    Contract(String),

    #[error("mode error: {0}")]
    Mode(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("non-finite value in {component}")]
    Numeric { component: String },

    #[error("divergence in {component}: loss {value} exceeds guard")]
    Divergence { component: String, value: f64 },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Errors caused by non-finite or exploding numbers rather than bad input.
    pub fn is_numeric(&self) -> bool {
        matches!(self, Error::Numeric { .. } | Error::Divergence { .. })
    }

    /// Prefixes the component of a numeric error, e.g. `forecast` becomes
    /// `P1 forecast`.
    pub fn within(self, owner: impl std::fmt::Display) -> Self {
        match self {
            Error::Numeric { component } => Error::Numeric {
                component: format!("{owner} {component}"),
            },
            Error::Divergence { component, value } => Error::Divergence {
                component: format!("{owner} {component}"),
                value,
            },
            other => other,
        }
    }
}

pub(crate) fn ensure_finite(component: &str, v: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Numeric {
            component: component.to_string(),
        })
    }
}
