use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// The SE(3) logarithm is not well defined at (or past) a half turn.
    #[error("rotation angle {angle:.9} rad is too close to pi for a well-defined logarithm")]
    Singular { angle: f64 },

    #[error("model error: {0}")]
    Model(String),

    #[error("scenario error: {0}")]
    Scenario(String),

    /// A record or script failed validation; `line` is 1-based, `tick` is the
    /// tick index the line would have held, when known.
    #[error("schema error at line {line}{}: {message}", tick.map(|t| format!(" (tick {t})")).unwrap_or_default())]
    Schema {
        line: usize,
        tick: Option<usize>,
        message: String,
    },

    #[error("command violates limits on DoF {dof}: {value} not in [{lo}, {hi}]")]
    LimitViolation { dof: usize, value: f64, lo: f64, hi: f64 },

    #[error("policy error: {0}")]
    Policy(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by bad input documents rather than runtime failures.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Domain(_)
                | Error::Model(_)
                | Error::Scenario(_)
                | Error::Schema { .. }
                | Error::LimitViolation { .. }
                | Error::Json(_)
        )
    }
}
