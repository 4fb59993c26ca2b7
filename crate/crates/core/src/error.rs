use std::path::PathBuf;

use thiserror::Error;

/// Errors produced across the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("degenerate joint {joint}: {reason}")]
    DegenerateJoint { joint: usize, reason: String },

    #[error("degenerate curve: {0}")]
    DegenerateCurve(String),

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("degenerate observation: every mixture component assigns zero likelihood")]
    DegenerateObservation,

    #[error("spec error at {location}: {message}")]
    Spec { location: String, message: String },

    #[error("unsupported prediction form: {0}")]
    UnsupportedForm(String),

    #[error("window error: {0}")]
    Window(String),

    #[error("predictor error: {0}")]
    Predictor(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn spec(location: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Spec {
            location: location.into(),
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
