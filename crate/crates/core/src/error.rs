use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, IciError>;

#[derive(Debug, Error)]
pub enum IciError {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("load error at {location}: {message}")]
    Load { location: String, message: String },

    #[error("sampling error: {0}")]
    Sampling(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("label {label} out of range for {class_count} classes")]
    LabelRange { label: usize, class_count: usize },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("fit error: {0}")]
    Fit(String),
}

impl IciError {
    pub(crate) fn load(location: impl Into<String>, message: impl Into<String>) -> Self {
        IciError::Load {
            location: location.into(),
            message: message.into(),
        }
    }

    pub(crate) fn param(message: impl Into<String>) -> Self {
        IciError::Parameter(message.into())
    }
}
