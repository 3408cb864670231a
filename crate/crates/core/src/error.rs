use std::path::PathBuf;
use thiserror::Error;

use crate::fairmetrics::MetricsError;
use crate::frd::FrdError;
use crate::genbridge::GenError;
use crate::imageio::ImageIoError;
use crate::linalg::LinalgError;
use crate::manifest::ManifestError;
use crate::preprocess::PreprocessError;
use crate::radiomics::RadiomicsError;
use crate::stratify::StratifyError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Coarse classification used by the CLI to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    /// Bad input data or arguments.
    Validation,
    /// File system or decoding failure.
    Io,
    /// A broken internal invariant.
    Internal,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Manifest(#[from] ManifestError),
    #[error(transparent)]
    Stratify(#[from] StratifyError),
    #[error(transparent)]
    Preprocess(#[from] PreprocessError),
    #[error(transparent)]
    Radiomics(#[from] RadiomicsError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Frd(#[from] FrdError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Gen(#[from] GenError),
    #[error(transparent)]
    ImageIo(#[from] ImageIoError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
    #[error("internal invariant violated: {0}")]
    Internal(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn category(&self) -> ErrorCategory {
        match self {
            Error::Manifest(e) => e.category(),
            Error::Gen(e) => e.category(),
            Error::ImageIo(_) | Error::Io { .. } => ErrorCategory::Io,
            Error::Linalg(LinalgError::NoConvergence { .. })
            | Error::Frd(FrdError::Linalg(LinalgError::NoConvergence { .. })) => {
                ErrorCategory::Internal
            }
            Error::Internal(_) => ErrorCategory::Internal,
            _ => ErrorCategory::Validation,
        }
    }
}
