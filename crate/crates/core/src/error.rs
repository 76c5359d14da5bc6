use thiserror::Error;

use crate::components::ComponentError;
use crate::dynmask::DynmaskError;
use crate::embeddings::EmbeddingError;
use crate::ingest::IngestError;
use crate::metadata::MetadataError;
use crate::metrics::MetricsError;
use crate::standardize::StandardizeError;

/// Module-qualified error code, e.g. `embeddings.bad_magic`.
pub trait ErrorCode {
    fn code(&self) -> &'static str;
}

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Metadata(#[from] MetadataError),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Standardize(#[from] StandardizeError),
    #[error(transparent)]
    Components(#[from] ComponentError),
    #[error(transparent)]
    Dynmask(#[from] DynmaskError),
    #[error(transparent)]
    Embeddings(#[from] EmbeddingError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

impl ErrorCode for Error {
    fn code(&self) -> &'static str {
        match self {
            Error::Metadata(e) => e.code(),
            Error::Ingest(e) => e.code(),
            Error::Standardize(e) => e.code(),
            Error::Components(e) => e.code(),
            Error::Dynmask(e) => e.code(),
            Error::Embeddings(e) => e.code(),
            Error::Metrics(e) => e.code(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
