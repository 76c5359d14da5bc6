//! Retrieval accuracy, the Comprehensive Variance Index (CVI), Jensen-Shannon
//! divergence and the alpha calibration sweep.

mod cvi;
mod jsd;
pub mod report;
mod retrieval;
mod sweep;
mod variance;

use thiserror::Error;

use crate::embeddings::EmbeddingError;
use crate::registry::UnknownStrategy;

pub use cvi::{cvi, cvi_report, cvi_terms, cvi_terms_with, CollectionCvi, CviParams, CviReport, CviTerms};
pub use jsd::{jsd, DistributionPair};
pub use retrieval::{rank_of, topk_accuracy, topk_by_group, RetrievalReport, Scope};
pub use sweep::{alpha_sweep, AlphaGrid, SweepCurve, SweepInput};
pub use variance::{row_variance, row_variance_with, variance_estimators, Population, Sample, VarianceEstimator};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("image and text rows are not aligned (first difference at row {row}: `{image}` vs `{text}`)")]
    Misaligned { row: usize, image: String, text: String },
    #[error("distribution lengths differ: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("distribution is not normalized: {0}")]
    NotNormalized(String),
    #[error("cannot L1-normalize: {0}")]
    DegenerateDistribution(String),
    #[error("no ground-truth target for query `{0}`")]
    TruthMissing(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error(transparent)]
    UnknownEstimator(#[from] UnknownStrategy),
}

impl MetricsError {
    pub fn code(&self) -> &'static str {
        match self {
            Self::Misaligned { .. } => "metrics.misaligned",
            Self::LengthMismatch(..) => "metrics.length_mismatch",
            Self::NotNormalized(_) => "metrics.not_normalized",
            Self::DegenerateDistribution(_) => "metrics.degenerate_distribution",
            Self::TruthMissing(_) => "metrics.truth_missing",
            Self::InvalidParameter(_) => "metrics.invalid_parameter",
            Self::Embedding(e) => e.code(),
            Self::UnknownEstimator(_) => "metrics.unknown_estimator",
        }
    }
}
