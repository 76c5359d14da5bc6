use std::collections::BTreeMap;

use serde::Serialize;

use super::retrieval::topk_accuracy;
use super::variance::{variance_estimators, VarianceEstimator};
use super::MetricsError;
use crate::embeddings::{gram_f64, similarity, EmbeddingError, EmbeddingMatrix};
use crate::record::TokenRecord;

#[derive(Debug, Clone, PartialEq)]
pub struct CviParams {
    /// Weight of image-image spread against text-text spread, in `[0, 1]`.
    pub alpha: f64,
    /// Registered variance estimator name.
    pub variance: String,
}

impl Default for CviParams {
    fn default() -> Self {
        Self {
            alpha: 0.7,
            variance: "population".into(),
        }
    }
}

impl CviParams {
    pub fn with_alpha(alpha: f64) -> Self {
        Self {
            alpha,
            ..Self::default()
        }
    }

    fn validate(&self) -> Result<(), MetricsError> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(MetricsError::InvalidParameter(format!(
                "alpha {} outside [0, 1]",
                self.alpha
            )));
        }
        Ok(())
    }
}

/// Row-variance sums of S_II, S_TT and S_TI for one batch; CVI for any
/// alpha follows without touching the embeddings again.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CviTerms {
    pub n: usize,
    pub sum_var_ii: f64,
    pub sum_var_tt: f64,
    pub sum_var_ti: f64,
}

impl CviTerms {
    pub fn value(&self, alpha: f64) -> f64 {
        if self.n == 0 {
            return 0.0;
        }
        (alpha * self.sum_var_ii + (1.0 - alpha) * self.sum_var_tt + self.sum_var_ti) / (2.0 * self.n as f64)
    }
}

fn check_aligned(images: &EmbeddingMatrix, texts: &EmbeddingMatrix) -> Result<(), MetricsError> {
    if images.dim() != texts.dim() {
        return Err(EmbeddingError::DimMismatch {
            left: images.dim(),
            right: texts.dim(),
        }
        .into());
    }
    if images.rows() != texts.rows() {
        return Err(EmbeddingError::RowCountMismatch {
            left: images.rows(),
            right: texts.rows(),
        }
        .into());
    }
    if let Some(row) = images.ids().iter().zip(texts.ids()).position(|(a, b)| a != b) {
        return Err(MetricsError::Misaligned {
            row,
            image: images.ids()[row].clone(),
            text: texts.ids()[row].clone(),
        });
    }
    Ok(())
}

fn sum_row_variances(gram: &[f64], n: usize, est: &dyn VarianceEstimator) -> f64 {
    if n == 0 {
        return 0.0;
    }
    gram.chunks_exact(n).map(|row| est.variance(row)).sum()
}

pub fn cvi_terms(images: &EmbeddingMatrix, texts: &EmbeddingMatrix) -> Result<CviTerms, MetricsError> {
    cvi_terms_with(images, texts, &super::variance::Population)
}

/// Similarities are kept in f64 here; the f32 [`SimilarityMatrix`] is only
/// the storage type.
///
/// [`SimilarityMatrix`]: crate::embeddings::SimilarityMatrix
pub fn cvi_terms_with(
    images: &EmbeddingMatrix,
    texts: &EmbeddingMatrix,
    est: &dyn VarianceEstimator,
) -> Result<CviTerms, MetricsError> {
    check_aligned(images, texts)?;
    let n = images.rows();
    Ok(CviTerms {
        n,
        sum_var_ii: sum_row_variances(&gram_f64(images, images), n, est),
        sum_var_tt: sum_row_variances(&gram_f64(texts, texts), n, est),
        sum_var_ti: sum_row_variances(&gram_f64(texts, images), n, est),
    })
}

/// CVI of one aligned batch of image and text features. Rows are expected
/// to be L2-normalized and paired by position (identical id sequences).
pub fn cvi(images: &EmbeddingMatrix, texts: &EmbeddingMatrix, params: &CviParams) -> Result<f64, MetricsError> {
    params.validate()?;
    let est = variance_estimators().create(&params.variance)?;
    Ok(cvi_terms_with(images, texts, est.as_ref())?.value(params.alpha))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CollectionCvi {
    pub collection: String,
    pub n: usize,
    pub cvi: f64,
    pub terms: CviTerms,
    /// `(k, percent)` pairs when top-k evaluation was requested.
    pub topk: Option<Vec<(usize, f64)>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CviReport {
    pub alpha: f64,
    /// Ascending by CVI, ties by collection name.
    pub rows: Vec<CollectionCvi>,
}

/// Per-collection CVI over the manifest's tokens. Rows of both matrices are
/// looked up by `<collection>/<token_id>` in manifest order. With `ks`, each
/// row also carries within-collection text-to-image top-k accuracy.
pub fn cvi_report(
    records: &[TokenRecord],
    images: &EmbeddingMatrix,
    texts: &EmbeddingMatrix,
    params: &CviParams,
    ks: Option<&[usize]>,
) -> Result<CviReport, MetricsError> {
    params.validate()?;
    let est = variance_estimators().create(&params.variance)?;

    let mut by_collection: BTreeMap<&str, Vec<String>> = BTreeMap::new();
    for r in records {
        by_collection.entry(r.collection.as_str()).or_default().push(r.key());
    }
    for keys in by_collection.values_mut() {
        keys.sort_by_key(|k| crate::record::split_key(k).map(|(_, t)| t));
    }

    let mut rows = Vec::with_capacity(by_collection.len());
    for (collection, keys) in by_collection {
        let img = images.select(&keys)?;
        let txt = texts.select(&keys)?;
        let terms = cvi_terms_with(&img, &txt, est.as_ref())?;
        let topk = match ks {
            Some(ks) => {
                let sim = similarity(&txt, &img)?;
                let truth: BTreeMap<String, String> = keys.iter().map(|k| (k.clone(), k.clone())).collect();
                Some(topk_accuracy(&sim, &truth, ks)?.topk)
            }
            None => None,
        };
        rows.push(CollectionCvi {
            collection: collection.to_string(),
            n: terms.n,
            cvi: terms.value(params.alpha),
            terms,
            topk,
        });
    }
    rows.sort_by(|a, b| a.cvi.total_cmp(&b.cvi).then_with(|| a.collection.cmp(&b.collection)));
    Ok(CviReport {
        alpha: params.alpha,
        rows,
    })
}
