use std::sync::LazyLock;

use crate::embeddings::SimilarityMatrix;
use crate::registry::Registry;

/// Variance of one similarity row.
pub trait VarianceEstimator: Send + Sync {
    fn name(&self) -> &'static str;
    fn variance(&self, xs: &[f64]) -> f64;
}

fn centered_sum_sq(xs: &[f64]) -> f64 {
    let mean = xs.iter().sum::<f64>() / xs.len() as f64;
    xs.iter().map(|x| (x - mean) * (x - mean)).sum()
}

/// Divide by N.
#[derive(Debug, Default)]
pub struct Population;

impl VarianceEstimator for Population {
    fn name(&self) -> &'static str {
        "population"
    }

    fn variance(&self, xs: &[f64]) -> f64 {
        if xs.is_empty() {
            return 0.0;
        }
        centered_sum_sq(xs) / xs.len() as f64
    }
}

/// Divide by N - 1; a single sample has zero variance.
#[derive(Debug, Default)]
pub struct Sample;

impl VarianceEstimator for Sample {
    fn name(&self) -> &'static str {
        "sample"
    }

    fn variance(&self, xs: &[f64]) -> f64 {
        if xs.len() < 2 {
            return 0.0;
        }
        centered_sum_sq(xs) / (xs.len() - 1) as f64
    }
}

static ESTIMATORS: LazyLock<Registry<dyn VarianceEstimator>> = LazyLock::new(|| {
    Registry::<dyn VarianceEstimator>::new("variance estimator")
        .with("population", || Box::new(Population))
        .with("sample", || Box::new(Sample))
});

pub fn variance_estimators() -> &'static Registry<dyn VarianceEstimator> {
    &ESTIMATORS
}

/// Population variance of every full row (diagonal included).
pub fn row_variance(s: &SimilarityMatrix) -> Vec<f64> {
    row_variance_with(s, &Population)
}

pub fn row_variance_with(s: &SimilarityMatrix, est: &dyn VarianceEstimator) -> Vec<f64> {
    (0..s.rows())
        .map(|i| {
            let row: Vec<f64> = s.row(i).iter().map(|&v| f64::from(v)).collect();
            est.variance(&row)
        })
        .collect()
}
