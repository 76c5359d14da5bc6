use std::str::FromStr;

use serde::Serialize;

use super::cvi::CviTerms;
use super::jsd::{jsd, l1_normalize, DistributionPair};
use super::MetricsError;

/// Inclusive `start:stop:step` grid over `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AlphaGrid {
    values: Vec<f64>,
}

impl AlphaGrid {
    pub fn new(start: f64, stop: f64, step: f64) -> Result<Self, MetricsError> {
        if step.is_nan() || step <= 0.0 || start > stop || start < 0.0 || stop > 1.0 {
            return Err(MetricsError::InvalidParameter(format!(
                "grid {start}:{stop}:{step} must satisfy 0 <= start <= stop <= 1, step > 0"
            )));
        }
        let n = ((stop - start) / step + 1e-9).floor() as usize;
        // Snap to 1e-12 so 0.05 * 12 prints as 0.6 rather than 0.6000000000000001.
        let values = (0..=n)
            .map(|i| ((start + i as f64 * step) * 1e12).round() / 1e12)
            .collect();
        Ok(Self { values })
    }

    pub fn from_values(values: Vec<f64>) -> Result<Self, MetricsError> {
        if values.is_empty() || values.iter().any(|a| !(0.0..=1.0).contains(a)) {
            return Err(MetricsError::InvalidParameter("grid values must lie in [0, 1]".into()));
        }
        Ok(Self { values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

impl FromStr for AlphaGrid {
    type Err = MetricsError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<f64> = s
            .split(':')
            .map(|p| p.trim().parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|e| MetricsError::InvalidParameter(format!("grid `{s}`: {e}")))?;
        match parts.as_slice() {
            [start, stop, step] => Self::new(*start, *stop, *step),
            _ => Err(MetricsError::InvalidParameter(format!(
                "grid `{s}` is not start:stop:step"
            ))),
        }
    }
}

/// One collection's CVI terms with its measured top-k accuracy.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepInput {
    pub collection: String,
    pub terms: CviTerms,
    pub topk: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepCurve {
    /// `(alpha, jsd)` in grid order.
    pub points: Vec<(f64, f64)>,
    /// Grid alpha with the smallest JSD; ties go to the smaller alpha.
    pub argmin: f64,
    pub min_jsd: f64,
}

/// For each alpha: L1-normalize the per-collection CVI vector and the top-k
/// vector, then take their JSD.
pub fn alpha_sweep(inputs: &[SweepInput], grid: &AlphaGrid) -> Result<SweepCurve, MetricsError> {
    if inputs.len() < 2 {
        return Err(MetricsError::InvalidParameter(format!(
            "alpha sweep needs at least 2 collections, got {}",
            inputs.len()
        )));
    }
    let topk: Vec<f64> = inputs.iter().map(|c| c.topk).collect();
    let topk = l1_normalize(&topk)?;

    let mut points = Vec::with_capacity(grid.values().len());
    for &alpha in grid.values() {
        let cvis: Vec<f64> = inputs.iter().map(|c| c.terms.value(alpha)).collect();
        let pair = DistributionPair::new(l1_normalize(&cvis)?, topk.clone())?;
        points.push((alpha, jsd(&pair)));
    }
    let (argmin, min_jsd) =
        points.iter().copied().fold(
            (f64::NAN, f64::INFINITY),
            |best, (a, v)| if v < best.1 { (a, v) } else { best },
        );
    Ok(SweepCurve {
        points,
        argmin,
        min_jsd,
    })
}
