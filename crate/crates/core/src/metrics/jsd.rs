use super::MetricsError;

const SUM_TOLERANCE: f64 = 1e-9;

/// Two probability vectors of equal length.
#[derive(Debug, Clone, PartialEq)]
pub struct DistributionPair {
    p: Vec<f64>,
    q: Vec<f64>,
}

fn check(name: &str, v: &[f64]) -> Result<(), MetricsError> {
    if let Some(x) = v.iter().find(|x| !x.is_finite() || **x < 0.0) {
        return Err(MetricsError::NotNormalized(format!("{name} has entry {x}")));
    }
    let sum: f64 = v.iter().sum();
    if (sum - 1.0).abs() > SUM_TOLERANCE {
        return Err(MetricsError::NotNormalized(format!("{name} sums to {sum}")));
    }
    Ok(())
}

/// Divides by the sum. Fails on negative or non-finite entries and on a
/// zero sum.
pub fn l1_normalize(v: &[f64]) -> Result<Vec<f64>, MetricsError> {
    if v.iter().any(|x| !x.is_finite() || *x < 0.0) {
        return Err(MetricsError::DegenerateDistribution(
            "entries must be finite and non-negative".into(),
        ));
    }
    let sum: f64 = v.iter().sum();
    if sum <= 0.0 {
        return Err(MetricsError::DegenerateDistribution("vector sums to zero".into()));
    }
    Ok(v.iter().map(|x| x / sum).collect())
}

impl DistributionPair {
    pub fn new(p: Vec<f64>, q: Vec<f64>) -> Result<Self, MetricsError> {
        if p.len() != q.len() {
            return Err(MetricsError::LengthMismatch(p.len(), q.len()));
        }
        check("P", &p)?;
        check("Q", &q)?;
        Ok(Self { p, q })
    }

    /// L1-normalizes both vectors first.
    pub fn from_weights(p: &[f64], q: &[f64]) -> Result<Self, MetricsError> {
        if p.len() != q.len() {
            return Err(MetricsError::LengthMismatch(p.len(), q.len()));
        }
        Self::new(l1_normalize(p)?, l1_normalize(q)?)
    }

    pub fn p(&self) -> &[f64] {
        &self.p
    }

    pub fn q(&self) -> &[f64] {
        &self.q
    }
}

/// `sum p * log2(p / m)`, with `0 * log 0 = 0`.
fn kl_to_mixture(p: &[f64], m: &[f64]) -> f64 {
    p.iter()
        .zip(m)
        .filter(|(pi, _)| **pi > 0.0)
        .map(|(pi, mi)| pi * (pi / mi).log2())
        .sum()
}

/// Jensen-Shannon divergence in bits, in `[0, 1]`.
pub fn jsd(d: &DistributionPair) -> f64 {
    let m: Vec<f64> = d.p.iter().zip(&d.q).map(|(a, b)| 0.5 * (a + b)).collect();
    let v = 0.5 * kl_to_mixture(&d.p, &m) + 0.5 * kl_to_mixture(&d.q, &m);
    v.clamp(0.0, 1.0)
}
