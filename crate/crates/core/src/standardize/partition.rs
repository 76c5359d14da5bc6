use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::StandardizeError;
use crate::record::Split;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitRatios {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        Self {
            train: 0.80,
            val: 0.05,
            test: 0.15,
        }
    }
}

impl SplitRatios {
    pub fn validate(&self) -> Result<(), StandardizeError> {
        let parts = [self.train, self.val, self.test];
        if parts.iter().any(|r| !r.is_finite() || *r < 0.0) {
            return Err(StandardizeError::InvalidRatios(format!("{parts:?}")));
        }
        if (parts.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(StandardizeError::InvalidRatios(format!("{parts:?} do not sum to 1")));
        }
        Ok(())
    }

    /// (train, val, test) counts for `p` collections; test takes the remainder.
    pub fn counts(&self, p: usize) -> (usize, usize, usize) {
        // the epsilon keeps exact products like 0.05 * 20 from flooring down
        let n_train = ((self.train * p as f64) + 1e-9).floor() as usize;
        let n_val = ((self.val * p as f64) + 1e-9).floor() as usize;
        let n_train = n_train.min(p);
        let n_val = n_val.min(p - n_train);
        (n_train, n_val, p - n_train - n_val)
    }
}

impl std::str::FromStr for SplitRatios {
    type Err = StandardizeError;
    /// `train:val:test`, e.g. `0.8:0.05:0.15`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<f64> = s
            .split(':')
            .map(|p| p.trim().parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|e| StandardizeError::InvalidRatios(format!("`{s}`: {e}")))?;
        let [train, val, test] = parts[..] else {
            return Err(StandardizeError::InvalidRatios(format!("`{s}` needs three parts")));
        };
        let r = SplitRatios { train, val, test };
        r.validate()?;
        Ok(r)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitAssignment {
    pub seed: u64,
    pub ratios: SplitRatios,
    pub splits: BTreeMap<String, Split>,
}

impl SplitAssignment {
    pub fn get(&self, collection: &str) -> Option<Split> {
        self.splits.get(collection).copied()
    }

    pub fn count(&self, split: Split) -> usize {
        self.splits.values().filter(|s| **s == split).count()
    }

    pub fn members(&self, split: Split) -> Vec<&str> {
        self.splits
            .iter()
            .filter(|(_, s)| **s == split)
            .map(|(c, _)| c.as_str())
            .collect()
    }
}

/// Shuffles the sorted, de-duplicated ids with a seeded generator and cuts
/// the shuffled order into train, val and test.
pub fn partition(collections: &[String], ratios: SplitRatios, seed: u64) -> Result<SplitAssignment, StandardizeError> {
    ratios.validate()?;
    let mut ids: Vec<&String> = collections.iter().collect();
    ids.sort();
    ids.dedup();
    if ids.len() < 3 {
        return Err(StandardizeError::TooFewCollections(ids.len()));
    }
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (n_train, n_val, _) = ratios.counts(ids.len());
    let splits = ids
        .into_iter()
        .enumerate()
        .map(|(i, id)| {
            let split = if i < n_train {
                Split::Train
            } else if i < n_train + n_val {
                Split::Val
            } else {
                Split::Test
            };
            (id.clone(), split)
        })
        .collect();
    Ok(SplitAssignment { seed, ratios, splits })
}
