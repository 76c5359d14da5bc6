use std::collections::{BTreeMap, HashMap};

use serde::Serialize;

use super::MetricsError;
use crate::embeddings::SimilarityMatrix;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase", tag = "scope", content = "name")]
pub enum Scope {
    Global,
    Collection(String),
}

impl Scope {
    pub fn label(&self) -> &str {
        match self {
            Scope::Global => "global",
            Scope::Collection(c) => c,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RetrievalReport {
    pub scope: Scope,
    /// `(query id, 1-based rank of its target)` in row order.
    pub ranks: Vec<(String, usize)>,
    /// `(k, percent of queries with rank <= k)` in the requested k order.
    pub topk: Vec<(usize, f64)>,
}

impl RetrievalReport {
    pub fn n_queries(&self) -> usize {
        self.ranks.len()
    }

    pub fn accuracy(&self, k: usize) -> Option<f64> {
        self.topk.iter().find(|(kk, _)| *kk == k).map(|(_, v)| *v)
    }
}

/// 1-based rank of column `target` in `row` under descending score, ties
/// broken by ascending column index.
pub fn rank_of(row: &[f32], target: usize) -> usize {
    let t = row[target];
    1 + row
        .iter()
        .enumerate()
        .filter(|&(j, &v)| v > t || (v == t && j < target))
        .count()
}

/// Rows are queries (captions), columns are candidates (images).
pub fn topk_accuracy(
    s: &SimilarityMatrix,
    truth: &BTreeMap<String, String>,
    ks: &[usize],
) -> Result<RetrievalReport, MetricsError> {
    evaluate(s, truth, ks, Scope::Global)
}

fn evaluate(
    s: &SimilarityMatrix,
    truth: &BTreeMap<String, String>,
    ks: &[usize],
    scope: Scope,
) -> Result<RetrievalReport, MetricsError> {
    if let Some(k) = ks.iter().find(|k| **k == 0) {
        return Err(MetricsError::InvalidParameter(format!("k = {k}")));
    }
    let columns: HashMap<&str, usize> = s
        .right_ids()
        .iter()
        .enumerate()
        .map(|(j, id)| (id.as_str(), j))
        .collect();
    let mut ranks = Vec::with_capacity(s.rows());
    for (i, query) in s.left_ids().iter().enumerate() {
        let target = truth
            .get(query)
            .and_then(|t| columns.get(t.as_str()))
            .ok_or_else(|| MetricsError::TruthMissing(query.clone()))?;
        ranks.push((query.clone(), rank_of(s.row(i), *target)));
    }
    let n = ranks.len();
    let topk = ks
        .iter()
        .map(|&k| {
            let hits = ranks.iter().filter(|(_, r)| *r <= k).count();
            let pct = if n == 0 { 0.0 } else { 100.0 * hits as f64 / n as f64 };
            (k, pct)
        })
        .collect();
    Ok(RetrievalReport { scope, ranks, topk })
}

/// One report per group, each over the sub-matrix whose rows and columns
/// both belong to that group. `group_of` maps a row/column id to its group.
pub fn topk_by_group(
    s: &SimilarityMatrix,
    truth: &BTreeMap<String, String>,
    ks: &[usize],
    group_of: impl Fn(&str) -> String,
) -> Result<Vec<RetrievalReport>, MetricsError> {
    let mut rows: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    let mut cols: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (i, id) in s.left_ids().iter().enumerate() {
        rows.entry(group_of(id)).or_default().push(i);
    }
    for (j, id) in s.right_ids().iter().enumerate() {
        cols.entry(group_of(id)).or_default().push(j);
    }
    rows.into_iter()
        .map(|(group, r)| {
            let c = cols.get(&group).cloned().unwrap_or_default();
            let sub = s.restrict(&r, &c);
            evaluate(&sub, truth, ks, Scope::Collection(group))
        })
        .collect()
}
