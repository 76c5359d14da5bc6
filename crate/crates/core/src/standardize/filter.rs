use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ExclusionReason {
    AllDuplicateMedia,
    TooFewTokens,
    MissingMetadata,
    NoSemanticContent,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterRules {
    pub min_tokens: usize,
}

impl Default for FilterRules {
    fn default() -> Self {
        Self { min_tokens: 500 }
    }
}

/// What the filter needs to know about one collection.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CollectionStats {
    pub collection: String,
    /// Tokens whose media decoded and standardized.
    pub token_count: usize,
    /// SHA-256 of each standardized RGBA raster (dimensions included).
    pub content_hashes: Vec<[u8; 32]>,
    /// Tokens with a metadata file present.
    pub with_metadata: usize,
    /// Tokens whose metadata yielded at least one attribute.
    pub with_attributes: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CollectionVerdict {
    pub collection: String,
    pub kept: bool,
    pub reasons: Vec<ExclusionReason>,
}

pub fn filter_collection(stats: &CollectionStats, rules: &FilterRules) -> CollectionVerdict {
    let mut reasons = Vec::new();
    let hashes = &stats.content_hashes;
    if hashes.len() >= 2 && hashes.iter().all(|h| h == &hashes[0]) {
        reasons.push(ExclusionReason::AllDuplicateMedia);
    }
    if stats.token_count < rules.min_tokens {
        reasons.push(ExclusionReason::TooFewTokens);
    }
    if stats.with_metadata == 0 {
        reasons.push(ExclusionReason::MissingMetadata);
    } else if stats.with_attributes == 0 {
        reasons.push(ExclusionReason::NoSemanticContent);
    }
    CollectionVerdict {
        collection: stats.collection.clone(),
        kept: reasons.is_empty(),
        reasons,
    }
}
