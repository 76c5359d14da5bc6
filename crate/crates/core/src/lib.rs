//! Toolkit for layered-NFT image/caption datasets.
//!
//! The pipeline runs in stages that only talk through on-disk formats:
//! ingest (download) -> standardize (normalize media, filter, partition,
//! manifest) -> separate (component library) -> augment (dynamic masking)
//! -> embeddings (NFTEMB01 matrices) -> metrics (top-k retrieval, CVI, JSD).

pub mod cli;
pub mod components;
pub mod dynmask;
pub mod embeddings;
pub mod error;
pub mod ingest;
pub mod metadata;
pub mod metrics;
pub mod record;
pub mod registry;
pub mod standardize;

pub use error::{Error, ErrorCode, Result};

/// Toolkit version written into manifests and run snapshots.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Derive a 64-bit seed from a base seed and a list of labels.
///
/// Used wherever a per-item stream must be reproducible independently of
/// processing order (frame choice per token, sampling per trait, mask plans).
pub fn derive_seed(base: u64, labels: &[&[u8]]) -> u64 {
    use sha2::{Digest, Sha256};
    let mut hasher = Sha256::new();
    hasher.update(base.to_le_bytes());
    for label in labels {
        hasher.update((label.len() as u64).to_le_bytes());
        hasher.update(label);
    }
    let digest = hasher.finalize();
    let mut out = [0u8; 8];
    out.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(out)
}
