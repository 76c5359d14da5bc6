//! URI resolution and resumable, rate-limited downloading of token media
//! and metadata.

mod collection;
mod transport;

use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use collection::{
    expand_pattern, fetch_collection, read_targets, CollectionTarget, DownloadReport, FailedToken, FetchLimits,
    PROGRESS_FILE,
};
pub use transport::{AttemptError, HostLimiter, HttpTransport, Response, Transport};

pub const ENV_IPFS_GATEWAYS: &str = "NFTKIT_IPFS_GATEWAYS";
pub const ENV_ARWEAVE_GATEWAY: &str = "NFTKIT_ARWEAVE_GATEWAY";
pub const ENV_CACHE_ROOT: &str = "NFTKIT_CACHE_ROOT";

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("empty uri")]
    EmptyUri,
    #[error("unsupported uri scheme: {0}")]
    UnsupportedScheme(String),
    #[error("all candidates failed for {uri}: {}", format_attempts(.attempts))]
    AllCandidatesFailed {
        uri: String,
        /// Last error per candidate URL.
        attempts: Vec<(String, AttemptError)>,
    },
    #[error("{url}: body exceeds {limit} bytes")]
    SizeLimitExceeded { url: String, limit: u64 },
    #[error("invalid target: {0}")]
    InvalidTarget(String),
    #[error("io: {0}")]
    Io(String),
}

fn format_attempts(a: &[(String, AttemptError)]) -> String {
    a.iter()
        .map(|(u, e)| format!("{u} ({e})"))
        .collect::<Vec<_>>()
        .join("; ")
}

impl IngestError {
    pub fn code(&self) -> &'static str {
        match self {
            Self::EmptyUri => "ingest.empty_uri",
            Self::UnsupportedScheme(_) => "ingest.unsupported_scheme",
            Self::AllCandidatesFailed { .. } => "ingest.all_candidates_failed",
            Self::SizeLimitExceeded { .. } => "ingest.size_limit_exceeded",
            Self::InvalidTarget(_) => "ingest.invalid_target",
            Self::Io(_) => "ingest.io",
        }
    }
}

impl From<std::io::Error> for IngestError {
    fn from(e: std::io::Error) -> Self {
        Self::Io(e.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GatewayConfig {
    pub ipfs: Vec<String>,
    pub arweave: String,
}

impl Default for GatewayConfig {
    fn default() -> Self {
        Self {
            ipfs: vec!["https://ipfs.io".into(), "https://dweb.link".into()],
            arweave: "https://arweave.net".into(),
        }
    }
}

impl GatewayConfig {
    /// Defaults overridden by `NFTKIT_IPFS_GATEWAYS` (comma separated) and
    /// `NFTKIT_ARWEAVE_GATEWAY`.
    pub fn from_env() -> Self {
        let mut cfg = Self::default();
        if let Ok(list) = std::env::var(ENV_IPFS_GATEWAYS) {
            let gws: Vec<String> = list
                .split(',')
                .map(str::trim)
                .filter(|g| !g.is_empty())
                .map(String::from)
                .collect();
            if !gws.is_empty() {
                cfg.ipfs = gws;
            }
        }
        if let Ok(ar) = std::env::var(ENV_ARWEAVE_GATEWAY) {
            if !ar.trim().is_empty() {
                cfg.arweave = ar.trim().to_string();
            }
        }
        cfg
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FetchKind {
    Media,
    Metadata,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FetchPlan {
    pub original_uri: String,
    /// Tried in order.
    pub candidate_urls: Vec<String>,
    pub kind: FetchKind,
}

/// Rewrites `ipfs://` and `ar://` URIs onto the configured gateways;
/// `http(s)://` passes through unchanged.
pub fn resolve_uri(uri: &str, gateways: &GatewayConfig, kind: FetchKind) -> Result<FetchPlan, IngestError> {
    let uri = uri.trim();
    if uri.is_empty() {
        return Err(IngestError::EmptyUri);
    }
    let lower = uri.to_ascii_lowercase();
    let candidate_urls = if let Some(rest) = strip_scheme(uri, &lower, "ipfs://") {
        let rest = rest.strip_prefix("ipfs/").unwrap_or(rest);
        gateways
            .ipfs
            .iter()
            .map(|g| format!("{}/ipfs/{rest}", g.trim_end_matches('/')))
            .collect()
    } else if let Some(rest) = strip_scheme(uri, &lower, "ar://") {
        vec![format!("{}/{rest}", gateways.arweave.trim_end_matches('/'))]
    } else if lower.starts_with("http://") || lower.starts_with("https://") {
        vec![uri.to_string()]
    } else {
        let scheme = uri.split_once(':').map_or(uri, |(s, _)| s);
        return Err(IngestError::UnsupportedScheme(scheme.to_string()));
    };
    if candidate_urls.is_empty() {
        return Err(IngestError::InvalidTarget("no IPFS gateways configured".into()));
    }
    Ok(FetchPlan {
        original_uri: uri.to_string(),
        candidate_urls,
        kind,
    })
}

fn strip_scheme<'a>(uri: &'a str, lower: &str, scheme: &str) -> Option<&'a str> {
    lower.starts_with(scheme).then(|| &uri[scheme.len()..])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetryPolicy {
    /// Retries per candidate after the first attempt.
    pub retries: u32,
    #[serde(with = "millis")]
    pub base_backoff: Duration,
    #[serde(with = "millis")]
    pub max_backoff: Duration,
    pub max_bytes: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            retries: 3,
            base_backoff: Duration::from_millis(500),
            max_backoff: Duration::from_secs(30),
            max_bytes: 64 * 1024 * 1024,
        }
    }
}

impl RetryPolicy {
    /// Delay before retry number `attempt` (0-based): base · 2^attempt, capped.
    pub fn backoff(&self, attempt: u32) -> Duration {
        let factor = 1u32.checked_shl(attempt).unwrap_or(u32::MAX);
        self.base_backoff.saturating_mul(factor).min(self.max_backoff)
    }
}

mod millis {
    use serde::{Deserialize, Deserializer, Serializer};
    use std::time::Duration;

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u64(d.as_millis() as u64)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        Ok(Duration::from_millis(u64::deserialize(d)?))
    }
}

/// Body and content type of the first candidate that answered 2xx.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Fetched {
    pub url: String,
    pub bytes: Vec<u8>,
    pub content_type: Option<String>,
}

/// Tries candidates in order, retrying each on transient failures with
/// exponential backoff. A non-retryable status (such as 404) moves on to the
/// next candidate at once.
pub fn fetch_token(plan: &FetchPlan, policy: &RetryPolicy, transport: &dyn Transport) -> Result<Fetched, IngestError> {
    let mut attempts = Vec::new();
    for url in &plan.candidate_urls {
        let mut attempt = 0;
        let last = loop {
            match transport.get(url, policy.max_bytes) {
                Ok(resp) => {
                    return Ok(Fetched {
                        url: url.clone(),
                        bytes: resp.body,
                        content_type: resp.content_type,
                    })
                }
                Err(AttemptError::TooLarge) => {
                    return Err(IngestError::SizeLimitExceeded {
                        url: url.clone(),
                        limit: policy.max_bytes,
                    })
                }
                Err(e) if e.is_retryable() && attempt < policy.retries => {
                    log::debug!("{url}: {e}, retry {}", attempt + 1);
                    std::thread::sleep(policy.backoff(attempt));
                    attempt += 1;
                }
                Err(e) => break e,
            }
        };
        attempts.push((url.clone(), last));
    }
    Err(IngestError::AllCandidatesFailed {
        uri: plan.original_uri.clone(),
        attempts,
    })
}
