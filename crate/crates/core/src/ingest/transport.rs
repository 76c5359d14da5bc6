use std::collections::HashMap;
use std::sync::{Condvar, Mutex};
use std::time::Duration;

use thiserror::Error;

/// Outcome of one failed HTTP attempt.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AttemptError {
    #[error("status {0}")]
    Status(u16),
    #[error("timed out")]
    Timeout,
    #[error("connection failed: {0}")]
    Connect(String),
    #[error("body too large")]
    TooLarge,
    #[error("{0}")]
    Other(String),
}

impl AttemptError {
    /// Server errors, throttling, timeouts and connection failures are
    /// worth retrying on the same URL; client errors are not.
    pub fn is_retryable(&self) -> bool {
        match self {
            Self::Status(s) => *s >= 500 || *s == 429 || *s == 408,
            Self::Timeout | Self::Connect(_) => true,
            Self::TooLarge | Self::Other(_) => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Response {
    pub body: Vec<u8>,
    pub content_type: Option<String>,
}

/// A blocking GET. Implementations must be shareable across worker threads.
pub trait Transport: Send + Sync {
    fn get(&self, url: &str, max_bytes: u64) -> Result<Response, AttemptError>;
}

pub struct HttpTransport {
    agent: ureq::Agent,
}

impl HttpTransport {
    pub fn new(timeout: Duration) -> Self {
        let config = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .user_agent(format!("nftkit/{}", crate::VERSION))
            .build();
        Self {
            agent: ureq::Agent::new_with_config(config),
        }
    }
}

impl Default for HttpTransport {
    fn default() -> Self {
        Self::new(Duration::from_secs(30))
    }
}

fn classify(e: ureq::Error) -> AttemptError {
    match e {
        ureq::Error::StatusCode(s) => AttemptError::Status(s),
        ureq::Error::Timeout(_) => AttemptError::Timeout,
        ureq::Error::BodyExceedsLimit(_) => AttemptError::TooLarge,
        ureq::Error::HostNotFound | ureq::Error::ConnectionFailed => AttemptError::Connect(e.to_string()),
        ureq::Error::Io(io) => AttemptError::Connect(io.to_string()),
        other => AttemptError::Other(other.to_string()),
    }
}

impl Transport for HttpTransport {
    fn get(&self, url: &str, max_bytes: u64) -> Result<Response, AttemptError> {
        let mut resp = self.agent.get(url).call().map_err(classify)?;
        let status = resp.status().as_u16();
        if !(200..300).contains(&status) {
            return Err(AttemptError::Status(status));
        }
        let content_type = resp
            .headers()
            .get("content-type")
            .and_then(|v| v.to_str().ok())
            .map(String::from);
        let body = resp
            .body_mut()
            .with_config()
            .limit(max_bytes)
            .read_to_vec()
            .map_err(classify)?;
        Ok(Response { body, content_type })
    }
}

/// Caps in-flight requests per host. Wraps another transport.
pub struct HostLimiter<'a> {
    inner: &'a dyn Transport,
    per_host: usize,
    active: Mutex<HashMap<String, usize>>,
    freed: Condvar,
}

impl<'a> HostLimiter<'a> {
    pub fn new(inner: &'a dyn Transport, per_host: usize) -> Self {
        Self {
            inner,
            per_host: per_host.max(1),
            active: Mutex::new(HashMap::new()),
            freed: Condvar::new(),
        }
    }
}

fn host_of(url: &str) -> &str {
    let rest = url.split_once("://").map_or(url, |(_, r)| r);
    rest.split(['/', '?', '#']).next().unwrap_or(rest)
}

impl Transport for HostLimiter<'_> {
    fn get(&self, url: &str, max_bytes: u64) -> Result<Response, AttemptError> {
        let host = host_of(url).to_ascii_lowercase();
        {
            let mut active = self.active.lock().expect("limiter lock");
            while active.get(&host).copied().unwrap_or(0) >= self.per_host {
                active = self.freed.wait(active).expect("limiter lock");
            }
            *active.entry(host.clone()).or_insert(0) += 1;
        }
        let out = self.inner.get(url, max_bytes);
        {
            let mut active = self.active.lock().expect("limiter lock");
            if let Some(n) = active.get_mut(&host) {
                *n -= 1;
            }
        }
        self.freed.notify_all();
        out
    }
}
