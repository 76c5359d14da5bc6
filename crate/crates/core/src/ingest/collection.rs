use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{fetch_token, resolve_uri, FetchKind, GatewayConfig, HostLimiter, IngestError, RetryPolicy, Transport};

pub const PROGRESS_FILE: &str = ".progress.jsonl";

/// One line of a target list.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CollectionTarget {
    pub name: String,
    /// Pattern with `{id}`, or a base URI to which `/<id>` is appended.
    pub metadata_uri: String,
    /// Media pattern; when absent the metadata `image` field is used.
    #[serde(default)]
    pub media_uri: Option<String>,
    pub first_id: u64,
    pub last_id: u64,
}

impl CollectionTarget {
    pub fn validate(&self) -> Result<(), IngestError> {
        let bad = |m: &str| Err(IngestError::InvalidTarget(format!("{}: {m}", self.name)));
        if self.name.is_empty() || self.name.contains(['/', '\\']) || self.name.starts_with('.') {
            return bad("name must be a plain directory name");
        }
        if self.first_id > self.last_id {
            return bad("empty id range");
        }
        Ok(())
    }

    pub fn id_count(&self) -> u64 {
        self.last_id - self.first_id + 1
    }
}

/// Reads a JSON-lines target list; blank lines and `#` comments are skipped.
pub fn read_targets(path: &Path) -> Result<Vec<CollectionTarget>, IngestError> {
    let file = fs::File::open(path).map_err(|e| IngestError::Io(format!("{}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        let t = line.trim();
        if t.is_empty() || t.starts_with('#') {
            continue;
        }
        let target: CollectionTarget = serde_json::from_str(t)
            .map_err(|e| IngestError::InvalidTarget(format!("{} line {}: {e}", path.display(), i + 1)))?;
        target.validate()?;
        out.push(target);
    }
    Ok(out)
}

pub fn expand_pattern(pattern: &str, id: u64) -> String {
    if pattern.contains("{id}") {
        pattern.replace("{id}", &id.to_string())
    } else {
        format!("{}/{id}", pattern.trim_end_matches('/'))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FetchLimits {
    /// Worker threads, hence the bound on in-flight requests overall.
    pub concurrency: usize,
    pub per_host: usize,
    pub retry: RetryPolicy,
    /// Fraction of the id range that must be on disk to call it complete.
    pub completeness: f64,
}

impl Default for FetchLimits {
    fn default() -> Self {
        Self {
            concurrency: 8,
            per_host: 8,
            retry: RetryPolicy::default(),
            completeness: 0.99,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FailedToken {
    pub token_id: u64,
    pub error_class: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DownloadReport {
    pub collection: String,
    pub attempted: usize,
    pub succeeded: usize,
    pub failed: Vec<FailedToken>,
    /// Tokens already complete on disk, not attempted.
    pub skipped: usize,
    pub bytes_total: u64,
    pub wall_time_ms: u64,
    pub completeness_threshold: f64,
    pub complete: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct FileEntry {
    path: String,
    size: u64,
    sha256: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct ProgressLine {
    token_id: u64,
    meta: FileEntry,
    media: FileEntry,
}

fn sha_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn entry_intact(dir: &Path, e: &FileEntry) -> bool {
    match fs::read(dir.join(&e.path)) {
        Ok(b) => b.len() as u64 == e.size && sha_hex(&b) == e.sha256,
        Err(_) => false,
    }
}

fn load_progress(dir: &Path) -> BTreeMap<u64, ProgressLine> {
    let mut done = BTreeMap::new();
    let Ok(f) = fs::File::open(dir.join(PROGRESS_FILE)) else {
        return done;
    };
    for line in BufReader::new(f).lines().map_while(Result::ok) {
        if let Ok(p) = serde_json::from_str::<ProgressLine>(&line) {
            done.insert(p.token_id, p);
        }
    }
    done
}

fn media_extension(bytes: &[u8], url: &str, content_type: Option<&str>) -> String {
    if let Ok(dec) = crate::standardize::detect(bytes, None) {
        return match dec.name() {
            "jpeg" => "jpg".into(),
            other => other.into(),
        };
    }
    if let Some(ct) = content_type {
        if let Some(name) = ct.split(';').next().and_then(|m| m.split('/').nth(1)) {
            if let Some(f) = crate::standardize::canonical_format(name) {
                return if f == "jpeg" { "jpg".into() } else { f.into() };
            }
        }
    }
    let path = url.split(['?', '#']).next().unwrap_or(url);
    match path.rsplit_once('.') {
        Some((_, ext))
            if !ext.contains('/') && ext.len() <= 5 && crate::standardize::canonical_format(ext).is_some() =>
        {
            ext.to_ascii_lowercase()
        }
        _ => "bin".into(),
    }
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), IngestError> {
    let tmp = path.with_extension("part");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

fn fetch_one(
    target: &CollectionTarget,
    id: u64,
    dir: &Path,
    gateways: &GatewayConfig,
    retry: &RetryPolicy,
    transport: &dyn Transport,
) -> Result<(ProgressLine, u64), IngestError> {
    let meta_plan = resolve_uri(&expand_pattern(&target.metadata_uri, id), gateways, FetchKind::Metadata)?;
    let meta = fetch_token(&meta_plan, retry, transport)?;

    let media_uri = match &target.media_uri {
        Some(p) => expand_pattern(p, id),
        None => serde_json::from_slice::<serde_json::Value>(&meta.bytes)
            .ok()
            .and_then(|v| v.get("image").and_then(|i| i.as_str()).map(String::from))
            .ok_or_else(|| IngestError::InvalidTarget(format!("token {id}: metadata has no `image` uri")))?,
    };
    let media_plan = resolve_uri(&media_uri, gateways, FetchKind::Media)?;
    let media = fetch_token(&media_plan, retry, transport)?;

    let meta_rel = format!("meta/{id}.json");
    let media_rel = format!(
        "media/{id}.{}",
        media_extension(&media.bytes, &media.url, media.content_type.as_deref())
    );
    write_atomic(&dir.join(&meta_rel), &meta.bytes)?;
    write_atomic(&dir.join(&media_rel), &media.bytes)?;
    let bytes = (meta.bytes.len() + media.bytes.len()) as u64;
    Ok((
        ProgressLine {
            token_id: id,
            meta: FileEntry {
                path: meta_rel,
                size: meta.bytes.len() as u64,
                sha256: sha_hex(&meta.bytes),
            },
            media: FileEntry {
                path: media_rel,
                size: media.bytes.len() as u64,
                sha256: sha_hex(&media.bytes),
            },
        },
        bytes,
    ))
}

/// Downloads metadata and media for every token in the target's id range
/// into `<root>/<name>/{meta,media}`. Tokens recorded as complete in the
/// progress file, with files still matching size and hash, are skipped.
pub fn fetch_collection(
    target: &CollectionTarget,
    root: &Path,
    gateways: &GatewayConfig,
    limits: &FetchLimits,
    transport: &dyn Transport,
) -> Result<DownloadReport, IngestError> {
    target.validate()?;
    let started = Instant::now();
    let dir: PathBuf = root.join(&target.name);
    fs::create_dir_all(dir.join("meta"))?;
    fs::create_dir_all(dir.join("media"))?;

    let done = load_progress(&dir);
    let mut todo = Vec::new();
    let mut skipped = 0;
    for id in target.first_id..=target.last_id {
        match done.get(&id) {
            Some(p) if entry_intact(&dir, &p.meta) && entry_intact(&dir, &p.media) => skipped += 1,
            _ => todo.push(id),
        }
    }

    let limiter = HostLimiter::new(transport, limits.per_host);
    let next = AtomicUsize::new(0);
    let progress = Mutex::new(
        fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(dir.join(PROGRESS_FILE))?,
    );
    let results: Mutex<Vec<(u64, Result<u64, IngestError>)>> = Mutex::new(Vec::with_capacity(todo.len()));
    let workers = limits.concurrency.max(1).min(todo.len().max(1));

    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(&id) = todo.get(i) else { break };
                let outcome =
                    fetch_one(target, id, &dir, gateways, &limits.retry, &limiter).and_then(|(line, bytes)| {
                        let mut json = serde_json::to_vec(&line).expect("progress json");
                        json.push(b'\n');
                        let mut f = progress.lock().expect("progress lock");
                        f.write_all(&json)?;
                        f.flush()?;
                        Ok(bytes)
                    });
                results.lock().expect("results lock").push((id, outcome));
            });
        }
    });

    let mut results = results.into_inner().expect("results lock");
    results.sort_by_key(|(id, _)| *id);
    let mut report = DownloadReport {
        collection: target.name.clone(),
        attempted: results.len(),
        succeeded: 0,
        failed: Vec::new(),
        skipped,
        bytes_total: 0,
        wall_time_ms: 0,
        completeness_threshold: limits.completeness,
        complete: false,
    };
    for (id, r) in results {
        match r {
            Ok(b) => {
                report.succeeded += 1;
                report.bytes_total += b;
            }
            Err(e) => {
                log::warn!("{}/{id}: {e}", target.name);
                report.failed.push(FailedToken {
                    token_id: id,
                    error_class: e.code().to_string(),
                    message: e.to_string(),
                });
            }
        }
    }
    let present = (report.succeeded + report.skipped) as f64;
    report.complete = present / target.id_count() as f64 >= limits.completeness;
    report.wall_time_ms = started.elapsed().as_millis() as u64;
    Ok(report)
}
