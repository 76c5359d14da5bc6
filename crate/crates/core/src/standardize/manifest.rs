use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{partition, SplitRatios, StandardizeError, RESAMPLING, STD_WIDTH};
use crate::metadata::{render_caption_by_id, render_partial_caption};
use crate::record::{Split, TokenRecord};

pub const MANIFEST_FILE: &str = "manifest.jsonl";

/// First line of every manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestHeader {
    /// `manifest` for standardized data, `augmented` for masked pairs.
    pub kind: String,
    pub version: String,
    pub resampling: String,
    pub width: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ratios: Option<SplitRatios>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Stage-specific parameters.
    #[serde(flatten)]
    pub extra: serde_json::Map<String, serde_json::Value>,
}

impl ManifestHeader {
    pub fn standardized(ratios: SplitRatios, seed: u64) -> Self {
        Self {
            kind: "manifest".into(),
            version: crate::VERSION.into(),
            resampling: RESAMPLING.into(),
            width: STD_WIDTH,
            ratios: Some(ratios),
            seed: Some(seed),
            extra: Default::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub header: ManifestHeader,
    pub records: Vec<TokenRecord>,
}

impl Manifest {
    pub fn collections(&self) -> BTreeSet<&str> {
        self.records.iter().map(|r| r.collection.as_str()).collect()
    }
}

/// Writes header plus records sorted by (collection, token id), so output
/// bytes do not depend on the order records were produced in.
pub fn write_manifest(path: &Path, header: &ManifestHeader, records: &[TokenRecord]) -> Result<(), StandardizeError> {
    let mut sorted: Vec<&TokenRecord> = records.iter().collect();
    sorted.sort_by(|a, b| (&a.collection, a.token_id).cmp(&(&b.collection, b.token_id)));
    let json_err = |e: serde_json::Error| StandardizeError::IoFailure(e.to_string());
    let mut buf = serde_json::to_vec(header).map_err(json_err)?;
    buf.push(b'\n');
    for r in sorted {
        serde_json::to_writer(&mut buf, r).map_err(json_err)?;
        buf.push(b'\n');
    }
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let tmp = path.with_extension("jsonl.tmp");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(&buf)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn read_manifest(path: &Path) -> Result<Manifest, StandardizeError> {
    let file = fs::File::open(path).map_err(|e| StandardizeError::IoFailure(format!("{}: {e}", path.display())))?;
    let mut lines = BufReader::new(file).lines().enumerate();
    let header = loop {
        match lines.next() {
            None => {
                return Err(StandardizeError::ManifestParse {
                    line: 1,
                    reason: "empty manifest".into(),
                })
            }
            Some((_, Ok(l))) if l.trim().is_empty() => continue,
            Some((i, l)) => {
                let l = l?;
                break serde_json::from_str::<ManifestHeader>(&l).map_err(|e| StandardizeError::ManifestParse {
                    line: i + 1,
                    reason: format!("header: {e}"),
                })?;
            }
        }
    };
    let mut records = Vec::new();
    for (i, l) in lines {
        let l = l?;
        if l.trim().is_empty() {
            continue;
        }
        records.push(
            serde_json::from_str::<TokenRecord>(&l).map_err(|e| StandardizeError::ManifestParse {
                line: i + 1,
                reason: e.to_string(),
            })?,
        );
    }
    Ok(Manifest { header, records })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum FindingKind {
    MissingFile,
    NotStandardized,
    SplitInconsistent,
    CaptionMismatch,
    DuplicateRecord,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Finding {
    pub kind: FindingKind,
    /// `<collection>/<token_id>`, or the collection for split findings.
    pub subject: String,
    pub detail: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub records: usize,
    pub findings: Vec<Finding>,
}

impl VerifyReport {
    pub fn is_clean(&self) -> bool {
        self.findings.is_empty()
    }

    pub fn count(&self, kind: FindingKind) -> usize {
        self.findings.iter().filter(|f| f.kind == kind).count()
    }

    pub fn into_result(self) -> Result<Self, StandardizeError> {
        if self.is_clean() {
            Ok(self)
        } else {
            Err(StandardizeError::ManifestInconsistent(self.findings.len()))
        }
    }
}

/// Re-checks a manifest against the files next to it: images exist at the
/// standard width, each collection sits in exactly one split (matching the
/// recorded seed and ratios when present), and captions re-render from the
/// stored attributes.
pub fn verify_manifest(path: &Path) -> Result<VerifyReport, StandardizeError> {
    let manifest = read_manifest(path)?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut findings = Vec::new();
    let mut seen = BTreeSet::new();
    let mut splits: BTreeMap<&str, BTreeSet<Split>> = BTreeMap::new();

    for r in &manifest.records {
        let key = r.key();
        if !seen.insert((r.collection.as_str(), r.token_id)) {
            findings.push(Finding {
                kind: FindingKind::DuplicateRecord,
                subject: key.clone(),
                detail: "token listed more than once".into(),
            });
        }
        splits.entry(&r.collection).or_default().insert(r.split);

        let image = base.join(&r.image);
        match image::image_dimensions(&image) {
            Err(_) if !image.exists() => findings.push(Finding {
                kind: FindingKind::MissingFile,
                subject: key.clone(),
                detail: r.image.display().to_string(),
            }),
            Err(e) => findings.push(Finding {
                kind: FindingKind::NotStandardized,
                subject: key.clone(),
                detail: format!("unreadable image: {e}"),
            }),
            Ok((w, _)) if w != manifest.header.width => findings.push(Finding {
                kind: FindingKind::NotStandardized,
                subject: key.clone(),
                detail: format!("width {w}, expected {}", manifest.header.width),
            }),
            Ok(_) => {}
        }

        let rendered = if r.masked_traits.is_some() {
            render_partial_caption(&r.template_id, &r.collection, &r.attributes)
        } else {
            render_caption_by_id(&r.template_id, &r.collection, &r.attributes)
        };
        match rendered {
            Ok(c) if c.rendered() == r.caption => {}
            Ok(c) => findings.push(Finding {
                kind: FindingKind::CaptionMismatch,
                subject: key.clone(),
                detail: format!("stored {:?}, attributes render {:?}", r.caption, c.rendered()),
            }),
            Err(e) => findings.push(Finding {
                kind: FindingKind::CaptionMismatch,
                subject: key.clone(),
                detail: e.to_string(),
            }),
        }
    }

    for (c, s) in &splits {
        if s.len() > 1 {
            findings.push(Finding {
                kind: FindingKind::SplitInconsistent,
                subject: c.to_string(),
                detail: format!("collection spans splits {s:?}"),
            });
        }
    }

    // Only a full standardized manifest holds every partitioned collection.
    if let (true, Some(ratios), Some(seed)) = (
        manifest.header.kind == "manifest",
        manifest.header.ratios,
        manifest.header.seed,
    ) {
        let ids: Vec<String> = splits.keys().map(|c| c.to_string()).collect();
        if let Ok(expected) = partition(&ids, ratios, seed) {
            for (c, s) in &splits {
                let want = expected.get(c);
                if s.len() == 1 && want != s.iter().next().copied() {
                    findings.push(Finding {
                        kind: FindingKind::SplitInconsistent,
                        subject: c.to_string(),
                        detail: format!("split {s:?} differs from seeded assignment {want:?}"),
                    });
                }
            }
        }
    }

    findings.sort_by(|a, b| (a.kind, &a.subject).cmp(&(b.kind, &b.subject)));
    Ok(VerifyReport {
        records: manifest.records.len(),
        findings,
    })
}
