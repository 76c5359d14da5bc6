use std::collections::{HashMap, VecDeque};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{augment_pair, plan_mask, AugmentedPair, DynmaskError, MaskPolicy};
use crate::components::{encode_png, read_library, ComponentLibrary};
use crate::record::{Split, TokenRecord};
use crate::standardize::{write_manifest, ManifestHeader, MANIFEST_FILE, RESAMPLING, STD_WIDTH};

/// A training token that could not be augmented.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkippedToken {
    pub collection: String,
    pub token_id: u64,
    pub reason: String,
}

/// One emitted pair together with its manifest record. The record carries
/// the reduced caption and attributes and the masked trait list; its image
/// path still points at the source image.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedToken {
    pub record: TokenRecord,
    pub pair: AugmentedPair,
}

pub type StreamItem = Result<AugmentedToken, SkippedToken>;

type LibrarySlot = Result<Arc<ComponentLibrary>, String>;

/// Ordered augmentation over the training split. Tokens are processed in
/// parallel batches and re-emitted in manifest order.
pub struct AugmentStream {
    records: Vec<TokenRecord>,
    manifest_dir: PathBuf,
    library_root: PathBuf,
    policy: MaskPolicy,
    epoch: u64,
    batch: usize,
    pos: usize,
    ready: VecDeque<StreamItem>,
    libraries: HashMap<String, LibrarySlot>,
}

/// Builds the stream for the `train` records of a manifest. Collections
/// without a component library pass through unmasked.
pub fn augment_stream(
    records: &[TokenRecord],
    manifest_dir: &Path,
    library_root: &Path,
    policy: &MaskPolicy,
    epoch: u64,
) -> Result<AugmentStream, DynmaskError> {
    policy.validate()?;
    Ok(AugmentStream {
        records: records.iter().filter(|r| r.split == Split::Train).cloned().collect(),
        manifest_dir: manifest_dir.to_path_buf(),
        library_root: library_root.to_path_buf(),
        policy: policy.clone(),
        epoch,
        batch: 64 * rayon::current_num_threads().max(1),
        pos: 0,
        ready: VecDeque::new(),
        libraries: HashMap::new(),
    })
}

impl AugmentStream {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    fn load_libraries(&mut self, batch: &[TokenRecord]) {
        // manifests are sorted by collection, so a batch touches few libraries
        let wanted: Vec<&str> = batch.iter().map(|r| r.collection.as_str()).collect();
        self.libraries.retain(|c, _| wanted.contains(&c.as_str()));
        for c in wanted {
            if self.libraries.contains_key(c) {
                continue;
            }
            let slot = match read_library(&self.library_root, c) {
                Ok(Some(lib)) => Ok(Arc::new(lib)),
                Ok(None) => Ok(Arc::new(ComponentLibrary::empty(c))),
                Err(e) => Err(format!("component library: {e}")),
            };
            self.libraries.insert(c.to_string(), slot);
        }
    }

    fn process(&self, token: &TokenRecord) -> StreamItem {
        let skip = |reason: String| SkippedToken {
            collection: token.collection.clone(),
            token_id: token.token_id,
            reason,
        };
        let library = match &self.libraries[&token.collection] {
            Ok(l) => l,
            Err(e) => return Err(skip(e.clone())),
        };
        let path = self.manifest_dir.join(&token.image);
        let image = image::open(&path)
            .map_err(|e| skip(format!("{}: {e}", path.display())))?
            .into_rgba8();
        let plan = plan_mask(token, library, &self.policy, self.epoch).map_err(|e| skip(e.to_string()))?;
        let pair = augment_pair(token, &image, library, &plan, &self.policy).map_err(|e| skip(e.to_string()))?;
        let record = TokenRecord {
            caption: pair.caption.rendered().to_string(),
            attributes: pair.caption.attributes(),
            masked_traits: Some(plan.masked_traits.clone()),
            ..token.clone()
        };
        Ok(AugmentedToken { record, pair })
    }
}

impl Iterator for AugmentStream {
    type Item = StreamItem;

    fn next(&mut self) -> Option<StreamItem> {
        if self.ready.is_empty() && self.pos < self.records.len() {
            let end = (self.pos + self.batch).min(self.records.len());
            let batch: Vec<TokenRecord> = self.records[self.pos..end].to_vec();
            self.load_libraries(&batch);
            let out: Vec<StreamItem> = batch.par_iter().map(|t| self.process(t)).collect();
            self.ready.extend(out);
            self.pos = end;
        }
        self.ready.pop_front()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AugmentSummary {
    pub emitted: usize,
    pub skipped: usize,
    pub masked_segments: usize,
}

/// Header for an augmented sidecar manifest.
pub fn augmented_header(policy: &MaskPolicy, epoch: u64) -> ManifestHeader {
    let mut extra = serde_json::Map::new();
    extra.insert("p".into(), policy.p.into());
    extra.insert("fill".into(), policy.fill.to_string().into());
    extra.insert("mode".into(), policy.mode.clone().into());
    extra.insert("per_epoch_reseed".into(), policy.per_epoch_reseed.into());
    extra.insert("epoch".into(), epoch.into());
    ManifestHeader {
        kind: "augmented".into(),
        version: crate::VERSION.into(),
        resampling: RESAMPLING.into(),
        width: STD_WIDTH,
        ratios: None,
        seed: Some(policy.seed),
        extra,
    }
}

/// Materializes a stream: images at `<out>/images/<coll>/<id>.png`, the
/// sidecar manifest at `<out>/manifest.jsonl`, skips at `<out>/skipped.jsonl`.
pub fn write_augmented(out: &Path, stream: AugmentStream) -> Result<AugmentSummary, DynmaskError> {
    let io = |e: std::io::Error| DynmaskError::Io(e.to_string());
    let header = augmented_header(&stream.policy, stream.epoch);
    let mut summary = AugmentSummary::default();
    let mut records = Vec::new();
    let mut skipped = Vec::new();
    for item in stream {
        match item {
            Ok(t) => {
                let rel = PathBuf::from("images")
                    .join(&t.record.collection)
                    .join(format!("{}.png", t.record.token_id));
                let dest = out.join(&rel);
                fs::create_dir_all(dest.parent().expect("image dir")).map_err(io)?;
                fs::write(&dest, encode_png(&image::DynamicImage::ImageRgba8(t.pair.image))).map_err(io)?;
                summary.emitted += 1;
                summary.masked_segments += t.pair.plan.masked_traits.len();
                records.push(TokenRecord { image: rel, ..t.record });
            }
            Err(s) => {
                summary.skipped += 1;
                skipped.push(s);
            }
        }
    }
    write_manifest(&out.join(MANIFEST_FILE), &header, &records).map_err(|e| DynmaskError::Io(e.to_string()))?;
    let mut buf = Vec::new();
    for s in &skipped {
        serde_json::to_writer(&mut buf, s).map_err(|e| DynmaskError::Io(e.to_string()))?;
        buf.push(b'\n');
    }
    fs::write(out.join("skipped.jsonl"), buf).map_err(io)?;
    Ok(summary)
}
