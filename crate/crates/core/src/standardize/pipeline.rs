use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{
    filter_collection, partition, standardize_image, write_manifest, CollectionStats, CollectionVerdict, FilterRules,
    ManifestHeader, SplitAssignment, SplitRatios, StandardizeError, MANIFEST_FILE,
};
use crate::components::encode_png;
use crate::metadata::{
    parse_metadata_with, render_caption_by_id, templates, AttributeList, ParseOptions, DEFAULT_TEMPLATE,
};
use crate::record::{Split, TokenRecord};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub seed: u64,
    pub ratios: SplitRatios,
    pub rules: FilterRules,
    pub template_id: String,
    pub keep_empty: bool,
    /// Restrict to these collections; all subdirectories otherwise.
    pub collections: Option<Vec<String>>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            ratios: SplitRatios::default(),
            rules: FilterRules::default(),
            template_id: DEFAULT_TEMPLATE.into(),
            keep_empty: false,
            collections: None,
        }
    }
}

/// Files found for one downloaded collection.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CollectionPlan {
    pub collection: String,
    pub media: BTreeMap<u64, PathBuf>,
    pub meta: BTreeMap<u64, PathBuf>,
}

impl CollectionPlan {
    pub fn token_ids(&self) -> BTreeSet<u64> {
        self.media.keys().chain(self.meta.keys()).copied().collect()
    }
}

fn id_files(dir: &Path) -> Result<BTreeMap<u64, PathBuf>, StandardizeError> {
    let mut out = BTreeMap::new();
    if !dir.is_dir() {
        return Ok(out);
    }
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        // interrupted downloads
        if path.extension().is_some_and(|e| e == "part") {
            continue;
        }
        let id = path
            .file_stem()
            .and_then(|s| s.to_str())
            .and_then(|s| s.parse::<u64>().ok());
        if let (Some(id), true) = (id, path.is_file()) {
            out.insert(id, path);
        }
    }
    Ok(out)
}

/// Lists collections under an ingest root (`<coll>/media`, `<coll>/meta`).
pub fn plan_standardize(root: &Path, only: Option<&[String]>) -> Result<Vec<CollectionPlan>, StandardizeError> {
    let mut names = Vec::new();
    for entry in fs::read_dir(root).map_err(|e| StandardizeError::IoFailure(format!("{}: {e}", root.display())))? {
        let path = entry?.path();
        if path.join("media").is_dir() || path.join("meta").is_dir() {
            if let Some(name) = path.file_name().and_then(|n| n.to_str()) {
                names.push(name.to_string());
            }
        }
    }
    names.sort();
    if let Some(only) = only {
        names.retain(|n| only.contains(n));
    }
    names
        .into_iter()
        .map(|collection| {
            let dir = root.join(&collection);
            Ok(CollectionPlan {
                media: id_files(&dir.join("media"))?,
                meta: id_files(&dir.join("meta"))?,
                collection,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DroppedToken {
    pub token_id: u64,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CollectionOutcome {
    #[serde(flatten)]
    pub verdict: CollectionVerdict,
    pub split: Option<Split>,
    pub tokens: usize,
    pub dropped: Vec<DroppedToken>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineSummary {
    pub manifest: PathBuf,
    pub outcomes: Vec<CollectionOutcome>,
    pub assignment: SplitAssignment,
    pub records: usize,
}

struct TokenResult {
    token_id: u64,
    image: Result<([u8; 32], Option<u64>), String>,
    has_meta: bool,
    attrs: Result<AttributeList, String>,
}

fn raster_hash(img: &image::RgbaImage) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(img.width().to_le_bytes());
    h.update(img.height().to_le_bytes());
    h.update(img.as_raw());
    let mut out = [0u8; 32];
    out.copy_from_slice(&h.finalize());
    out
}

pub(crate) fn image_rel_path(collection: &str, token_id: u64) -> PathBuf {
    PathBuf::from(collection).join("images").join(format!("{token_id}.png"))
}

fn process_token(plan: &CollectionPlan, id: u64, out: &Path, cfg: &PipelineConfig) -> TokenResult {
    let frame_seed = crate::derive_seed(cfg.seed, &[b"frame", plan.collection.as_bytes(), &id.to_le_bytes()]);
    let image = match plan.media.get(&id) {
        None => Err("no media file".to_string()),
        Some(path) => fs::read(path)
            .map_err(|e| e.to_string())
            .and_then(|bytes| {
                let hint = path.extension().and_then(|e| e.to_str());
                standardize_image(&bytes, hint, frame_seed).map_err(|e| e.to_string())
            })
            .and_then(|std| {
                let dest = out.join(image_rel_path(&plan.collection, id));
                fs::write(&dest, encode_png(&image::DynamicImage::ImageRgba8(std.pixels.clone())))
                    .map_err(|e| e.to_string())?;
                Ok((raster_hash(&std.pixels), std.frame.map(|f| f.seed)))
            }),
    };
    let opts = ParseOptions {
        keep_empty: cfg.keep_empty,
    };
    let attrs = match plan.meta.get(&id) {
        None => Err("no metadata file".to_string()),
        Some(path) => fs::read(path)
            .map_err(|e| e.to_string())
            .and_then(|raw| parse_metadata_with(&raw, opts).map_err(|e| e.to_string())),
    };
    TokenResult {
        token_id: id,
        image,
        has_meta: plan.meta.contains_key(&id),
        attrs,
    }
}

/// Standardizes every collection under `root` into `out`: images at
/// `<out>/<coll>/images/<id>.png`, the manifest at `<out>/manifest.jsonl`
/// and per-collection verdicts at `<out>/verdicts.jsonl`.
pub fn standardize_root(root: &Path, out: &Path, cfg: &PipelineConfig) -> Result<PipelineSummary, StandardizeError> {
    cfg.ratios.validate()?;
    templates()
        .create(&cfg.template_id)
        .map_err(crate::metadata::MetadataError::from)?;
    let plans = plan_standardize(root, cfg.collections.as_deref())?;
    fs::create_dir_all(out)?;

    let mut outcomes = Vec::new();
    let mut kept: BTreeMap<String, Vec<TokenRecord>> = BTreeMap::new();
    for plan in &plans {
        let images_dir = out.join(&plan.collection).join("images");
        if images_dir.exists() {
            fs::remove_dir_all(&images_dir)?;
        }
        fs::create_dir_all(&images_dir)?;
        let ids: Vec<u64> = plan.token_ids().into_iter().collect();
        let results: Vec<TokenResult> = ids.par_iter().map(|&id| process_token(plan, id, out, cfg)).collect();

        let stats = CollectionStats {
            collection: plan.collection.clone(),
            token_count: results.iter().filter(|r| r.image.is_ok()).count(),
            content_hashes: results
                .iter()
                .filter_map(|r| r.image.as_ref().ok().map(|i| i.0))
                .collect(),
            with_metadata: results.iter().filter(|r| r.has_meta).count(),
            with_attributes: results.iter().filter(|r| r.attrs.is_ok()).count(),
        };
        let verdict = filter_collection(&stats, &cfg.rules);

        let mut records = Vec::new();
        let mut dropped = Vec::new();
        for r in results {
            match (&r.image, r.attrs) {
                (Ok((_, frame_seed)), Ok(attributes)) if verdict.kept => {
                    let caption = render_caption_by_id(&cfg.template_id, &plan.collection, &attributes)?;
                    records.push(TokenRecord {
                        collection: plan.collection.clone(),
                        token_id: r.token_id,
                        image: image_rel_path(&plan.collection, r.token_id),
                        caption: caption.rendered().to_string(),
                        template_id: cfg.template_id.clone(),
                        attributes,
                        split: Split::Train,
                        frame_seed: *frame_seed,
                        masked_traits: None,
                    });
                }
                (image, attrs) => {
                    if image.is_ok() {
                        let _ = fs::remove_file(out.join(image_rel_path(&plan.collection, r.token_id)));
                    }
                    if !verdict.kept {
                        continue;
                    }
                    let reason = match (image, attrs) {
                        (Err(e), _) => format!("media: {e}"),
                        (_, Err(e)) => format!("metadata: {e}"),
                        _ => unreachable!("kept tokens handled above"),
                    };
                    dropped.push(DroppedToken {
                        token_id: r.token_id,
                        reason,
                    });
                }
            }
        }
        if verdict.kept {
            log::info!("{}: kept {} tokens", plan.collection, records.len());
            kept.insert(plan.collection.clone(), records);
        } else {
            log::info!("{}: excluded {:?}", plan.collection, verdict.reasons);
            fs::remove_dir_all(out.join(&plan.collection))?;
        }
        outcomes.push(CollectionOutcome {
            verdict,
            split: None,
            tokens: kept.get(&plan.collection).map_or(0, Vec::len),
            dropped,
        });
    }

    let ids: Vec<String> = kept.keys().cloned().collect();
    let assignment = partition(&ids, cfg.ratios, cfg.seed)?;
    let mut all = Vec::new();
    for (c, records) in kept {
        let split = assignment.get(&c).expect("partitioned");
        all.extend(records.into_iter().map(|r| TokenRecord { split, ..r }));
    }
    for o in &mut outcomes {
        o.split = assignment.get(&o.verdict.collection);
    }

    let manifest = out.join(MANIFEST_FILE);
    write_manifest(&manifest, &ManifestHeader::standardized(cfg.ratios, cfg.seed), &all)?;
    let mut verdicts = Vec::new();
    for o in &outcomes {
        serde_json::to_writer(&mut verdicts, o).map_err(|e| StandardizeError::IoFailure(e.to_string()))?;
        verdicts.push(b'\n');
    }
    fs::write(out.join("verdicts.jsonl"), verdicts)?;

    Ok(PipelineSummary {
        manifest,
        outcomes,
        assignment,
        records: all.len(),
    })
}
