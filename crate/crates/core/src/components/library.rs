use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use image::{DynamicImage, ImageBuffer, Luma};
use serde::{Deserialize, Serialize};

use super::{encode_png, ComponentAsset, ComponentError, Mask, SeparationConfig};
use crate::metadata::TraitKey;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkippedTrait {
    #[serde(rename = "trait_key")]
    pub key: TraitKey,
    pub carriers: usize,
    pub reason: String,
}

/// All recovered components of one collection.
#[derive(Debug, Clone, PartialEq)]
pub struct ComponentLibrary {
    pub collection: String,
    pub config: SeparationConfig,
    pub assets: BTreeMap<TraitKey, ComponentAsset>,
    pub skipped: Vec<SkippedTrait>,
}

impl ComponentLibrary {
    pub fn empty(collection: &str) -> Self {
        Self {
            collection: collection.to_string(),
            config: SeparationConfig::default(),
            assets: BTreeMap::new(),
            skipped: Vec::new(),
        }
    }

    pub fn get(&self, key: &TraitKey) -> Option<&ComponentAsset> {
        self.assets.get(key)
    }
}

#[derive(Serialize, Deserialize)]
struct AssetMeta {
    trait_key: TraitKey,
    config: SeparationConfig,
    width: u32,
    height: u32,
    coverage: f64,
    rounds_used: usize,
    carriers: usize,
}

#[derive(Serialize, Deserialize)]
struct LibraryEntry {
    trait_key: TraitKey,
    dir: String,
    coverage: f64,
}

#[derive(Serialize, Deserialize)]
struct LibraryIndex {
    collection: String,
    config: SeparationConfig,
    assets: Vec<LibraryEntry>,
    skipped: Vec<SkippedTrait>,
}

pub fn library_dir(root: &Path, collection: &str) -> PathBuf {
    root.join(collection).join("components")
}

fn pretty(v: &impl Serialize) -> Vec<u8> {
    let mut out = serde_json::to_vec_pretty(v).expect("library json");
    out.push(b'\n');
    out
}

/// Writes `<root>/<collection>/components/`, replacing any previous
/// library there. Each asset lives in a directory named by its trait hash.
pub fn write_library(lib: &ComponentLibrary, root: &Path) -> Result<PathBuf, ComponentError> {
    let dir = library_dir(root, &lib.collection);
    if dir.exists() {
        fs::remove_dir_all(&dir)?;
    }
    fs::create_dir_all(&dir)?;

    let mut entries = Vec::with_capacity(lib.assets.len());
    for (key, asset) in &lib.assets {
        let name = key.key_hash();
        let adir = dir.join(&name);
        fs::create_dir_all(&adir)?;
        fs::write(adir.join("mask.png"), asset.mask.to_png())?;
        fs::write(
            adir.join("cutout.png"),
            encode_png(&DynamicImage::ImageRgba8(asset.cutout.clone())),
        )?;
        let (w, h) = asset.mask.dimensions();
        let support: ImageBuffer<Luma<u16>, Vec<u16>> = ImageBuffer::from_raw(
            w,
            h,
            asset.support.iter().map(|s| (*s).min(u16::MAX as u32) as u16).collect(),
        )
        .expect("support size");
        fs::write(
            adir.join("support.png"),
            encode_png(&DynamicImage::ImageLuma16(support)),
        )?;
        let meta = AssetMeta {
            trait_key: key.clone(),
            config: lib.config,
            width: w,
            height: h,
            coverage: asset.mask.coverage(),
            rounds_used: asset.rounds_used,
            carriers: asset.carriers,
        };
        fs::write(adir.join("meta.json"), pretty(&meta))?;
        entries.push(LibraryEntry {
            trait_key: key.clone(),
            dir: name,
            coverage: meta.coverage,
        });
    }
    let mut skipped = lib.skipped.clone();
    skipped.sort_by(|a, b| a.key.cmp(&b.key));
    let index = LibraryIndex {
        collection: lib.collection.clone(),
        config: lib.config,
        assets: entries,
        skipped,
    };
    fs::write(dir.join("library.json"), pretty(&index))?;
    Ok(dir)
}

/// Loads a library written by [`write_library`]. A missing library yields
/// `Ok(None)`.
pub fn read_library(root: &Path, collection: &str) -> Result<Option<ComponentLibrary>, ComponentError> {
    let dir = library_dir(root, collection);
    let index_path = dir.join("library.json");
    if !index_path.exists() {
        return Ok(None);
    }
    let index: LibraryIndex = serde_json::from_slice(&fs::read(&index_path)?)
        .map_err(|e| ComponentError::Library(format!("{}: {e}", index_path.display())))?;
    let mut assets = BTreeMap::new();
    for entry in index.assets {
        let adir = dir.join(&entry.dir);
        let meta: AssetMeta = serde_json::from_slice(&fs::read(adir.join("meta.json"))?)
            .map_err(|e| ComponentError::Library(format!("{}: {e}", adir.display())))?;
        let mask = Mask::from_png(&fs::read(adir.join("mask.png"))?)?;
        let cutout = image::load_from_memory(&fs::read(adir.join("cutout.png"))?)
            .map_err(|e| ComponentError::Library(format!("cutout: {e}")))?
            .into_rgba8();
        let support = match fs::read(adir.join("support.png")) {
            Ok(bytes) => image::load_from_memory(&bytes)
                .map_err(|e| ComponentError::Library(format!("support: {e}")))?
                .into_luma16()
                .into_raw()
                .into_iter()
                .map(u32::from)
                .collect(),
            Err(_) => Vec::new(),
        };
        assets.insert(
            entry.trait_key.clone(),
            ComponentAsset {
                key: entry.trait_key,
                mask,
                cutout,
                rounds_used: meta.rounds_used,
                support,
                carriers: meta.carriers,
            },
        );
    }
    Ok(Some(ComponentLibrary {
        collection: index.collection,
        config: index.config,
        assets,
        skipped: index.skipped,
    }))
}
