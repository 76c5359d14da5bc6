//! Component separation: recover each trait's pixel layer by differencing
//! images that share the trait, then superposing the per-round shared
//! regions.

mod library;
mod mask;

use std::collections::{BTreeMap, HashMap};
use std::path::PathBuf;
use std::sync::Arc;

use image::{Rgba, RgbaImage};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metadata::{TraitIndex, TraitKey};

pub use library::{read_library, write_library, ComponentLibrary, SkippedTrait};
pub(crate) use mask::encode_png;
pub use mask::Mask;

#[derive(Debug, Error)]
pub enum ComponentError {
    #[error("geometry mismatch: expected {expected:?}, found {found:?}")]
    GeometryMismatch { expected: (u32, u32), found: (u32, u32) },
    #[error("trait has {available} carriers, separation needs at least {needed}")]
    InsufficientImages { needed: usize, available: usize },
    #[error("invalid separation config: {0}")]
    InvalidConfig(String),
    #[error("cannot load image for token {token_id}: {reason}")]
    ImageLoad { token_id: u64, reason: String },
    #[error("component library: {0}")]
    Library(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl ComponentError {
    pub fn code(&self) -> &'static str {
        match self {
            Self::GeometryMismatch { .. } => "components.geometry_mismatch",
            Self::InsufficientImages { .. } => "components.insufficient_images",
            Self::InvalidConfig(_) => "components.invalid_config",
            Self::ImageLoad { .. } => "components.image_load",
            Self::Library(_) => "components.library",
            Self::Io(_) => "components.io",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeparationConfig {
    /// Images differenced per round (template plus `group_size - 1` others).
    pub group_size: usize,
    pub rounds: usize,
    /// Largest per-channel difference still counted as equal.
    pub tolerance: u8,
    /// Rounds a pixel must be shared in to enter the final mask.
    pub min_support: usize,
    pub seed: u64,
}

impl Default for SeparationConfig {
    fn default() -> Self {
        Self {
            group_size: 4,
            rounds: 8,
            tolerance: 0,
            min_support: 1,
            seed: 0,
        }
    }
}

impl SeparationConfig {
    pub fn validate(&self) -> Result<(), ComponentError> {
        if self.group_size < 2 {
            return Err(ComponentError::InvalidConfig("group size must be >= 2".into()));
        }
        if self.rounds < 1 {
            return Err(ComponentError::InvalidConfig("rounds must be >= 1".into()));
        }
        if self.min_support < 1 || self.min_support > self.rounds {
            return Err(ComponentError::InvalidConfig(format!(
                "min support {} outside 1..={}",
                self.min_support, self.rounds
            )));
        }
        Ok(())
    }
}

/// Supplies standardized images by token id.
pub trait ImageSource: Sync {
    fn load(&self, token_id: u64) -> Result<Arc<RgbaImage>, ComponentError>;
}

impl ImageSource for HashMap<u64, Arc<RgbaImage>> {
    fn load(&self, token_id: u64) -> Result<Arc<RgbaImage>, ComponentError> {
        self.get(&token_id).cloned().ok_or(ComponentError::ImageLoad {
            token_id,
            reason: "not in memory source".into(),
        })
    }
}

impl ImageSource for BTreeMap<u64, Arc<RgbaImage>> {
    fn load(&self, token_id: u64) -> Result<Arc<RgbaImage>, ComponentError> {
        self.get(&token_id).cloned().ok_or(ComponentError::ImageLoad {
            token_id,
            reason: "not in memory source".into(),
        })
    }
}

/// PNG files on disk, one path per token.
#[derive(Debug, Clone, Default)]
pub struct FileSource {
    pub paths: HashMap<u64, PathBuf>,
}

impl ImageSource for FileSource {
    fn load(&self, token_id: u64) -> Result<Arc<RgbaImage>, ComponentError> {
        let path = self.paths.get(&token_id).ok_or(ComponentError::ImageLoad {
            token_id,
            reason: "no image path".into(),
        })?;
        let img = image::open(path).map_err(|e| ComponentError::ImageLoad {
            token_id,
            reason: format!("{}: {e}", path.display()),
        })?;
        Ok(Arc::new(img.into_rgba8()))
    }
}

/// A pixel is shared when the template is not fully transparent there and
/// every other image matches it within `tolerance` on each RGB channel.
pub fn shared_mask(template: &RgbaImage, others: &[&RgbaImage], tolerance: u8) -> Result<Mask, ComponentError> {
    let dims = template.dimensions();
    if let Some(bad) = others.iter().find(|o| o.dimensions() != dims) {
        return Err(ComponentError::GeometryMismatch {
            expected: dims,
            found: bad.dimensions(),
        });
    }
    let close = |a: &Rgba<u8>, b: &Rgba<u8>| (0..3).all(|c| a[c].abs_diff(b[c]) <= tolerance);
    let bits = template
        .pixels()
        .enumerate()
        .map(|(i, t)| {
            if t[3] == 0 {
                return false;
            }
            let (x, y) = ((i as u32) % dims.0, (i as u32) / dims.0);
            others.iter().all(|o| close(t, o.get_pixel(x, y)))
        })
        .collect();
    Ok(Mask::from_bits(dims.0, dims.1, bits))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComponentAsset {
    pub key: TraitKey,
    pub mask: Mask,
    /// Template pixels under the mask (opaque), transparent elsewhere.
    pub cutout: RgbaImage,
    /// Rounds whose shared region was non-empty.
    pub rounds_used: usize,
    /// Per-pixel count of rounds in which the pixel was shared.
    pub support: Vec<u32>,
    pub carriers: usize,
}

/// Seed for one trait's round sampling; independent of processing order.
fn trait_seed(seed: u64, key: &TraitKey) -> u64 {
    crate::derive_seed(seed, &[key.trait_type.as_bytes(), key.value.as_bytes()])
}

/// Runs the sampling rounds for one trait. `carriers` should be sorted so
/// the result depends only on the carrier set and the seed.
pub fn separate_component(
    key: &TraitKey,
    carriers: &[u64],
    source: &dyn ImageSource,
    cfg: &SeparationConfig,
) -> Result<ComponentAsset, ComponentError> {
    cfg.validate()?;
    if carriers.len() < cfg.group_size {
        return Err(ComponentError::InsufficientImages {
            needed: cfg.group_size,
            available: carriers.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(trait_seed(cfg.seed, key));

    let mut dims: Option<(u32, u32)> = None;
    let mut support: Vec<u32> = Vec::new();
    let mut cutout = RgbaImage::new(0, 0);
    let mut rounds_used = 0;

    for _ in 0..cfg.rounds {
        let picks = rand::seq::index::sample(&mut rng, carriers.len(), cfg.group_size).into_vec();
        let images = picks
            .iter()
            .map(|&i| source.load(carriers[i]))
            .collect::<Result<Vec<_>, _>>()?;
        let template = &images[0];
        let d = *dims.get_or_insert_with(|| {
            support = vec![0; template.width() as usize * template.height() as usize];
            cutout = RgbaImage::new(template.width(), template.height());
            template.dimensions()
        });
        if template.dimensions() != d {
            return Err(ComponentError::GeometryMismatch {
                expected: d,
                found: template.dimensions(),
            });
        }
        let others: Vec<&RgbaImage> = images[1..].iter().map(|a| a.as_ref()).collect();
        let shared = shared_mask(template, &others, cfg.tolerance)?;
        if shared.count() > 0 {
            rounds_used += 1;
        }
        for (i, on) in shared.bits().iter().enumerate() {
            if *on {
                support[i] += 1;
                let (x, y) = ((i as u32) % d.0, (i as u32) / d.0);
                // most recent round wins
                let p = template.get_pixel(x, y);
                cutout.put_pixel(x, y, Rgba([p[0], p[1], p[2], 255]));
            }
        }
    }

    let (w, h) = dims.expect("rounds >= 1");
    let threshold = cfg.min_support as u32;
    let mask = Mask::from_bits(w, h, support.iter().map(|s| *s >= threshold).collect());
    for (i, on) in mask.bits().iter().enumerate() {
        if !*on {
            cutout.put_pixel((i as u32) % w, (i as u32) / w, Rgba([0, 0, 0, 0]));
        }
    }
    Ok(ComponentAsset {
        key: key.clone(),
        mask,
        cutout,
        rounds_used,
        support,
        carriers: carriers.len(),
    })
}

/// Separates every trait in the index. Traits that cannot be separated are
/// recorded as skipped, never raised.
pub fn separate_collection(
    collection: &str,
    index: &TraitIndex,
    source: &dyn ImageSource,
    cfg: &SeparationConfig,
) -> Result<ComponentLibrary, ComponentError> {
    cfg.validate()?;
    let traits: Vec<(&TraitKey, Vec<u64>)> = index
        .iter()
        .map(|(k, ids)| (k, ids.iter().copied().collect()))
        .collect();
    let results: Vec<Result<ComponentAsset, SkippedTrait>> = traits
        .par_iter()
        .map(|(key, ids)| {
            separate_component(key, ids, source, cfg).map_err(|e| SkippedTrait {
                key: (*key).clone(),
                carriers: ids.len(),
                reason: e.to_string(),
            })
        })
        .collect();

    let mut assets = BTreeMap::new();
    let mut skipped = Vec::new();
    for r in results {
        match r {
            Ok(a) => {
                assets.insert(a.key.clone(), a);
            }
            Err(s) => skipped.push(s),
        }
    }
    Ok(ComponentLibrary {
        collection: collection.to_string(),
        config: *cfg,
        assets,
        skipped,
    })
}
