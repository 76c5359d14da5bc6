//! Dynamic masking: per epoch, blank some component regions of a token's
//! image and drop the matching caption segments.

mod stream;

use std::fmt;
use std::str::FromStr;
use std::sync::LazyLock;

use image::{Rgba, RgbaImage};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::components::{ComponentError, ComponentLibrary, Mask};
use crate::metadata::{remove_trait, Caption, MetadataError, TraitKey};
use crate::record::TokenRecord;
use crate::registry::{Registry, UnknownStrategy};

pub use stream::{
    augment_stream, augmented_header, write_augmented, AugmentStream, AugmentSummary, AugmentedToken, SkippedToken,
    StreamItem,
};

#[derive(Debug, Error)]
pub enum DynmaskError {
    #[error("mask plan names `{0}` but the library has no such component")]
    MissingComponentAsset(TraitKey),
    #[error("geometry mismatch: image {image:?}, mask {mask:?}")]
    GeometryMismatch { image: (u32, u32), mask: (u32, u32) },
    #[error("invalid mask policy: {0}")]
    InvalidPolicy(String),
    #[error(transparent)]
    UnknownMode(#[from] UnknownStrategy),
    #[error(transparent)]
    Caption(#[from] MetadataError),
    #[error(transparent)]
    Component(#[from] ComponentError),
    #[error("{0}")]
    Io(String),
}

impl DynmaskError {
    pub fn code(&self) -> &'static str {
        match self {
            Self::MissingComponentAsset(_) => "dynmask.missing_component_asset",
            Self::GeometryMismatch { .. } => "dynmask.geometry_mismatch",
            Self::InvalidPolicy(_) => "dynmask.invalid_policy",
            Self::UnknownMode(_) => "dynmask.unknown_mode",
            Self::Caption(e) => e.code(),
            Self::Component(e) => e.code(),
            Self::Io(_) => "dynmask.io",
        }
    }
}

/// RGB fill colour, written as six hex digits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Fill(pub [u8; 3]);

impl FromStr for Fill {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim_start_matches('#');
        let bytes = hex::decode(s).map_err(|e| format!("fill `{s}`: {e}"))?;
        let rgb: [u8; 3] = bytes
            .try_into()
            .map_err(|_| format!("fill `{s}` must be 6 hex digits"))?;
        Ok(Fill(rgb))
    }
}

impl fmt::Display for Fill {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&hex::encode(self.0))
    }
}

impl Serialize for Fill {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for Fill {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskPolicy {
    pub p: f64,
    pub fill: Fill,
    /// Draw fresh plans each epoch; when off, every epoch reuses epoch 0's plans.
    pub per_epoch_reseed: bool,
    pub seed: u64,
    /// Registered selector name.
    pub mode: String,
}

impl Default for MaskPolicy {
    fn default() -> Self {
        Self {
            p: 0.5,
            fill: Fill([0, 0, 0]),
            per_epoch_reseed: true,
            seed: 0,
            mode: "independent".into(),
        }
    }
}

impl MaskPolicy {
    pub fn validate(&self) -> Result<(), DynmaskError> {
        if !(0.0..=1.0).contains(&self.p) {
            return Err(DynmaskError::InvalidPolicy(format!("p = {} outside [0, 1]", self.p)));
        }
        selectors().create(&self.mode)?;
        Ok(())
    }
}

/// Chooses which maskable traits of one token get masked.
pub trait MaskSelector: Send + Sync {
    fn name(&self) -> &'static str;
    /// `maskable` is in caption order; the result keeps that order.
    fn select(&self, maskable: &[TraitKey], p: f64, rng: &mut dyn RngCore) -> Vec<TraitKey>;
}

/// Each trait independently with probability `p`.
#[derive(Debug, Default)]
pub struct Independent;

impl MaskSelector for Independent {
    fn name(&self) -> &'static str {
        "independent"
    }

    fn select(&self, maskable: &[TraitKey], p: f64, rng: &mut dyn RngCore) -> Vec<TraitKey> {
        maskable.iter().filter(|_| rng.random::<f64>() < p).cloned().collect()
    }
}

/// With probability `p`, exactly one trait chosen uniformly.
#[derive(Debug, Default)]
pub struct Single;

impl MaskSelector for Single {
    fn name(&self) -> &'static str {
        "single"
    }

    fn select(&self, maskable: &[TraitKey], p: f64, rng: &mut dyn RngCore) -> Vec<TraitKey> {
        if maskable.is_empty() || rng.random::<f64>() >= p {
            return Vec::new();
        }
        vec![maskable[rng.random_range(0..maskable.len())].clone()]
    }
}

static SELECTORS: LazyLock<Registry<dyn MaskSelector>> = LazyLock::new(|| {
    Registry::<dyn MaskSelector>::new("mask selector")
        .with("independent", || Box::new(Independent))
        .with("single", || Box::new(Single))
});

pub fn selectors() -> &'static Registry<dyn MaskSelector> {
    &SELECTORS
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskPlan {
    pub collection: String,
    pub token_id: u64,
    pub masked_traits: Vec<TraitKey>,
    pub draw_seed: u64,
}

/// Seed for one token's plan: a pure function of (policy seed, epoch,
/// token), so any plan can be computed on its own.
pub fn plan_seed(policy: &MaskPolicy, epoch: u64, collection: &str, token_id: u64) -> u64 {
    let epoch = if policy.per_epoch_reseed { epoch } else { 0 };
    crate::derive_seed(
        policy.seed,
        &[
            b"mask-plan",
            &epoch.to_le_bytes(),
            collection.as_bytes(),
            &token_id.to_le_bytes(),
        ],
    )
}

/// Traits of the token that have a recovered component, in caption order.
pub fn maskable_traits(token: &TokenRecord, library: &ComponentLibrary) -> Vec<TraitKey> {
    token
        .attributes
        .iter()
        .filter(|a| library.assets.contains_key(*a))
        .cloned()
        .collect()
}

pub fn plan_mask(
    token: &TokenRecord,
    library: &ComponentLibrary,
    policy: &MaskPolicy,
    epoch: u64,
) -> Result<MaskPlan, DynmaskError> {
    policy.validate()?;
    let selector = selectors().create(&policy.mode)?;
    let draw_seed = plan_seed(policy, epoch, &token.collection, token.token_id);
    let mut rng = ChaCha8Rng::seed_from_u64(draw_seed);
    let maskable = maskable_traits(token, library);
    Ok(MaskPlan {
        collection: token.collection.clone(),
        token_id: token.token_id,
        masked_traits: selector.select(&maskable, policy.p, &mut rng),
        draw_seed,
    })
}

/// Paints the union of `masks` with `fill` (opaque); other pixels untouched.
pub fn apply_mask(image: &RgbaImage, masks: &[&Mask], fill: Fill) -> Result<RgbaImage, DynmaskError> {
    if let Some(m) = masks.iter().find(|m| m.dimensions() != image.dimensions()) {
        return Err(DynmaskError::GeometryMismatch {
            image: image.dimensions(),
            mask: m.dimensions(),
        });
    }
    let mut out = image.clone();
    let [r, g, b] = fill.0;
    let w = image.width() as usize;
    for (i, px) in out.pixels_mut().enumerate() {
        let (x, y) = ((i % w) as u32, (i / w) as u32);
        if masks.iter().any(|m| m.get(x, y)) {
            *px = Rgba([r, g, b, 255]);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedPair {
    pub image: RgbaImage,
    pub caption: Caption,
    pub plan: MaskPlan,
}

/// Applies `plan` to one token: fills the planned components and removes
/// their caption segments.
pub fn augment_pair(
    token: &TokenRecord,
    image: &RgbaImage,
    library: &ComponentLibrary,
    plan: &MaskPlan,
    policy: &MaskPolicy,
) -> Result<AugmentedPair, DynmaskError> {
    let mut masks = Vec::with_capacity(plan.masked_traits.len());
    for key in &plan.masked_traits {
        let asset = library
            .get(key)
            .ok_or_else(|| DynmaskError::MissingComponentAsset(key.clone()))?;
        masks.push(&asset.mask);
    }
    let image = apply_mask(image, &masks, policy.fill)?;
    let mut caption = token.render()?;
    for key in &plan.masked_traits {
        caption = remove_trait(&caption, key)?;
    }
    Ok(AugmentedPair {
        image,
        caption,
        plan: plan.clone(),
    })
}
