//! Media normalization, collection filtering, project-level partitioning
//! and the manifest format.

mod decode;
mod filter;
mod manifest;
mod partition;
mod pipeline;

use image::imageops::FilterType;
use image::RgbaImage;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::metadata::MetadataError;

pub use decode::{canonical_format, decoders, detect, MediaDecoder};
pub use filter::{filter_collection, CollectionStats, CollectionVerdict, ExclusionReason, FilterRules};
pub use manifest::{
    read_manifest, verify_manifest, write_manifest, Finding, FindingKind, Manifest, ManifestHeader, VerifyReport,
    MANIFEST_FILE,
};
pub use partition::{partition, SplitAssignment, SplitRatios};
pub use pipeline::{plan_standardize, standardize_root, CollectionPlan, PipelineConfig, PipelineSummary};

/// Output width of every standardized image.
pub const STD_WIDTH: u32 = 512;
/// Name recorded in manifest headers for the resize kernel.
pub const RESAMPLING: &str = "bicubic";

#[derive(Debug, Error)]
pub enum StandardizeError {
    #[error("undecodable media: {0}")]
    UndecodableMedia(String),
    #[error("image has a zero dimension")]
    ZeroDimension,
    #[error("media has no frames")]
    NoFrames,
    #[error("partition needs at least 3 collections, got {0}")]
    TooFewCollections(usize),
    #[error("invalid split ratios: {0}")]
    InvalidRatios(String),
    #[error("manifest line {line}: {reason}")]
    ManifestParse { line: usize, reason: String },
    #[error("manifest has {0} inconsistencies")]
    ManifestInconsistent(usize),
    #[error(transparent)]
    Metadata(#[from] MetadataError),
    #[error("io: {0}")]
    IoFailure(String),
}

impl StandardizeError {
    pub fn code(&self) -> &'static str {
        match self {
            Self::UndecodableMedia(_) => "standardize.undecodable_media",
            Self::ZeroDimension => "standardize.zero_dimension",
            Self::NoFrames => "standardize.no_frames",
            Self::TooFewCollections(_) => "standardize.too_few_collections",
            Self::InvalidRatios(_) => "standardize.invalid_ratios",
            Self::ManifestParse { .. } => "standardize.manifest_parse",
            Self::ManifestInconsistent(_) => "standardize.manifest_inconsistent",
            Self::Metadata(e) => e.code(),
            Self::IoFailure(_) => "standardize.io_failure",
        }
    }
}

impl From<std::io::Error> for StandardizeError {
    fn from(e: std::io::Error) -> Self {
        Self::IoFailure(e.to_string())
    }
}

/// Which frame of an animated source was kept.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FrameChoice {
    pub index: usize,
    pub count: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StdImage {
    pub pixels: RgbaImage,
    pub source_format: &'static str,
    /// Set for sources with more than one frame.
    pub frame: Option<FrameChoice>,
}

impl StdImage {
    pub fn width(&self) -> u32 {
        self.pixels.width()
    }

    pub fn height(&self) -> u32 {
        self.pixels.height()
    }
}

/// Height after scaling a `w`×`h` source to the standard width.
pub fn target_height(w: f64, h: f64) -> u32 {
    ((STD_WIDTH as f64 * h / w).round() as u32).max(1)
}

/// Seeded uniform frame index in `0..count`.
pub fn frame_index(seed: u64, count: usize) -> usize {
    if count <= 1 {
        return 0;
    }
    ChaCha8Rng::seed_from_u64(seed).random_range(0..count)
}

/// Decodes one frame of `media`, chosen by `seed` among all its frames.
pub fn select_frame(media: &[u8], hint: Option<&str>, seed: u64) -> Result<(RgbaImage, FrameChoice), StandardizeError> {
    let dec = detect(media, hint)?;
    select_with(dec.as_ref(), media, seed)
}

fn select_with(dec: &dyn MediaDecoder, media: &[u8], seed: u64) -> Result<(RgbaImage, FrameChoice), StandardizeError> {
    let count = dec.frame_count(media)?;
    if count == 0 {
        return Err(StandardizeError::NoFrames);
    }
    let index = frame_index(seed, count);
    let frame = dec.decode_frame(media, index)?;
    Ok((frame, FrameChoice { index, count, seed }))
}

/// Scales to the standard width with the bicubic kernel. Images already at
/// that width are returned unchanged, which makes the operation idempotent.
pub fn resize_to_standard(img: &RgbaImage) -> Result<RgbaImage, StandardizeError> {
    let (w, h) = img.dimensions();
    if w == 0 || h == 0 {
        return Err(StandardizeError::ZeroDimension);
    }
    if w == STD_WIDTH {
        return Ok(img.clone());
    }
    let th = target_height(w as f64, h as f64);
    Ok(image::imageops::resize(img, STD_WIDTH, th, FilterType::CatmullRom))
}

/// Decodes `raw` (format sniffed, `hint` as fallback), picks a frame for
/// animated sources using `frame_seed`, and scales to the standard width.
pub fn standardize_image(raw: &[u8], hint: Option<&str>, frame_seed: u64) -> Result<StdImage, StandardizeError> {
    let dec = detect(raw, hint)?;
    let (frame, choice) = select_with(dec.as_ref(), raw, frame_seed)?;
    let pixels = resize_to_standard(&frame)?;
    Ok(StdImage {
        pixels,
        source_format: dec.name(),
        frame: (choice.count > 1).then_some(choice),
    })
}
