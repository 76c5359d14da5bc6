//! Layered-sprite compositor with ground-truth layer masks.
//!
//! Two trait types: `Body` (bottom, a textured square in the middle) and
//! `Accessory` (top, a small square). With occlusion on, accessories sit
//! inside the body square so each body pixel is hidden in roughly
//! `1 / values` of its carriers; with occlusion off they sit in the border.
//! Backgrounds are per-token block noise.

use std::collections::BTreeMap;
use std::sync::Arc;

use image::{Rgba, RgbaImage};
use nftkit::components::{ComponentAsset, ComponentLibrary, Mask, SeparationConfig};
use nftkit::metadata::{Attribute, AttributeList, TraitKey};
use nftkit::record::{Split, TokenRecord};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const BODIES: [&str; 10] = ["Ape", "Cat", "Dog", "Fox", "Owl", "Pig", "Yak", "Bat", "Eel", "Elk"];
pub const ACCESSORIES: [&str; 10] = [
    "Cap", "Pipe", "Visor", "Bow", "Scarf", "Crown", "Halo", "Horn", "Star", "Chain",
];

#[derive(Debug, Clone)]
pub struct SynthSpec {
    pub name: String,
    /// Canvas side; a multiple of 64.
    pub size: u32,
    pub tokens: usize,
    /// Values per trait type, at most 10.
    pub values: usize,
    pub occlusion: bool,
    /// Background noise block side in pixels.
    pub block: u32,
    /// Same background for every token instead of per-token noise.
    pub shared_background: bool,
    pub seed: u64,
}

impl SynthSpec {
    pub fn new(name: &str, tokens: usize) -> Self {
        Self {
            name: name.into(),
            size: 64,
            tokens,
            values: 10,
            occlusion: true,
            block: 2,
            shared_background: false,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Layer {
    pub key: TraitKey,
    pub mask: Mask,
    /// Opaque where `mask` is set.
    pub pixels: RgbaImage,
}

#[derive(Debug, Clone)]
pub struct SynthToken {
    pub id: u64,
    pub body: usize,
    pub accessory: usize,
    pub attrs: AttributeList,
    pub background: Arc<RgbaImage>,
}

#[derive(Debug, Clone)]
pub struct SynthCollection {
    pub spec: SynthSpec,
    pub layers: BTreeMap<TraitKey, Layer>,
    pub tokens: Vec<SynthToken>,
}

pub fn body_key(v: usize) -> TraitKey {
    Attribute::new("Body", BODIES[v])
}

pub fn accessory_key(v: usize) -> TraitKey {
    Attribute::new("Accessory", ACCESSORIES[v])
}

fn body_layer(size: u32, v: usize) -> Layer {
    let (lo, hi) = (size / 4, 3 * size / 4);
    let mask = Mask::from_fn(size, size, |x, y| (lo..hi).contains(&x) && (lo..hi).contains(&y));
    let base = [40 + 20 * v as u8, 200 - 15 * v as u8, 90 + 11 * v as u8];
    let pixels = RgbaImage::from_fn(size, size, |x, y| {
        if !mask.get(x, y) {
            return Rgba([0, 0, 0, 0]);
        }
        let t = ((x * 3 + y * 5 + v as u32 * 7) % 16) as u8;
        Rgba([
            base[0].wrapping_add(t),
            base[1].wrapping_sub(t),
            base[2].wrapping_add(2 * t),
            255,
        ])
    });
    Layer {
        key: body_key(v),
        mask,
        pixels,
    }
}

fn accessory_origin(size: u32, v: usize, occlusion: bool) -> (u32, u32) {
    let u = size / 64;
    if occlusion {
        // 4x4 slot grid of 8x8 squares inside the body square
        let (sx, sy) = ((v % 4) as u32, (v / 4) as u32);
        (u * (16 + 8 * sx), u * (16 + 8 * sy))
    } else {
        let y = if v < 5 { 4 } else { 52 };
        (u * (4 + 12 * (v % 5) as u32), u * y)
    }
}

fn accessory_layer(size: u32, v: usize, occlusion: bool) -> Layer {
    let side = size / 8;
    let (ox, oy) = accessory_origin(size, v, occlusion);
    let mask = Mask::from_fn(size, size, |x, y| {
        (ox..ox + side).contains(&x) && (oy..oy + side).contains(&y)
    });
    let base = [230 - 17 * v as u8, 30 + 19 * v as u8, 160 + 7 * v as u8];
    let pixels = RgbaImage::from_fn(size, size, |x, y| {
        if !mask.get(x, y) {
            return Rgba([0, 0, 0, 0]);
        }
        let t = (((x ^ y) + v as u32) % 8) as u8 * 3;
        Rgba([
            base[0].wrapping_sub(t),
            base[1].wrapping_add(t),
            base[2].wrapping_sub(t),
            255,
        ])
    });
    Layer {
        key: accessory_key(v),
        mask,
        pixels,
    }
}

fn noise_background(size: u32, block: u32, rng: &mut ChaCha8Rng) -> RgbaImage {
    let blocks = size.div_ceil(block);
    let colors: Vec<[u8; 3]> = (0..blocks * blocks).map(|_| rng.random()).collect();
    RgbaImage::from_fn(size, size, |x, y| {
        let c = colors[((y / block) * blocks + x / block) as usize];
        Rgba([c[0], c[1], c[2], 255])
    })
}

pub fn generate(spec: &SynthSpec) -> SynthCollection {
    assert!(spec.size.is_multiple_of(64) && spec.values <= 10);
    let mut layers = BTreeMap::new();
    for v in 0..spec.values {
        let b = body_layer(spec.size, v);
        layers.insert(b.key.clone(), b);
        let a = accessory_layer(spec.size, v, spec.occlusion);
        layers.insert(a.key.clone(), a);
    }
    let shared = Arc::new(noise_background(
        spec.size,
        spec.block,
        &mut ChaCha8Rng::seed_from_u64(spec.seed),
    ));
    let tokens = (0..spec.tokens)
        .map(|i| {
            // balanced design: every (body, accessory) pair equally often
            let body = i % spec.values;
            let accessory = (i / spec.values) % spec.values;
            let background = if spec.shared_background {
                shared.clone()
            } else {
                let mut rng =
                    ChaCha8Rng::seed_from_u64(spec.seed ^ (0x9e37_79b9_7f4a_7c15u64.wrapping_mul(i as u64 + 1)));
                Arc::new(noise_background(spec.size, spec.block, &mut rng))
            };
            SynthToken {
                id: i as u64,
                body,
                accessory,
                attrs: AttributeList::new([body_key(body), accessory_key(accessory)]),
                background,
            }
        })
        .collect();
    SynthCollection {
        spec: spec.clone(),
        layers,
        tokens,
    }
}

impl SynthCollection {
    pub fn token_keys(&self, t: &SynthToken) -> [TraitKey; 2] {
        [body_key(t.body), accessory_key(t.accessory)]
    }

    /// Composite of `t` leaving out the layers in `skip`.
    pub fn compose_without(&self, t: &SynthToken, skip: &[TraitKey]) -> RgbaImage {
        let mut img = (*t.background).clone();
        for key in self.token_keys(t) {
            if skip.contains(&key) {
                continue;
            }
            let layer = &self.layers[&key];
            for (x, y, p) in layer.pixels.enumerate_pixels() {
                if layer.mask.get(x, y) {
                    img.put_pixel(x, y, *p);
                }
            }
        }
        img
    }

    pub fn compose(&self, t: &SynthToken) -> RgbaImage {
        self.compose_without(t, &[])
    }

    pub fn carriers(&self, key: &TraitKey) -> usize {
        self.tokens.iter().filter(|t| t.attrs.contains(key)).count()
    }

    pub fn record(&self, t: &SynthToken) -> TokenRecord {
        let caption = nftkit::metadata::render_caption(&self.spec.name, &t.attrs).expect("caption");
        TokenRecord {
            collection: self.spec.name.clone(),
            token_id: t.id,
            image: format!("{}/images/{}.png", self.spec.name, t.id).into(),
            caption: caption.rendered().to_string(),
            template_id: nftkit::metadata::DEFAULT_TEMPLATE.into(),
            attributes: t.attrs.clone(),
            split: Split::Train,
            frame_seed: None,
            masked_traits: None,
        }
    }

    /// Library whose masks are the ground-truth layer masks.
    pub fn truth_library(&self) -> ComponentLibrary {
        let assets = self
            .layers
            .values()
            .map(|l| {
                (
                    l.key.clone(),
                    ComponentAsset {
                        key: l.key.clone(),
                        mask: l.mask.clone(),
                        cutout: l.pixels.clone(),
                        rounds_used: 0,
                        support: vec![0; l.mask.bits().len()],
                        carriers: self.carriers(&l.key),
                    },
                )
            })
            .collect();
        ComponentLibrary {
            collection: self.spec.name.clone(),
            config: SeparationConfig::default(),
            assets,
            skipped: Vec::new(),
        }
    }

    pub fn metadata_json(&self, t: &SynthToken, image_uri: &str) -> Vec<u8> {
        let attrs: Vec<_> = t
            .attrs
            .iter()
            .map(|a| serde_json::json!({"trait_type": a.trait_type, "value": a.value}))
            .collect();
        serde_json::to_vec(&serde_json::json!({
            "name": format!("{} #{}", self.spec.name, t.id),
            "image": image_uri,
            "attributes": attrs,
        }))
        .expect("json")
    }
}
