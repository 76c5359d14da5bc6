//! Stand-in dual encoder: fixed random projections of a downsampled image
//! and of a hashed bag of caption words, both into `DIM` dimensions.

use image::RgbaImage;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use sha2::{Digest, Sha256};

pub const DIM: usize = 32;
const THUMB: u32 = 8;
const IMAGE_FEATURES: usize = (THUMB * THUMB * 3) as usize;
const WORD_BUCKETS: usize = 64;

fn projection(rows: usize, cols: usize, seed: u64) -> Vec<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..rows * cols)
        .map(|_| {
            let v: f64 = StandardNormal.sample(&mut rng);
            v as f32
        })
        .collect()
}

fn project(p: &[f32], x: &[f32]) -> Vec<f32> {
    p.chunks_exact(x.len())
        .map(|row| row.iter().zip(x).map(|(a, b)| a * b).sum())
        .collect()
}

pub struct Encoder {
    image_proj: Vec<f32>,
    text_proj: Vec<f32>,
}

impl Encoder {
    pub fn new(seed: u64) -> Self {
        Self {
            image_proj: projection(DIM, IMAGE_FEATURES, seed),
            text_proj: projection(DIM, WORD_BUCKETS, seed ^ 0x5eed),
        }
    }

    pub fn image(&self, img: &RgbaImage) -> Vec<f32> {
        let thumb = image::imageops::resize(img, THUMB, THUMB, image::imageops::FilterType::Triangle);
        let x: Vec<f32> = thumb
            .pixels()
            .flat_map(|p| [p[0], p[1], p[2]])
            .map(|v| v as f32 / 255.0 - 0.5)
            .collect();
        project(&self.image_proj, &x)
    }

    pub fn text(&self, caption: &str) -> Vec<f32> {
        let mut x = vec![0f32; WORD_BUCKETS];
        for word in caption.split(|c: char| !c.is_alphanumeric()).filter(|w| !w.is_empty()) {
            let h = Sha256::digest(word.to_lowercase().as_bytes());
            x[h[0] as usize % WORD_BUCKETS] += 1.0;
        }
        project(&self.text_proj, &x)
    }
}

pub fn jsonl_line(id: &str, v: &[f32]) -> String {
    format!("{}\n", serde_json::json!({"id": id, "vector": v}))
}
