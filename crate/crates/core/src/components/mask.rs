use std::io::Cursor;

use image::{GrayImage, Luma};

use super::ComponentError;

/// Boolean raster in row-major order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    width: u32,
    height: u32,
    bits: Vec<bool>,
}

impl Mask {
    pub fn empty(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            bits: vec![false; (width as usize) * (height as usize)],
        }
    }

    pub fn full(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            bits: vec![true; (width as usize) * (height as usize)],
        }
    }

    pub fn from_bits(width: u32, height: u32, bits: Vec<bool>) -> Self {
        assert_eq!(bits.len(), width as usize * height as usize, "mask size");
        Self { width, height, bits }
    }

    pub fn from_fn(width: u32, height: u32, mut f: impl FnMut(u32, u32) -> bool) -> Self {
        let mut bits = Vec::with_capacity(width as usize * height as usize);
        for y in 0..height {
            for x in 0..width {
                bits.push(f(x, y));
            }
        }
        Self { width, height, bits }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn dimensions(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn get(&self, x: u32, y: u32) -> bool {
        self.bits[(y * self.width + x) as usize]
    }

    pub fn set(&mut self, x: u32, y: u32, v: bool) {
        self.bits[(y * self.width + x) as usize] = v;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }

    /// Fraction of set pixels, in `[0, 1]`.
    pub fn coverage(&self) -> f64 {
        if self.bits.is_empty() {
            0.0
        } else {
            self.count() as f64 / self.bits.len() as f64
        }
    }

    fn check_same(&self, other: &Mask) -> Result<(), ComponentError> {
        if self.dimensions() != other.dimensions() {
            return Err(ComponentError::GeometryMismatch {
                expected: self.dimensions(),
                found: other.dimensions(),
            });
        }
        Ok(())
    }

    pub fn union(&self, other: &Mask) -> Result<Mask, ComponentError> {
        self.check_same(other)?;
        let bits = self.bits.iter().zip(&other.bits).map(|(a, b)| *a || *b).collect();
        Ok(Mask { bits, ..*self })
    }

    pub fn intersection(&self, other: &Mask) -> Result<Mask, ComponentError> {
        self.check_same(other)?;
        let bits = self.bits.iter().zip(&other.bits).map(|(a, b)| *a && *b).collect();
        Ok(Mask { bits, ..*self })
    }

    pub fn is_subset_of(&self, other: &Mask) -> bool {
        self.dimensions() == other.dimensions() && self.bits.iter().zip(&other.bits).all(|(a, b)| !*a || *b)
    }

    /// Intersection over union; two empty masks count as identical (1.0).
    pub fn iou(&self, other: &Mask) -> Result<f64, ComponentError> {
        self.check_same(other)?;
        let (mut inter, mut uni) = (0usize, 0usize);
        for (a, b) in self.bits.iter().zip(&other.bits) {
            inter += usize::from(*a && *b);
            uni += usize::from(*a || *b);
        }
        Ok(if uni == 0 { 1.0 } else { inter as f64 / uni as f64 })
    }

    /// 1-bit grayscale PNG, set pixels white.
    pub fn to_png(&self) -> Vec<u8> {
        let row_bytes = (self.width as usize).div_ceil(8);
        let mut packed = vec![0u8; row_bytes * self.height as usize];
        for y in 0..self.height as usize {
            for x in 0..self.width as usize {
                if self.bits[y * self.width as usize + x] {
                    packed[y * row_bytes + x / 8] |= 0x80 >> (x % 8);
                }
            }
        }
        let mut out = Vec::new();
        {
            let mut enc = png::Encoder::new(&mut out, self.width, self.height);
            enc.set_color(png::ColorType::Grayscale);
            enc.set_depth(png::BitDepth::One);
            let mut writer = enc.write_header().expect("in-memory png header");
            writer.write_image_data(&packed).expect("in-memory png data");
        }
        out
    }

    pub fn from_png(bytes: &[u8]) -> Result<Mask, ComponentError> {
        let img = image::load_from_memory_with_format(bytes, image::ImageFormat::Png)
            .map_err(|e| ComponentError::Library(format!("mask png: {e}")))?
            .to_luma8();
        Ok(Self::from_gray(&img))
    }

    pub fn from_gray(img: &GrayImage) -> Mask {
        Mask {
            width: img.width(),
            height: img.height(),
            bits: img.pixels().map(|Luma([v])| *v > 0).collect(),
        }
    }
}

pub(crate) fn encode_png(img: &image::DynamicImage) -> Vec<u8> {
    let mut out = Cursor::new(Vec::new());
    img.write_to(&mut out, image::ImageFormat::Png).expect("in-memory png");
    out.into_inner()
}
