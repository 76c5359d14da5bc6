use std::io::Cursor;
use std::sync::LazyLock;

use image::{AnimationDecoder, ImageFormat, RgbaImage};

use super::StandardizeError;
use crate::registry::Registry;

/// Decodes one container format into RGBA frames.
pub trait MediaDecoder: Send + Sync {
    fn name(&self) -> &'static str;
    /// Cheap magic-byte check.
    fn sniff(&self, bytes: &[u8]) -> bool;
    fn frame_count(&self, bytes: &[u8]) -> Result<usize, StandardizeError>;
    fn decode_frame(&self, bytes: &[u8], index: usize) -> Result<RgbaImage, StandardizeError>;
}

fn undecodable(format: &str, e: impl std::fmt::Display) -> StandardizeError {
    StandardizeError::UndecodableMedia(format!("{format}: {e}"))
}

fn out_of_range(index: usize, count: usize) -> StandardizeError {
    StandardizeError::UndecodableMedia(format!("frame {index} out of range ({count} frames)"))
}

struct Still {
    name: &'static str,
    format: ImageFormat,
    magic: fn(&[u8]) -> bool,
}

impl MediaDecoder for Still {
    fn name(&self) -> &'static str {
        self.name
    }

    fn sniff(&self, bytes: &[u8]) -> bool {
        (self.magic)(bytes)
    }

    fn frame_count(&self, _bytes: &[u8]) -> Result<usize, StandardizeError> {
        Ok(1)
    }

    fn decode_frame(&self, bytes: &[u8], index: usize) -> Result<RgbaImage, StandardizeError> {
        if index != 0 {
            return Err(out_of_range(index, 1));
        }
        image::load_from_memory_with_format(bytes, self.format)
            .map(|i| i.into_rgba8())
            .map_err(|e| undecodable(self.name, e))
    }
}

fn is_png(b: &[u8]) -> bool {
    b.starts_with(b"\x89PNG\r\n\x1a\n")
}

fn is_jpeg(b: &[u8]) -> bool {
    b.starts_with(&[0xFF, 0xD8, 0xFF])
}

fn is_gif(b: &[u8]) -> bool {
    b.starts_with(b"GIF87a") || b.starts_with(b"GIF89a")
}

fn is_webp(b: &[u8]) -> bool {
    b.len() >= 12 && &b[..4] == b"RIFF" && &b[8..12] == b"WEBP"
}

fn is_mp4(b: &[u8]) -> bool {
    b.len() >= 8 && &b[4..8] == b"ftyp"
}

fn is_svg(b: &[u8]) -> bool {
    let head = &b[..b.len().min(1024)];
    let text = String::from_utf8_lossy(head);
    let t = text.trim_start_matches('\u{feff}').trim_start();
    (t.starts_with("<?xml") || t.starts_with("<svg") || t.starts_with("<!--")) && text.contains("<svg")
}

/// Animated GIF; a still GIF is one frame.
struct Gif;

impl Gif {
    fn frames(bytes: &[u8]) -> Result<Vec<RgbaImage>, StandardizeError> {
        let dec = image::codecs::gif::GifDecoder::new(Cursor::new(bytes)).map_err(|e| undecodable("gif", e))?;
        dec.into_frames()
            .map(|f| f.map(|f| f.into_buffer()).map_err(|e| undecodable("gif", e)))
            .collect()
    }
}

impl MediaDecoder for Gif {
    fn name(&self) -> &'static str {
        "gif"
    }

    fn sniff(&self, bytes: &[u8]) -> bool {
        is_gif(bytes)
    }

    fn frame_count(&self, bytes: &[u8]) -> Result<usize, StandardizeError> {
        Ok(Self::frames(bytes)?.len())
    }

    fn decode_frame(&self, bytes: &[u8], index: usize) -> Result<RgbaImage, StandardizeError> {
        let mut frames = Self::frames(bytes)?;
        let n = frames.len();
        if index >= n {
            return Err(out_of_range(index, n));
        }
        Ok(frames.swap_remove(index))
    }
}

/// Still or animated WebP.
struct WebP;

impl WebP {
    fn frames(bytes: &[u8]) -> Result<Vec<RgbaImage>, StandardizeError> {
        let dec = image::codecs::webp::WebPDecoder::new(Cursor::new(bytes)).map_err(|e| undecodable("webp", e))?;
        if !dec.has_animation() {
            let img = image::DynamicImage::from_decoder(dec).map_err(|e| undecodable("webp", e))?;
            return Ok(vec![img.into_rgba8()]);
        }
        dec.into_frames()
            .map(|f| f.map(|f| f.into_buffer()).map_err(|e| undecodable("webp", e)))
            .collect()
    }
}

impl MediaDecoder for WebP {
    fn name(&self) -> &'static str {
        "webp"
    }

    fn sniff(&self, bytes: &[u8]) -> bool {
        is_webp(bytes)
    }

    fn frame_count(&self, bytes: &[u8]) -> Result<usize, StandardizeError> {
        Ok(Self::frames(bytes)?.len())
    }

    fn decode_frame(&self, bytes: &[u8], index: usize) -> Result<RgbaImage, StandardizeError> {
        let mut frames = Self::frames(bytes)?;
        let n = frames.len();
        if index >= n {
            return Err(out_of_range(index, n));
        }
        Ok(frames.swap_remove(index))
    }
}

/// SVG rasterized directly at the standard width.
struct Svg;

impl MediaDecoder for Svg {
    fn name(&self) -> &'static str {
        "svg"
    }

    fn sniff(&self, bytes: &[u8]) -> bool {
        is_svg(bytes)
    }

    fn frame_count(&self, _bytes: &[u8]) -> Result<usize, StandardizeError> {
        Ok(1)
    }

    fn decode_frame(&self, bytes: &[u8], index: usize) -> Result<RgbaImage, StandardizeError> {
        use resvg::{tiny_skia, usvg};
        if index != 0 {
            return Err(out_of_range(index, 1));
        }
        let tree = usvg::Tree::from_data(bytes, &usvg::Options::default()).map_err(|e| undecodable("svg", e))?;
        let size = tree.size();
        let (w, h) = (size.width() as f64, size.height() as f64);
        if !(w > 0.0 && h > 0.0) {
            return Err(StandardizeError::ZeroDimension);
        }
        let out_w = super::STD_WIDTH;
        let out_h = super::target_height(w, h);
        let mut pixmap = tiny_skia::Pixmap::new(out_w, out_h).ok_or(StandardizeError::ZeroDimension)?;
        let transform = tiny_skia::Transform::from_scale((out_w as f64 / w) as f32, (out_h as f64 / h) as f32);
        resvg::render(&tree, transform, &mut pixmap.as_mut());
        let mut raw = Vec::with_capacity(pixmap.data().len());
        for px in pixmap.pixels() {
            let c = px.demultiply();
            raw.extend_from_slice(&[c.red(), c.green(), c.blue(), c.alpha()]);
        }
        RgbaImage::from_raw(out_w, out_h, raw).ok_or_else(|| undecodable("svg", "pixmap size"))
    }
}

/// H.264 video in an MP4 container; frames are decoded in order up to the
/// requested index.
struct Mp4;

struct H264Track {
    samples: Vec<Vec<u8>>,
    parameter_sets: Vec<u8>,
}

const START_CODE: [u8; 4] = [0, 0, 0, 1];

/// Length-prefixed NAL units to Annex B byte stream.
fn to_annex_b(sample: &[u8], out: &mut Vec<u8>) -> Result<(), StandardizeError> {
    let mut rest = sample;
    while rest.len() >= 4 {
        let len = u32::from_be_bytes([rest[0], rest[1], rest[2], rest[3]]) as usize;
        rest = &rest[4..];
        if len > rest.len() {
            return Err(undecodable("mp4", "truncated NAL unit"));
        }
        out.extend_from_slice(&START_CODE);
        out.extend_from_slice(&rest[..len]);
        rest = &rest[len..];
    }
    Ok(())
}

impl Mp4 {
    fn track(bytes: &[u8]) -> Result<H264Track, StandardizeError> {
        let mut reader =
            mp4::Mp4Reader::read_header(Cursor::new(bytes), bytes.len() as u64).map_err(|e| undecodable("mp4", e))?;
        let (track_id, parameter_sets) = {
            let mut ids: Vec<&u32> = reader.tracks().keys().collect();
            ids.sort();
            let track = ids
                .into_iter()
                .map(|id| &reader.tracks()[id])
                .find(|t| matches!(t.media_type(), Ok(mp4::MediaType::H264)))
                .ok_or_else(|| undecodable("mp4", "no H.264 video track"))?;
            let sps = track.sequence_parameter_set().map_err(|e| undecodable("mp4", e))?;
            let pps = track.picture_parameter_set().map_err(|e| undecodable("mp4", e))?;
            let mut ps = Vec::new();
            ps.extend_from_slice(&START_CODE);
            ps.extend_from_slice(sps);
            ps.extend_from_slice(&START_CODE);
            ps.extend_from_slice(pps);
            (track.track_id(), ps)
        };
        let count = reader.sample_count(track_id).map_err(|e| undecodable("mp4", e))?;
        let mut samples = Vec::with_capacity(count as usize);
        for i in 1..=count {
            if let Some(s) = reader.read_sample(track_id, i).map_err(|e| undecodable("mp4", e))? {
                samples.push(s.bytes.to_vec());
            }
        }
        Ok(H264Track {
            samples,
            parameter_sets,
        })
    }
}

fn yuv_to_rgba(yuv: &openh264::decoder::DecodedYUV<'_>) -> Result<RgbaImage, StandardizeError> {
    use openh264::formats::YUVSource;
    let (w, h) = yuv.dimensions();
    let mut raw = vec![0u8; w * h * 4];
    yuv.write_rgba8(&mut raw);
    RgbaImage::from_raw(w as u32, h as u32, raw).ok_or(StandardizeError::ZeroDimension)
}

impl MediaDecoder for Mp4 {
    fn name(&self) -> &'static str {
        "mp4"
    }

    fn sniff(&self, bytes: &[u8]) -> bool {
        is_mp4(bytes)
    }

    fn frame_count(&self, bytes: &[u8]) -> Result<usize, StandardizeError> {
        Ok(Self::track(bytes)?.samples.len())
    }

    fn decode_frame(&self, bytes: &[u8], index: usize) -> Result<RgbaImage, StandardizeError> {
        let track = Self::track(bytes)?;
        let n = track.samples.len();
        if index >= n {
            return Err(out_of_range(index, n));
        }
        let mut decoder = openh264::decoder::Decoder::new().map_err(|e| undecodable("mp4", e))?;
        let mut seen = 0usize;
        for (i, sample) in track.samples.iter().enumerate() {
            let mut packet = Vec::with_capacity(sample.len() + track.parameter_sets.len() + 16);
            if i == 0 {
                packet.extend_from_slice(&track.parameter_sets);
            }
            to_annex_b(sample, &mut packet)?;
            if let Some(yuv) = decoder.decode(&packet).map_err(|e| undecodable("mp4", e))? {
                if seen == index {
                    return yuv_to_rgba(&yuv);
                }
                seen += 1;
            }
        }
        let rest = decoder.flush_remaining().map_err(|e| undecodable("mp4", e))?;
        match rest.get(index.wrapping_sub(seen)) {
            Some(yuv) if index >= seen => yuv_to_rgba(yuv),
            _ => Err(StandardizeError::NoFrames),
        }
    }
}

static DECODERS: LazyLock<Registry<dyn MediaDecoder>> = LazyLock::new(|| {
    Registry::<dyn MediaDecoder>::new("media decoder")
        .with("png", || {
            Box::new(Still {
                name: "png",
                format: ImageFormat::Png,
                magic: is_png,
            })
        })
        .with("jpeg", || {
            Box::new(Still {
                name: "jpeg",
                format: ImageFormat::Jpeg,
                magic: is_jpeg,
            })
        })
        .with("gif", || Box::new(Gif))
        .with("webp", || Box::new(WebP))
        .with("svg", || Box::new(Svg))
        .with("mp4", || Box::new(Mp4))
});

pub fn decoders() -> &'static Registry<dyn MediaDecoder> {
    &DECODERS
}

/// Maps a file extension or format name to a registered decoder name.
pub fn canonical_format(hint: &str) -> Option<&'static str> {
    let h = hint.trim_start_matches('.').to_ascii_lowercase();
    let name = match h.as_str() {
        "png" => "png",
        "jpg" | "jpeg" => "jpeg",
        "gif" => "gif",
        "webp" => "webp",
        "svg" | "svg+xml" => "svg",
        "mp4" | "m4v" => "mp4",
        _ => return None,
    };
    Some(name)
}

/// Picks a decoder: magic bytes win over the hint, since file extensions in
/// the wild are unreliable.
pub fn detect(bytes: &[u8], hint: Option<&str>) -> Result<Box<dyn MediaDecoder>, StandardizeError> {
    for (_, dec) in decoders().all() {
        if dec.name() != "svg" && dec.sniff(bytes) {
            return Ok(dec);
        }
    }
    if let Some(name) = hint.and_then(canonical_format) {
        return Ok(decoders().create(name).expect("registered"));
    }
    let svg = decoders().create("svg").expect("registered");
    if svg.sniff(bytes) {
        return Ok(svg);
    }
    Err(StandardizeError::UndecodableMedia("unrecognized media format".into()))
}
