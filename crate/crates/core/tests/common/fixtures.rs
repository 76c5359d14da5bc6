//! Encoders for media fixtures in every supported container.

use std::io::Cursor;

use image::{Delay, ExtendedColorType, Frame, ImageEncoder, Rgba, RgbaImage};

pub fn gradient(w: u32, h: u32, phase: u8) -> RgbaImage {
    RgbaImage::from_fn(w, h, |x, y| {
        Rgba([
            (x * 255 / w.max(1)) as u8 ^ phase,
            (y * 255 / h.max(1)) as u8,
            phase.wrapping_mul(37),
            255,
        ])
    })
}

/// Few flat colours so palette formats stay lossless.
pub fn flat_frame(w: u32, h: u32, phase: u8) -> RgbaImage {
    let colors = [[200, 30, 30], [30, 200, 30], [30, 30, 200], [220, 220, 40]];
    RgbaImage::from_fn(w, h, |x, y| {
        let c = colors[(((x / 8) + (y / 8) + phase as u32) % 4) as usize];
        Rgba([c[0], c[1], c[2], 255])
    })
}

pub fn png(img: &RgbaImage) -> Vec<u8> {
    let mut out = Vec::new();
    image::codecs::png::PngEncoder::new(&mut out)
        .write_image(img.as_raw(), img.width(), img.height(), ExtendedColorType::Rgba8)
        .expect("png");
    out
}

pub fn jpeg(img: &RgbaImage) -> Vec<u8> {
    let rgb = image::DynamicImage::ImageRgba8(img.clone()).into_rgb8();
    let mut out = Vec::new();
    image::codecs::jpeg::JpegEncoder::new_with_quality(&mut out, 90)
        .write_image(rgb.as_raw(), rgb.width(), rgb.height(), ExtendedColorType::Rgb8)
        .expect("jpeg");
    out
}

pub fn gif(frames: &[RgbaImage]) -> Vec<u8> {
    let mut out = Vec::new();
    {
        let mut enc = image::codecs::gif::GifEncoder::new(&mut out);
        enc.set_repeat(image::codecs::gif::Repeat::Infinite).expect("repeat");
        enc.encode_frames(
            frames
                .iter()
                .map(|f| Frame::from_parts(f.clone(), 0, 0, Delay::from_numer_denom_ms(100, 1))),
        )
        .expect("gif");
    }
    out
}

fn webp_lossless(img: &RgbaImage) -> Vec<u8> {
    let mut out = Vec::new();
    image::codecs::webp::WebPEncoder::new_lossless(&mut out)
        .write_image(img.as_raw(), img.width(), img.height(), ExtendedColorType::Rgba8)
        .expect("webp");
    out
}

/// Returns the first `fourcc` chunk (header and padded payload) of a RIFF file.
fn riff_chunk<'a>(file: &'a [u8], fourcc: &[u8; 4]) -> &'a [u8] {
    let mut pos = 12;
    while pos + 8 <= file.len() {
        let size = u32::from_le_bytes(file[pos + 4..pos + 8].try_into().unwrap()) as usize;
        let end = pos + 8 + size + (size & 1);
        if &file[pos..pos + 4] == fourcc {
            return &file[pos..end.min(file.len())];
        }
        pos = end;
    }
    panic!("no {:?} chunk", std::str::from_utf8(fourcc));
}

fn u24(v: u32) -> [u8; 3] {
    let b = v.to_le_bytes();
    [b[0], b[1], b[2]]
}

fn chunk(fourcc: &[u8; 4], payload: &[u8]) -> Vec<u8> {
    let mut c = Vec::with_capacity(payload.len() + 9);
    c.extend_from_slice(fourcc);
    c.extend_from_slice(&(payload.len() as u32).to_le_bytes());
    c.extend_from_slice(payload);
    if payload.len() % 2 == 1 {
        c.push(0);
    }
    c
}

/// Animated WebP assembled from lossless single-frame encodings.
pub fn animated_webp(frames: &[RgbaImage]) -> Vec<u8> {
    let (w, h) = frames[0].dimensions();
    let mut vp8x = vec![0x02 | 0x10, 0, 0, 0];
    vp8x.extend(u24(w - 1));
    vp8x.extend(u24(h - 1));
    let mut body = b"WEBP".to_vec();
    body.extend(chunk(b"VP8X", &vp8x));
    body.extend(chunk(b"ANIM", &[0, 0, 0, 0, 0, 0]));
    for f in frames {
        let single = webp_lossless(f);
        let mut anmf = Vec::new();
        anmf.extend(u24(0));
        anmf.extend(u24(0));
        anmf.extend(u24(f.width() - 1));
        anmf.extend(u24(f.height() - 1));
        anmf.extend(u24(100));
        anmf.push(0);
        anmf.extend_from_slice(riff_chunk(&single, b"VP8L"));
        body.extend(chunk(b"ANMF", &anmf));
    }
    let mut out = b"RIFF".to_vec();
    out.extend_from_slice(&(body.len() as u32).to_le_bytes());
    out.extend(body);
    out
}

pub fn svg(w: u32, h: u32) -> Vec<u8> {
    format!(
        r##"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">
<rect width="{w}" height="{h}" fill="#2040c0"/>
<circle cx="{cx}" cy="{cy}" r="{r}" fill="#f0d020"/>
</svg>"##,
        cx = w / 2,
        cy = h / 2,
        r = h / 3
    )
    .into_bytes()
}

fn split_annex_b(stream: &[u8]) -> Vec<&[u8]> {
    let mut starts = Vec::new();
    let mut i = 0;
    while i + 3 <= stream.len() {
        if stream[i] == 0 && stream[i + 1] == 0 && stream[i + 2] == 1 {
            starts.push(i + 3);
            i += 3;
        } else {
            i += 1;
        }
    }
    let mut nals = Vec::new();
    for (n, &s) in starts.iter().enumerate() {
        let mut end = starts.get(n + 1).map_or(stream.len(), |&next| next - 3);
        while end > s && stream[end - 1] == 0 {
            end -= 1;
        }
        nals.push(&stream[s..end]);
    }
    nals
}

/// H.264 in an MP4 container, one sample per frame. Frame sides must be even.
pub fn mp4(frames: &[RgbaImage]) -> Vec<u8> {
    use mp4::{AvcConfig, MediaConfig, Mp4Config, Mp4Sample, Mp4Writer, TrackConfig, TrackType};
    use openh264::encoder::Encoder;
    use openh264::formats::{RgbSliceU8, YUVBuffer};

    let (w, h) = frames[0].dimensions();
    let mut enc = Encoder::new().expect("encoder");
    let mut sps = Vec::new();
    let mut pps = Vec::new();
    let mut samples = Vec::new();
    for f in frames {
        let rgb = image::DynamicImage::ImageRgba8(f.clone()).into_rgb8();
        let yuv = YUVBuffer::from_rgb8_source(RgbSliceU8::new(rgb.as_raw(), (w as usize, h as usize)));
        let bits = enc.encode(&yuv).expect("encode").to_vec();
        let mut sample = Vec::new();
        let mut sync = false;
        for nal in split_annex_b(&bits) {
            match nal[0] & 0x1f {
                7 => sps = nal.to_vec(),
                8 => pps = nal.to_vec(),
                t => {
                    sync |= t == 5;
                    sample.extend_from_slice(&(nal.len() as u32).to_be_bytes());
                    sample.extend_from_slice(nal);
                }
            }
        }
        samples.push((sample, sync));
    }

    let config = Mp4Config {
        major_brand: "isom".parse().unwrap(),
        minor_version: 512,
        compatible_brands: ["isom", "iso2", "avc1", "mp41"]
            .iter()
            .map(|b| b.parse().unwrap())
            .collect(),
        timescale: 1000,
    };
    let mut writer = Mp4Writer::write_start(Cursor::new(Vec::new()), &config).expect("mp4 start");
    writer
        .add_track(&TrackConfig {
            track_type: TrackType::Video,
            timescale: 1000,
            language: "und".into(),
            media_conf: MediaConfig::AvcConfig(AvcConfig {
                width: w as u16,
                height: h as u16,
                seq_param_set: sps,
                pic_param_set: pps,
            }),
        })
        .expect("track");
    for (i, (bytes, is_sync)) in samples.into_iter().enumerate() {
        writer
            .write_sample(
                1,
                &Mp4Sample {
                    start_time: i as u64 * 100,
                    duration: 100,
                    rendering_offset: 0,
                    is_sync,
                    bytes: bytes::Bytes::from(bytes),
                },
            )
            .expect("sample");
    }
    writer.write_end().expect("mp4 end");
    writer.into_writer().into_inner()
}
