//! Frame files on disk.
//!
//! Two encodings are read and written:
//! - any 8-bit raster the `image` crate decodes (PNG is written);
//! - `.rgbf`, a raw float format: `RGBF`, little-endian `u32` width and
//!   height, then three `f32` planes (R, G, B), each row-major.
//!
//! Frame files in a directory are ordered by the number embedded in their
//! file name (`frame_000012.png` is frame 12).

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::image::RgbImage;

const RGBF_MAGIC: &[u8; 4] = b"RGBF";
pub const RGBF_EXT: &str = "rgbf";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FrameFormat {
    Png8,
    Float32,
}

impl FrameFormat {
    pub fn extension(self) -> &'static str {
        match self {
            FrameFormat::Png8 => "png",
            FrameFormat::Float32 => RGBF_EXT,
        }
    }
}

fn is_frame_file(p: &Path) -> bool {
    matches!(
        p.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref(),
        Some("png" | "jpg" | "jpeg" | "bmp" | "tif" | "tiff" | "ppm" | RGBF_EXT)
    )
}

fn frame_number(p: &Path) -> Option<u64> {
    let stem = p.file_stem()?.to_str()?;
    let digits: String = stem
        .chars()
        .rev()
        .skip_while(|c| !c.is_ascii_digit())
        .take_while(char::is_ascii_digit)
        .collect();
    digits.chars().rev().collect::<String>().parse().ok()
}

/// Frame files of `dir` in numeric order.
pub fn list_frames(dir: &Path) -> Result<Vec<PathBuf>> {
    let rd = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut files = Vec::new();
    for ent in rd {
        let p = ent.map_err(|e| Error::io(dir, e))?.path();
        if p.is_file() && is_frame_file(&p) {
            let n = frame_number(&p).ok_or_else(|| {
                Error::Ingest(format!("frame file {} has no frame number", p.display()))
            })?;
            files.push((n, p));
        }
    }
    files.sort();
    Ok(files.into_iter().map(|(_, p)| p).collect())
}

pub fn read_frame(path: &Path) -> Result<RgbImage> {
    if path.extension().and_then(|e| e.to_str()) == Some(RGBF_EXT) {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        return decode_rgbf(&bytes).map_err(|e| Error::Format(format!("{}: {e}", path.display())));
    }
    let img = image::open(path)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?
        .into_rgb8();
    let (w, h) = img.dimensions();
    let data = img.into_raw().into_iter().map(f64::from).collect();
    RgbImage::from_data(w as usize, h as usize, data)
}

pub fn write_frame(path: &Path, img: &RgbImage, format: FrameFormat) -> Result<()> {
    match format {
        FrameFormat::Float32 => {
            fs::write(path, encode_rgbf(img)).map_err(|e| Error::io(path, e))
        }
        FrameFormat::Png8 => {
            let raw: Vec<u8> = img
                .data()
                .iter()
                .map(|v| v.round().clamp(0.0, 255.0) as u8)
                .collect();
            let buf = image::RgbImage::from_raw(img.width() as u32, img.height() as u32, raw)
                .expect("buffer size matches dimensions");
            buf.save_with_format(path, image::ImageFormat::Png)
                .map_err(|e| Error::Format(format!("{}: {e}", path.display())))
        }
    }
}

pub fn encode_rgbf(img: &RgbImage) -> Vec<u8> {
    let (w, h) = (img.width(), img.height());
    let mut out = Vec::with_capacity(12 + w * h * 12);
    out.extend_from_slice(RGBF_MAGIC);
    out.extend_from_slice(&(w as u32).to_le_bytes());
    out.extend_from_slice(&(h as u32).to_le_bytes());
    for c in 0..3 {
        for px in img.data().chunks_exact(3) {
            out.extend_from_slice(&(px[c] as f32).to_le_bytes());
        }
    }
    out
}

pub fn decode_rgbf(bytes: &[u8]) -> Result<RgbImage> {
    if bytes.len() < 12 || &bytes[..4] != RGBF_MAGIC {
        return Err(Error::Format("not an RGBF frame".into()));
    }
    let w = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let h = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let plane = w * h;
    if bytes.len() != 12 + plane * 12 {
        return Err(Error::Format(format!("RGBF body size mismatch for {w}x{h}")));
    }
    let vals: Vec<f32> = bytes[12..]
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
        .collect();
    let mut data = Vec::with_capacity(plane * 3);
    for i in 0..plane {
        for c in 0..3 {
            data.push(vals[c * plane + i] as f64);
        }
    }
    RgbImage::from_data(w, h, data)
}
