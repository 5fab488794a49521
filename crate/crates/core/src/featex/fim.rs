//! `.fim` feature-image files and the `fim_path,label_bpm` sidecar.
//!
//! Layout: `FIM1`, then little-endian `u32` rows, cols, channels, then
//! `rows·cols·channels` little-endian `f32` values, channel-major planes,
//! row-major within each plane.

use std::fs;
use std::path::{Path, PathBuf};

use super::{Planes, CHANNELS};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"FIM1";
const HEADER_LEN: usize = 16;

pub fn encode_fim(img: &Planes) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + img.data().len() * 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(img.rows() as u32).to_le_bytes());
    out.extend_from_slice(&(img.cols() as u32).to_le_bytes());
    out.extend_from_slice(&(CHANNELS as u32).to_le_bytes());
    for &v in img.data() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

pub fn decode_fim(bytes: &[u8]) -> Result<Planes> {
    if bytes.len() < HEADER_LEN || &bytes[..4] != MAGIC {
        return Err(Error::Format("not a FIM1 feature image".into()));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap()) as usize;
    let (rows, cols, channels) = (word(4), word(8), word(12));
    if channels != CHANNELS {
        return Err(Error::Format(format!("feature image has {channels} channels, expected 3")));
    }
    let count = rows * cols * channels;
    if bytes.len() != HEADER_LEN + count * 4 {
        return Err(Error::Format(format!(
            "feature image body is {} bytes, expected {}",
            bytes.len() - HEADER_LEN,
            count * 4
        )));
    }
    let data = bytes[HEADER_LEN..]
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
        .collect();
    Planes::from_data(rows, cols, data)
}

pub fn write_fim(path: &Path, img: &Planes) -> Result<()> {
    fs::write(path, encode_fim(img)).map_err(|e| Error::io(path, e))
}

pub fn read_fim(path: &Path) -> Result<Planes> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_fim(&bytes).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabelRecord {
    pub fim_path: PathBuf,
    pub label_bpm: f64,
}

/// Write the sidecar. Paths are written as given.
pub fn write_labels_csv(path: &Path, records: &[LabelRecord]) -> Result<()> {
    let mut text = String::new();
    for r in records {
        text.push_str(&format!("{},{}\n", r.fim_path.display(), r.label_bpm));
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Read a sidecar; relative paths are resolved against its directory.
pub fn read_labels_csv(path: &Path) -> Result<Vec<LabelRecord>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new(""));
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (p, v) = line.rsplit_once(',').ok_or_else(|| {
            Error::Format(format!("{}:{}: expected `fim_path,label_bpm`", path.display(), lineno + 1))
        })?;
        let label_bpm: f64 = v.trim().parse().map_err(|_| {
            Error::Format(format!("{}:{}: bad label `{v}`", path.display(), lineno + 1))
        })?;
        let p = PathBuf::from(p.trim());
        let fim_path = if p.is_absolute() { p } else { base.join(p) };
        out.push(LabelRecord { fim_path, label_bpm });
    }
    Ok(out)
}
