//! Model container.
//!
//! ```text
//! "EVMC" | u32 version
//! u32 layer_count, then per layer: u32 kind, u32 a..f, f64 real
//! u32 stage_count, then per stage: u32 label, u32 first, u32 end
//! f64 hr_min, hr_max, input mean[3], input std[3]
//! per layer, per blob: u32 len, len × f32
//! u32 CRC-32 of everything above
//! ```
//! All integers and floats little-endian. BN blobs are gamma, beta,
//! running mean, running variance.

use std::fs;
use std::path::Path;

use super::layers::{AvgPool, BatchNorm, Conv2d, Dense, Depthwise, Dropout, Layer, Pointwise};
use super::network::{InputNorm, LabelNorm, Network, Stage};
use super::Model;
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"EVMC";
pub const MODEL_VERSION: u32 = 1;
const STAGE_LABELS: [&str; 6] = ["Conv", "DwConv", "PwConv", "AvePool", "FC", "Dropout"];

struct Writer(Vec<u8>);

impl Writer {
    fn u32(&mut self, v: usize) {
        self.0.extend_from_slice(&(v as u32).to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn blob(&mut self, v: &[f32]) {
        self.u32(v.len());
        for x in v {
            self.0.extend_from_slice(&x.to_le_bytes());
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Format("model file truncated".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn blob(&mut self, expected: usize) -> Result<Vec<f32>> {
        let n = self.u32()?;
        if n != expected {
            return Err(Error::Format(format!("parameter blob has {n} values, expected {expected}")));
        }
        Ok(self
            .take(n * 4)?
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect())
    }
}

fn descriptor(l: &Layer<f32>) -> (u32, [usize; 6], f64) {
    match l {
        Layer::Conv(c) => (0, [c.k, c.cin, c.cout, c.stride, c.pad, 0], 0.0),
        Layer::Depthwise(d) => (1, [d.k, d.c, d.stride, d.pad, 0, 0], 0.0),
        Layer::Pointwise(p) => (2, [p.cin, p.cout, 0, 0, 0, 0], 0.0),
        Layer::BatchNorm(b) => (3, [b.c, 0, 0, 0, 0, 0], b.eps),
        Layer::Relu => (4, [0; 6], 0.0),
        Layer::AvgPool(p) => (5, [p.k, p.stride, 0, 0, 0, 0], 0.0),
        Layer::Dense(d) => (6, [d.input, d.output, 0, 0, 0, 0], 0.0),
        Layer::Dropout(d) => (7, [0; 6], d.keep),
    }
}

fn blobs(l: &Layer<f32>) -> Vec<&Vec<f32>> {
    match l {
        Layer::BatchNorm(b) => vec![&b.gamma, &b.beta, &b.running_mean, &b.running_var],
        other => other.params().into_iter().map(|(_, p)| p).collect(),
    }
}

pub fn encode_model(model: &Model) -> Vec<u8> {
    let mut w = Writer(Vec::new());
    w.0.extend_from_slice(MAGIC);
    w.u32(MODEL_VERSION as usize);
    w.u32(model.layers.len());
    for l in &model.layers {
        let (kind, dims, real) = descriptor(l);
        w.u32(kind as usize);
        dims.iter().for_each(|&d| w.u32(d));
        w.f64(real);
    }
    w.u32(model.stages.len());
    for s in &model.stages {
        let label = STAGE_LABELS.iter().position(|&l| l == s.label).unwrap_or(0);
        w.u32(label);
        w.u32(s.layers.start);
        w.u32(s.layers.end);
    }
    w.f64(model.label_norm.hr_min);
    w.f64(model.label_norm.hr_max);
    model.input_norm.mean.iter().for_each(|&v| w.f64(v));
    model.input_norm.std.iter().for_each(|&v| w.f64(v));
    for l in &model.layers {
        for b in blobs(l) {
            w.blob(b);
        }
    }
    let crc = crc32fast::hash(&w.0);
    w.0.extend_from_slice(&crc.to_le_bytes());
    w.0
}

pub fn decode_model(bytes: &[u8]) -> Result<Model> {
    if bytes.len() < 12 || &bytes[..4] != MAGIC {
        return Err(Error::Format("not an EVMC model file (bad magic)".into()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != MODEL_VERSION {
        return Err(Error::Format(format!(
            "model version {version} unsupported (expected {MODEL_VERSION})"
        )));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().unwrap());
    if crc32fast::hash(body) != stored {
        return Err(Error::Format("model checksum mismatch (corrupt or truncated file)".into()));
    }

    let mut r = Reader { buf: body, pos: 8 };
    let n_layers = r.u32()?;
    let mut specs = Vec::with_capacity(n_layers);
    for _ in 0..n_layers {
        let kind = r.u32()?;
        let mut d = [0usize; 6];
        for x in &mut d {
            *x = r.u32()?;
        }
        specs.push((kind, d, r.f64()?));
    }
    let n_stages = r.u32()?;
    let mut stages = Vec::with_capacity(n_stages);
    for _ in 0..n_stages {
        let label = *STAGE_LABELS
            .get(r.u32()?)
            .ok_or_else(|| Error::Format("unknown stage label".into()))?;
        let (start, end) = (r.u32()?, r.u32()?);
        if start > end || end > n_layers {
            return Err(Error::Format("stage range out of bounds".into()));
        }
        stages.push(Stage { label, layers: start..end });
    }
    let label_norm = LabelNorm {
        hr_min: r.f64()?,
        hr_max: r.f64()?,
    };
    let mut input_norm = InputNorm::default();
    for v in &mut input_norm.mean {
        *v = r.f64()?;
    }
    for v in &mut input_norm.std {
        *v = r.f64()?;
    }

    let mut layers = Vec::with_capacity(n_layers);
    for (kind, d, real) in specs {
        let layer = match kind {
            0 => Layer::Conv(Conv2d {
                k: d[0],
                cin: d[1],
                cout: d[2],
                stride: d[3],
                pad: d[4],
                weight: r.blob(d[0] * d[0] * d[1] * d[2])?,
            }),
            1 => Layer::Depthwise(Depthwise {
                k: d[0],
                c: d[1],
                stride: d[2],
                pad: d[3],
                weight: r.blob(d[0] * d[0] * d[1])?,
            }),
            2 => Layer::Pointwise(Pointwise {
                cin: d[0],
                cout: d[1],
                weight: r.blob(d[0] * d[1])?,
            }),
            3 => Layer::BatchNorm(BatchNorm {
                c: d[0],
                gamma: r.blob(d[0])?,
                beta: r.blob(d[0])?,
                running_mean: r.blob(d[0])?,
                running_var: r.blob(d[0])?,
                momentum: super::network::BN_MOMENTUM,
                eps: real,
            }),
            4 => Layer::Relu,
            5 => Layer::AvgPool(AvgPool { k: d[0], stride: d[1] }),
            6 => Layer::Dense(Dense {
                input: d[0],
                output: d[1],
                weight: r.blob(d[0] * d[1])?,
                bias: r.blob(d[1])?,
            }),
            7 => Layer::Dropout(Dropout { keep: real }),
            k => return Err(Error::Format(format!("unknown layer kind {k}"))),
        };
        layers.push(layer);
    }
    if r.pos != body.len() {
        return Err(Error::Format("trailing bytes after model parameters".into()));
    }
    Ok(Network {
        layers,
        stages,
        input_norm,
        label_norm,
    })
}

pub fn save_model(model: &Model, path: &Path) -> Result<()> {
    fs::write(path, encode_model(model)).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: &Path) -> Result<Model> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_model(&bytes).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn save_load_save_identical() {
        let mut m = Model::table_one(3);
        m.input_norm.mean = [0.1, -0.2, 0.3];
        m.input_norm.std = [1.5, 2.5, 0.7];
        let a = encode_model(&m);
        let back = decode_model(&a).unwrap();
        assert_eq!(back, m);
        assert_eq!(encode_model(&back), a);
    }

    #[test]
    fn corrupt_files_rejected() {
        let a = encode_model(&Model::table_one(3));
        let mut bad = a.clone();
        bad[0] = b'X';
        assert!(decode_model(&bad).unwrap_err().to_string().contains("magic"));
        let mut v2 = a.clone();
        v2[4] = 2;
        assert!(decode_model(&v2).unwrap_err().to_string().contains("version"));
        let mut flip = a.clone();
        let mid = flip.len() / 2;
        flip[mid] ^= 0x40;
        assert!(decode_model(&flip).is_err());
        assert!(decode_model(&a[..a.len() - 9]).is_err());
    }
}
