//! Feature-image extraction.
//!
//! One window of ROI crops becomes one image whose column `i` is the
//! flattened top pyramid level of frame `i` and whose rows are
//! band-limited per-pixel time series.

mod bandpass;
mod fim;
mod pyramid;

pub use bandpass::{band_mask, bin_frequency, RowBandpass, IMAG_TOLERANCE};
pub use fim::{
    decode_fim, encode_fim, read_fim, read_labels_csv, write_fim, write_labels_csv, LabelRecord,
};
pub use pyramid::{gaussian_downsample, pyramid_top, resize_bilinear, PYRAMID_KERNEL};

use crate::error::{Error, Result};
use crate::image::RgbImage;
use crate::roi::RoiWindow;

/// Columns (and, with the default geometry, rows) of every feature image.
pub const FEATURE_COLUMNS: usize = 25;
pub const CHANNELS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureConfig {
    pub pyramid_level: usize,
    /// Frame rate of the source windows.
    pub fps: usize,
    pub f_low: f64,
    pub f_high: f64,
    /// Crops are resized to `(height, width)` before decomposition.
    pub pre_resize: (usize, usize),
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig {
            pyramid_level: 4,
            fps: 25,
            f_low: 0.75,
            f_high: 4.0,
            pre_resize: (80, 80),
        }
    }
}

impl FeatureConfig {
    /// Rows of the feature image: pixels in the top pyramid level.
    pub fn rows(&self) -> usize {
        (self.pre_resize.0 >> self.pyramid_level) * (self.pre_resize.1 >> self.pyramid_level)
    }

    pub fn validate(&self) -> Result<()> {
        if self.fps == 0 {
            return Err(Error::Featex("fps must be positive".into()));
        }
        let nyquist = self.fps.min(FEATURE_COLUMNS) as f64 / 2.0;
        if !(self.f_low > 0.0 && self.f_low < self.f_high && self.f_high <= nyquist) {
            return Err(Error::Featex(format!(
                "band [{}, {}] Hz must satisfy 0 < low < high <= {nyquist}",
                self.f_low, self.f_high
            )));
        }
        let (h, w) = self.pre_resize;
        let div = 1usize << self.pyramid_level;
        if h == 0 || w == 0 || h % div != 0 || w % div != 0 {
            return Err(Error::Featex(format!(
                "pre-resize {h}x{w} not divisible by 2^{}",
                self.pyramid_level
            )));
        }
        if self.rows() != FEATURE_COLUMNS {
            return Err(Error::Featex(format!(
                "top pyramid level has {} pixels; the feature image needs {FEATURE_COLUMNS}",
                self.rows()
            )));
        }
        Ok(())
    }
}

/// One frame's top pyramid level flattened row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct PixelColumn(pub Vec<[f64; 3]>);

impl PixelColumn {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Scan an image left-to-right, top-to-bottom.
pub fn to_column(img: &RgbImage) -> PixelColumn {
    PixelColumn(img.data().chunks_exact(3).map(|p| [p[0], p[1], p[2]]).collect())
}

/// Inverse of [`to_column`].
pub fn column_to_image(col: &PixelColumn, width: usize, height: usize) -> Result<RgbImage> {
    let data = col.0.iter().flat_map(|p| p.iter().copied()).collect();
    RgbImage::from_data(width, height, data)
}

/// Three planes of `rows × cols` values, channel-major, row-major within a
/// plane. Used both for the concatenated image and the filtered result.
#[derive(Debug, Clone, PartialEq)]
pub struct Planes {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Planes {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Planes {
            rows,
            cols,
            data: vec![0.0; CHANNELS * rows * cols],
        }
    }

    pub fn from_data(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != CHANNELS * rows * cols {
            return Err(Error::Format(format!(
                "plane data length {} does not match {rows}x{cols}x{CHANNELS}",
                data.len()
            )));
        }
        Ok(Planes { rows, cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn channels(&self) -> usize {
        CHANNELS
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn get(&self, channel: usize, row: usize, col: usize) -> f64 {
        self.data[(channel * self.rows + row) * self.cols + col]
    }

    #[inline]
    pub fn set(&mut self, channel: usize, row: usize, col: usize, v: f64) {
        self.data[(channel * self.rows + row) * self.cols + col] = v;
    }

    pub fn row(&self, channel: usize, row: usize) -> &[f64] {
        let s = (channel * self.rows + row) * self.cols;
        &self.data[s..s + self.cols]
    }

    pub fn row_mut(&mut self, channel: usize, row: usize) -> &mut [f64] {
        let s = (channel * self.rows + row) * self.cols;
        &mut self.data[s..s + self.cols]
    }

    /// Height-width-channel interleaved copy (rows as height, columns as
    /// width), the layout the network consumes.
    pub fn to_hwc(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.data.len());
        for r in 0..self.rows {
            for c in 0..self.cols {
                for ch in 0..CHANNELS {
                    out.push(self.get(ch, r, c));
                }
            }
        }
        out
    }
}

/// Concatenated per-frame columns, before temporal filtering.
pub type ConcatImage = Planes;
/// Band-limited feature image handed to the network.
pub type FeatureImage = Planes;

/// Stack `expected` columns side by side; column `i` comes from frame `i`.
pub fn concat_columns(cols: &[PixelColumn], expected: usize) -> Result<ConcatImage> {
    if cols.len() != expected {
        return Err(Error::Featex(format!(
            "need {expected} columns, got {}",
            cols.len()
        )));
    }
    let rows = cols.first().map_or(0, PixelColumn::len);
    if rows == 0 || cols.iter().any(|c| c.len() != rows) {
        return Err(Error::Featex("columns are empty or ragged".into()));
    }
    let mut m = Planes::zeros(rows, expected);
    for (j, col) in cols.iter().enumerate() {
        for (r, px) in col.0.iter().enumerate() {
            for (ch, &v) in px.iter().enumerate() {
                m.set(ch, r, j, v);
            }
        }
    }
    Ok(m)
}

/// Linearly resample every row from its current column count to `target`
/// points spread over the same second.
pub fn resample_columns(m: &ConcatImage, target: usize) -> ConcatImage {
    if m.cols == target {
        return m.clone();
    }
    let n = m.cols;
    let mut out = Planes::zeros(m.rows, target);
    for ch in 0..CHANNELS {
        for r in 0..m.rows {
            let src = m.row(ch, r);
            let dst = out.row_mut(ch, r);
            for (j, d) in dst.iter_mut().enumerate() {
                let pos = j as f64 * n as f64 / target as f64;
                let i0 = (pos.floor() as usize).min(n - 1);
                let i1 = (i0 + 1).min(n - 1);
                let t = pos - i0 as f64;
                *d = src[i0] * (1.0 - t) + src[i1] * t;
            }
        }
    }
    out
}

/// Ideal bandpass along every row of every channel.
pub fn bandpass_rows(m: &ConcatImage, f_low: f64, f_high: f64) -> Result<FeatureImage> {
    bandpass_with(m, &RowBandpass::new(m.cols, f_low, f_high))
}

fn bandpass_with(m: &ConcatImage, filter: &RowBandpass) -> Result<FeatureImage> {
    let mut out = m.clone();
    for ch in 0..CHANNELS {
        for r in 0..m.rows {
            filter.apply(out.row_mut(ch, r))?;
        }
    }
    Ok(out)
}

/// Window-to-feature-image pipeline with a cached filter plan.
#[derive(Debug, Clone)]
pub struct Extractor {
    cfg: FeatureConfig,
    filter: RowBandpass,
}

impl Extractor {
    pub fn new(cfg: FeatureConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Extractor {
            cfg,
            filter: RowBandpass::new(FEATURE_COLUMNS, cfg.f_low, cfg.f_high),
        })
    }

    pub fn config(&self) -> &FeatureConfig {
        &self.cfg
    }

    /// Flattened top pyramid level of one crop.
    pub fn frame_column(&self, crop: &RgbImage) -> Result<PixelColumn> {
        let (h0, w0) = self.cfg.pre_resize;
        let resized = resize_bilinear(crop, w0, h0)?;
        Ok(to_column(&pyramid_top(&resized, self.cfg.pyramid_level)?))
    }

    pub fn extract_crops(&self, crops: &[RgbImage]) -> Result<FeatureImage> {
        let cols = crops
            .iter()
            .map(|c| self.frame_column(c))
            .collect::<Result<Vec<_>>>()?;
        let m = concat_columns(&cols, self.cfg.fps)?;
        let m = resample_columns(&m, FEATURE_COLUMNS);
        bandpass_with(&m, &self.filter)
    }

    pub fn extract(&self, window: &RoiWindow) -> Result<FeatureImage> {
        self.extract_crops(window.crops())
    }
}

/// One-shot convenience over [`Extractor`].
pub fn extract(window: &RoiWindow, cfg: &FeatureConfig) -> Result<FeatureImage> {
    Extractor::new(*cfg)?.extract(window)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::roi::RoiRect;
    use std::f64::consts::PI;

    #[test]
    fn row_major_column() {
        let img = RgbImage::from_data(
            2,
            2,
            vec![1.0, 10.0, 100.0, 2.0, 20.0, 200.0, 3.0, 30.0, 300.0, 4.0, 40.0, 400.0],
        )
        .unwrap();
        let col = to_column(&img);
        let reds: Vec<f64> = col.0.iter().map(|p| p[0]).collect();
        assert_eq!(reds, vec![1.0, 2.0, 3.0, 4.0]);
        assert_eq!(column_to_image(&col, 2, 2).unwrap(), img);
    }

    #[test]
    fn concat_shape_and_count_check() {
        let cols = vec![PixelColumn(vec![[1.0, 2.0, 3.0]; 25]); 25];
        let m = concat_columns(&cols, 25).unwrap();
        assert_eq!((m.rows(), m.cols(), m.channels()), (25, 25, 3));
        assert!(concat_columns(&cols[..24], 25).is_err());
        let mut ragged = cols.clone();
        ragged[3].0.pop();
        assert!(concat_columns(&ragged, 25).is_err());
    }

    #[test]
    fn concat_follows_frame_order() {
        let cols: Vec<_> = (0..5)
            .map(|i| PixelColumn(vec![[i as f64, 0.0, 0.0]; 3]))
            .collect();
        let mut perm = cols.clone();
        perm.swap(0, 4);
        let a = concat_columns(&cols, 5).unwrap();
        let b = concat_columns(&perm, 5).unwrap();
        assert_eq!(a.get(0, 1, 0), b.get(0, 1, 4));
        assert_eq!(a.get(0, 2, 4), b.get(0, 2, 0));
    }

    #[test]
    fn default_config_is_valid_and_gives_25_rows() {
        let cfg = FeatureConfig::default();
        cfg.validate().unwrap();
        assert_eq!(cfg.rows(), 25);
    }

    #[test]
    fn invalid_configs() {
        let mut cfg = FeatureConfig {
            f_low: 5.0,
            ..FeatureConfig::default()
        };
        assert!(cfg.validate().is_err());
        cfg = FeatureConfig {
            f_high: 13.0,
            ..FeatureConfig::default()
        };
        assert!(cfg.validate().is_err());
        cfg = FeatureConfig {
            pyramid_level: 3,
            ..FeatureConfig::default()
        };
        assert!(cfg.validate().is_err());
    }

    fn window_of(frames: Vec<RgbImage>) -> RoiWindow {
        let rect = RoiRect {
            x_lt: 0,
            y_lt: 0,
            width: frames[0].width(),
            height: frames[0].height(),
        };
        RoiWindow::from_crops(frames, rect, 0).unwrap()
    }

    #[test]
    fn static_window_gives_zeros() {
        let frames = vec![RgbImage::filled(40, 30, [90.0, 140.0, 60.0]); 25];
        let f = extract(&window_of(frames), &FeatureConfig::default()).unwrap();
        assert_eq!((f.rows(), f.cols()), (25, 25));
        assert!(f.data().iter().all(|v| v.abs() < 1e-9));
    }

    #[test]
    fn uniform_green_pulse_survives() {
        // 2 Hz is exactly bin 2, so the filtered green row equals the input
        let frames: Vec<_> = (0..25)
            .map(|i| {
                let g = 120.0 + 2.0 * (2.0 * PI * 2.0 * i as f64 / 25.0).sin();
                RgbImage::filled(33, 47, [100.0, g, 80.0])
            })
            .collect();
        let f = extract(&window_of(frames), &FeatureConfig::default()).unwrap();
        for r in 0..25 {
            for c in 0..25 {
                let want = 2.0 * (2.0 * PI * 2.0 * c as f64 / 25.0).sin();
                assert!((f.get(1, r, c) - want).abs() < 1e-6);
                assert!(f.get(0, r, c).abs() < 1e-9);
                assert!(f.get(2, r, c).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn resampling_30fps_to_25_columns() {
        let cfg = FeatureConfig {
            fps: 30,
            ..FeatureConfig::default()
        };
        let frames: Vec<_> = (0..30)
            .map(|i| {
                let v = 100.0 + (2.0 * PI * i as f64 / 30.0).cos();
                RgbImage::filled(16, 16, [v, v, v])
            })
            .collect();
        let f = extract(&window_of(frames), &cfg).unwrap();
        assert_eq!(f.cols(), 25);
        // a 1 Hz cosine resampled linearly is still dominated by bin 1
        let want = (2.0 * PI * 3.0 / 25.0).cos();
        assert!((f.get(0, 0, 3) - want).abs() < 0.05);
    }

    #[test]
    fn wrong_frame_count_rejected() {
        let frames = vec![RgbImage::filled(16, 16, [1.0; 3]); 24];
        assert!(extract(&window_of(frames), &FeatureConfig::default()).is_err());
    }
}
