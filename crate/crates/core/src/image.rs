//! Minimal RGB raster with `f64` samples, interleaved `[r, g, b]` per pixel.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct RgbImage {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize) -> Self {
        RgbImage {
            width,
            height,
            data: vec![0.0; width * height * 3],
        }
    }

    pub fn filled(width: usize, height: usize, rgb: [f64; 3]) -> Self {
        let mut data = Vec::with_capacity(width * height * 3);
        for _ in 0..width * height {
            data.extend_from_slice(&rgb);
        }
        RgbImage {
            width,
            height,
            data,
        }
    }

    pub fn from_data(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height * 3 {
            return Err(Error::Format(format!(
                "image data length {} does not match {}x{}x3",
                data.len(),
                width,
                height
            )));
        }
        Ok(RgbImage {
            width,
            height,
            data,
        })
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> f64 {
        self.data[(y * self.width + x) * 3 + c]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, c: usize, v: f64) {
        self.data[(y * self.width + x) * 3 + c] = v;
    }

    #[inline]
    pub fn pixel(&self, x: usize, y: usize) -> [f64; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    /// Copy out the `w`×`h` block whose top-left corner is `(x, y)`.
    /// Returns `None` when the block does not lie fully inside the image.
    pub fn crop(&self, x: usize, y: usize, w: usize, h: usize) -> Option<RgbImage> {
        if x + w > self.width || y + h > self.height {
            return None;
        }
        let mut data = Vec::with_capacity(w * h * 3);
        for row in y..y + h {
            let start = (row * self.width + x) * 3;
            data.extend_from_slice(&self.data[start..start + w * 3]);
        }
        Some(RgbImage {
            width: w,
            height: h,
            data,
        })
    }

    /// Per-channel mean over all pixels.
    pub fn channel_means(&self) -> [f64; 3] {
        let mut acc = [0.0; 3];
        for px in self.data.chunks_exact(3) {
            acc[0] += px[0];
            acc[1] += px[1];
            acc[2] += px[2];
        }
        let n = (self.width * self.height) as f64;
        [acc[0] / n, acc[1] / n, acc[2] / n]
    }

    /// `a * self + b * other`, pixelwise.
    pub fn affine_combine(&self, a: f64, other: &RgbImage, b: f64) -> Option<RgbImage> {
        if self.width != other.width || self.height != other.height {
            return None;
        }
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(x, y)| a * x + b * y)
            .collect();
        Some(RgbImage {
            width: self.width,
            height: self.height,
            data,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn crop_inside_and_outside() {
        let mut img = RgbImage::new(4, 3);
        img.set(2, 1, 1, 7.0);
        let c = img.crop(1, 1, 2, 2).unwrap();
        assert_eq!(c.width(), 2);
        assert_eq!(c.get(1, 0, 1), 7.0);
        assert!(img.crop(3, 0, 2, 1).is_none());
        assert!(img.crop(0, 2, 1, 2).is_none());
    }

    #[test]
    fn from_data_checks_length() {
        assert!(RgbImage::from_data(2, 2, vec![0.0; 11]).is_err());
        assert!(RgbImage::from_data(2, 2, vec![0.0; 12]).is_ok());
    }
}
