//! Ideal temporal bandpass applied along the rows of a concatenated image.
//!
//! Each row holds one pixel's samples over one second, so bin `k` of its
//! length-N transform sits at `k` Hz. A bin survives iff its centre
//! frequency lies in `[f_low, f_high]`; the mask is symmetric in `±k` so the
//! inverse transform is real.

use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};

/// Imaginary residue tolerated (relative to the row's peak magnitude)
/// before the inverse transform is declared non-real.
pub const IMAG_TOLERANCE: f64 = 1e-9;

/// Frequency in Hz of bin `k` for an `n`-point transform covering one
/// second, using the signed index convention.
#[inline]
pub fn bin_frequency(k: usize, n: usize) -> f64 {
    if k <= n / 2 {
        k as f64
    } else {
        k as f64 - n as f64
    }
}

/// Binary frequency mask for an `n`-sample, one-second row.
pub fn band_mask(n: usize, f_low: f64, f_high: f64) -> Vec<bool> {
    (0..n)
        .map(|k| {
            let f = bin_frequency(k, n).abs();
            f >= f_low && f <= f_high
        })
        .collect()
}

/// Reusable row filter for a fixed row length.
#[derive(Clone)]
pub struct RowBandpass {
    n: usize,
    mask: Vec<bool>,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for RowBandpass {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RowBandpass")
            .field("n", &self.n)
            .field("mask", &self.mask)
            .finish()
    }
}

impl RowBandpass {
    pub fn new(n: usize, f_low: f64, f_high: f64) -> Self {
        let mut planner = FftPlanner::new();
        RowBandpass {
            n,
            mask: band_mask(n, f_low, f_high),
            forward: planner.plan_fft_forward(n),
            inverse: planner.plan_fft_inverse(n),
        }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    /// Filter one row in place.
    pub fn apply(&self, row: &mut [f64]) -> Result<()> {
        if row.len() != self.n {
            return Err(Error::Featex(format!(
                "row length {} does not match filter length {}",
                row.len(),
                self.n
            )));
        }
        if let Some(v) = row.iter().find(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("non-finite sample {v} in bandpass input")));
        }
        let mut buf: Vec<Complex64> = row.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.forward.process(&mut buf);
        for (b, &keep) in buf.iter_mut().zip(&self.mask) {
            if !keep {
                *b = Complex64::new(0.0, 0.0);
            }
        }
        self.inverse.process(&mut buf);

        let scale = 1.0 / self.n as f64;
        let peak = buf.iter().map(|c| c.norm()).fold(0.0f64, f64::max) * scale;
        let worst_imag = buf.iter().map(|c| c.im.abs()).fold(0.0f64, f64::max) * scale;
        if worst_imag > IMAG_TOLERANCE * peak.max(1.0) {
            return Err(Error::Numeric(format!(
                "inverse transform left imaginary residue {worst_imag:e}"
            )));
        }
        for (r, c) in row.iter_mut().zip(&buf) {
            *r = c.re * scale;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn cosine(freq: f64, n: usize, phase: f64) -> Vec<f64> {
        (0..n)
            .map(|i| (2.0 * PI * freq * i as f64 / n as f64 + phase).cos())
            .collect()
    }

    #[test]
    fn default_band_keeps_one_to_four_hz() {
        let m = band_mask(25, 0.75, 4.0);
        let kept: Vec<f64> = (0..25).filter(|&k| m[k]).map(|k| bin_frequency(k, 25)).collect();
        assert_eq!(kept, vec![1.0, 2.0, 3.0, 4.0, -4.0, -3.0, -2.0, -1.0]);
    }

    #[test]
    fn in_band_cosine_passes() {
        let f = RowBandpass::new(25, 0.75, 4.0);
        let mut row = cosine(2.0, 25, 0.3);
        let want = row.clone();
        f.apply(&mut row).unwrap();
        for (a, b) in row.iter().zip(&want) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn dc_is_removed() {
        let f = RowBandpass::new(25, 0.75, 4.0);
        let mut row = vec![130.0; 25];
        f.apply(&mut row).unwrap();
        assert!(row.iter().all(|v| v.abs() < 1e-9));
    }

    #[test]
    fn mixture_keeps_only_in_band_part() {
        let f = RowBandpass::new(25, 0.75, 4.0);
        let two = cosine(2.0, 25, 1.1);
        let six = cosine(6.0, 25, 0.2);
        let mut row: Vec<f64> = two.iter().zip(&six).map(|(a, b)| 80.0 + 3.0 * a + 5.0 * b).collect();
        f.apply(&mut row).unwrap();
        for (a, b) in row.iter().zip(&two) {
            assert!((a - 3.0 * b).abs() < 1e-9);
        }
    }

    #[test]
    fn rejects_bad_rows() {
        let f = RowBandpass::new(25, 0.75, 4.0);
        assert!(f.apply(&mut [0.0; 24]).is_err());
        let mut row = vec![0.0; 25];
        row[3] = f64::NAN;
        assert!(f.apply(&mut row).unwrap_err().is_numeric());
    }

    #[test]
    fn even_length_nyquist_bin() {
        let m = band_mask(8, 0.5, 4.0);
        assert!(m[4]);
        assert!(!m[0]);
    }
}
