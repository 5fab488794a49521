//! Spatial decomposition: bilinear pre-resize and Gaussian pyramid reduction.

use crate::error::{Error, Result};
use crate::image::RgbImage;

/// Binomial 5-tap approximation of a Gaussian, sums to 1.
pub const PYRAMID_KERNEL: [f64; 5] = [1.0 / 16.0, 4.0 / 16.0, 6.0 / 16.0, 4.0 / 16.0, 1.0 / 16.0];

/// Mirror an out-of-range index about the border without repeating the
/// edge sample (`dcb|abcd|cba`).
#[inline]
pub(crate) fn reflect101(mut i: isize, n: usize) -> usize {
    let n = n as isize;
    if n == 1 {
        return 0;
    }
    loop {
        if i < 0 {
            i = -i;
        } else if i >= n {
            i = 2 * n - 2 - i;
        } else {
            return i as usize;
        }
    }
}

/// `(a + 4b + 6c + 4d + e) / 16`, written around the centre tap so a
/// constant input comes back bit-exact.
#[inline]
fn binomial5([a, b, c, d, e]: [f64; 5]) -> f64 {
    c + ((a + e - 2.0 * c) + 4.0 * (b + d - 2.0 * c)) / 16.0
}

/// Blur with the binomial kernel and keep every second pixel starting at 0.
pub fn gaussian_downsample(img: &RgbImage) -> Result<RgbImage> {
    let (w, h) = (img.width(), img.height());
    if w == 0 || h == 0 || w % 2 != 0 || h % 2 != 0 {
        return Err(Error::Featex(format!(
            "pyramid level needs even, non-zero dimensions, got {w}x{h}"
        )));
    }
    let (ow, oh) = (w / 2, h / 2);
    let src = img.data();

    // horizontal pass, only at the columns that survive decimation
    let mut horiz = vec![0.0; ow * h * 3];
    for y in 0..h {
        let row = &src[y * w * 3..(y + 1) * w * 3];
        for ox in 0..ow {
            let x = (2 * ox) as isize;
            let at = |d: isize, c: usize| row[reflect101(x + d, w) * 3 + c];
            for c in 0..3 {
                horiz[(y * ow + ox) * 3 + c] = binomial5([at(-2, c), at(-1, c), at(0, c), at(1, c), at(2, c)]);
            }
        }
    }

    let mut out = RgbImage::new(ow, oh);
    let dst = out.data_mut();
    let stride = ow * 3;
    for oy in 0..oh {
        let y = (2 * oy) as isize;
        let rows: [usize; 5] = std::array::from_fn(|t| reflect101(y + t as isize - 2, h) * stride);
        for i in 0..stride {
            dst[oy * stride + i] = binomial5(rows.map(|r| horiz[r + i]));
        }
    }
    Ok(out)
}

/// Apply [`gaussian_downsample`] `levels` times.
pub fn pyramid_top(img: &RgbImage, levels: usize) -> Result<RgbImage> {
    let mut cur = img.clone();
    for _ in 0..levels {
        cur = gaussian_downsample(&cur)?;
    }
    Ok(cur)
}

/// Bilinear resize with pixel-center alignment and edge clamping.
pub fn resize_bilinear(img: &RgbImage, out_w: usize, out_h: usize) -> Result<RgbImage> {
    let (w, h) = (img.width(), img.height());
    if w == 0 || h == 0 || out_w == 0 || out_h == 0 {
        return Err(Error::Featex(format!(
            "cannot resize {w}x{h} to {out_w}x{out_h}"
        )));
    }
    if w == out_w && h == out_h {
        return Ok(img.clone());
    }
    let sx = w as f64 / out_w as f64;
    let sy = h as f64 / out_h as f64;
    let taps = |dst: usize, scale: f64, n: usize| -> (usize, usize, f64) {
        let s = ((dst as f64 + 0.5) * scale - 0.5).clamp(0.0, (n - 1) as f64);
        let i0 = s.floor() as usize;
        let i1 = (i0 + 1).min(n - 1);
        (i0, i1, s - i0 as f64)
    };
    let xs: Vec<_> = (0..out_w).map(|x| taps(x, sx, w)).collect();

    let mut out = RgbImage::new(out_w, out_h);
    for oy in 0..out_h {
        let (y0, y1, fy) = taps(oy, sy, h);
        for (ox, &(x0, x1, fx)) in xs.iter().enumerate() {
            for c in 0..3 {
                let top = img.get(x0, y0, c) * (1.0 - fx) + img.get(x1, y0, c) * fx;
                let bot = img.get(x0, y1, c) * (1.0 - fx) + img.get(x1, y1, c) * fx;
                out.set(ox, oy, c, top * (1.0 - fy) + bot * fy);
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Direct 5x5 convolution with the outer-product kernel, evaluated at
    /// every pixel, followed by decimation.
    pub(crate) fn dense_oracle(img: &RgbImage) -> RgbImage {
        let (w, h) = (img.width() as isize, img.height() as isize);
        let mirror = |i: isize, n: isize| -> usize {
            // independent border rule: explicit table for the two
            // out-of-range offsets on each side
            let j = if i < 0 {
                -i
            } else if i >= n {
                2 * (n - 1) - i
            } else {
                i
            };
            j as usize
        };
        let k1 = [1.0, 4.0, 6.0, 4.0, 1.0];
        let mut full = RgbImage::new(w as usize, h as usize);
        for y in 0..h {
            for x in 0..w {
                for c in 0..3 {
                    let mut acc = 0.0;
                    for dy in -2..=2isize {
                        for dx in -2..=2isize {
                            let wgt = k1[(dy + 2) as usize] * k1[(dx + 2) as usize] / 256.0;
                            acc += wgt * img.get(mirror(x + dx, w), mirror(y + dy, h), c);
                        }
                    }
                    full.set(x as usize, y as usize, c, acc);
                }
            }
        }
        let mut out = RgbImage::new(w as usize / 2, h as usize / 2);
        for y in 0..out.height() {
            for x in 0..out.width() {
                for c in 0..3 {
                    out.set(x, y, c, full.get(2 * x, 2 * y, c));
                }
            }
        }
        out
    }

    #[test]
    fn constant_image_is_preserved() {
        for &(w, h) in &[(2, 2), (4, 6), (80, 80)] {
            let img = RgbImage::filled(w, h, [12.5, 200.0, 3.0]);
            let out = gaussian_downsample(&img).unwrap();
            assert_eq!((out.width(), out.height()), (w / 2, h / 2));
            for px in out.data().chunks(3) {
                assert_eq!(px, &[12.5, 200.0, 3.0]);
            }
        }
    }

    #[test]
    fn ramp_matches_dense_oracle() {
        let mut img = RgbImage::new(8, 8);
        for y in 0..8 {
            for x in 0..8 {
                img.set(x, y, 0, x as f64);
                img.set(x, y, 1, y as f64 * 3.0);
                img.set(x, y, 2, (x + 2 * y) as f64);
            }
        }
        let got = gaussian_downsample(&img).unwrap();
        let want = dense_oracle(&img);
        for (a, b) in got.data().iter().zip(want.data()) {
            assert!((a - b).abs() < 1e-6, "{a} vs {b}");
        }
    }

    #[test]
    fn four_levels_from_80_gives_5() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let data = (0..80 * 80 * 3).map(|_| rng.random_range(0.0..255.0)).collect();
        let img = RgbImage::from_data(80, 80, data).unwrap();
        let top = pyramid_top(&img, 4).unwrap();
        assert_eq!((top.width(), top.height()), (5, 5));
    }

    #[test]
    fn odd_dimensions_rejected() {
        assert!(gaussian_downsample(&RgbImage::new(5, 4)).is_err());
        assert!(gaussian_downsample(&RgbImage::new(4, 3)).is_err());
    }

    #[test]
    fn reflect_handles_tiny_extents() {
        assert_eq!(reflect101(-1, 2), 1);
        assert_eq!(reflect101(-2, 2), 0);
        assert_eq!(reflect101(3, 2), 1);
        assert_eq!(reflect101(-2, 4), 2);
        assert_eq!(reflect101(5, 4), 1);
    }

    #[test]
    fn resize_preserves_constants_and_identity() {
        let img = RgbImage::filled(37, 23, [1.0, 2.0, 3.0]);
        let r = resize_bilinear(&img, 80, 80).unwrap();
        assert!(r.data().chunks(3).all(|p| (p[0] - 1.0).abs() < 1e-12 && (p[2] - 3.0).abs() < 1e-12));
        let mut g = RgbImage::new(4, 4);
        g.set(1, 2, 0, 9.0);
        assert_eq!(resize_bilinear(&g, 4, 4).unwrap(), g);
    }

    #[test]
    fn resize_upsamples_linearly() {
        // 2 px ramp 0..10 to 4 px: centers at -0.25, 0.25, 0.75, 1.25 clamp
        let img = RgbImage::from_data(2, 1, vec![0.0, 0.0, 0.0, 10.0, 10.0, 10.0]).unwrap();
        let r = resize_bilinear(&img, 4, 1).unwrap();
        let row: Vec<f64> = (0..4).map(|x| r.get(x, 0, 0)).collect();
        assert_eq!(row, vec![0.0, 2.5, 7.5, 10.0]);
    }
}
