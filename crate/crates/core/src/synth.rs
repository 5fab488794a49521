//! Synthetic recordings with a known pulse.
//!
//! A flat "face" rectangle on a darker background has its colour modulated
//! by `amplitude · sin(φ(t))`, where `φ(t) = φ₀ + 2π ∫ bpm(τ)/60 dτ`.
//! Landmarks are placed so the cheek rectangle lies inside the face, and
//! the face may drift linearly. Every frame's noise comes from its own
//! seeded stream, so frames can be rendered in any order or in parallel.

use std::f64::consts::PI;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::frames::{write_frame, FrameFormat};
use crate::image::RgbImage;
use crate::ingest::{
    format_landmarks_line, windows_from_parts, DatasetManifest, EntryWindows, GroundTruthSeries,
    ManifestEntry, LABEL_MAX_BPM, LABEL_MIN_BPM,
};
use crate::roi::{LandmarkSet, RoiIndices, LANDMARK_COUNT};

/// Piecewise-linear heart rate over time. Two knots at the same time
/// make a step; the later knot wins at that instant.
#[derive(Debug, Clone, PartialEq)]
pub struct HrTimeline {
    knots: Vec<(f64, f64)>,
}

impl HrTimeline {
    pub fn new(knots: Vec<(f64, f64)>) -> Result<Self> {
        if knots.is_empty() {
            return Err(Error::Synth("timeline needs at least one knot".into()));
        }
        if knots.windows(2).any(|w| w[1].0 < w[0].0) {
            return Err(Error::Synth("timeline knots must be time-ordered".into()));
        }
        if let Some(&(_, b)) = knots.iter().find(|k| !(LABEL_MIN_BPM..=LABEL_MAX_BPM).contains(&k.1)) {
            return Err(Error::Synth(format!("timeline bpm {b} outside [45, 240]")));
        }
        Ok(HrTimeline { knots })
    }

    pub fn constant(bpm: f64) -> Result<Self> {
        Self::new(vec![(0.0, bpm)])
    }

    pub fn step(at_s: f64, before: f64, after: f64) -> Result<Self> {
        Self::new(vec![(0.0, before), (at_s, before), (at_s, after)])
    }

    pub fn sweep(t0: f64, bpm0: f64, t1: f64, bpm1: f64) -> Result<Self> {
        Self::new(vec![(t0, bpm0), (t1, bpm1)])
    }

    pub fn bpm_at(&self, t: f64) -> f64 {
        let k = &self.knots;
        if t < k[0].0 {
            return k[0].1;
        }
        // last knot with time <= t
        let i = k.partition_point(|p| p.0 <= t) - 1;
        match k.get(i + 1) {
            Some(&(t1, b1)) if t1 > k[i].0 => {
                let (t0, b0) = k[i];
                b0 + (b1 - b0) * (t - t0) / (t1 - t0)
            }
            _ => k[i].1,
        }
    }

    /// `∫₀ᵗ bpm(τ) dτ` in beat-minutes·seconds (divide by 60 for beats).
    pub fn integral(&self, t: f64) -> f64 {
        let k = &self.knots;
        let mut acc = 0.0;
        let mut cur = 0.0f64;
        let segment = |a: f64, b: f64| -> f64 {
            // trapezoid is exact on a linear piece
            (b - a) * 0.5 * (self.bpm_at(a) + self.bpm_at_left(b))
        };
        let mut bounds: Vec<f64> = k.iter().map(|p| p.0).filter(|&x| x > 0.0 && x < t).collect();
        bounds.dedup();
        for b in bounds {
            acc += segment(cur, b);
            cur = b;
        }
        if t > cur {
            acc += segment(cur, t);
        }
        acc
    }

    /// Left limit of the rate at `t` (differs from `bpm_at` only at steps).
    fn bpm_at_left(&self, t: f64) -> f64 {
        let k = &self.knots;
        let i = k.partition_point(|p| p.0 < t);
        if i == 0 {
            return k[0].1;
        }
        let (t0, b0) = k[i - 1];
        match k.get(i) {
            Some(&(t1, b1)) if t1 > t0 => b0 + (b1 - b0) * (t - t0) / (t1 - t0),
            _ => b0,
        }
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.knots
            .iter()
            .fold((f64::MAX, f64::MIN), |(lo, hi), k| (lo.min(k.1), hi.max(k.1)))
    }
}

/// Axis-aligned face box in frame pixels at `t = 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FaceBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub duration_s: usize,
    pub fps: usize,
    pub gt_rate: usize,
    pub frame_size: (usize, usize),
    pub face: FaceBox,
    pub base_color: [f64; 3],
    pub background: [f64; 3],
    /// Pulse amplitude per channel, in 0–255 units.
    pub amplitude: [f64; 3],
    pub hr: HrTimeline,
    pub phase0: f64,
    pub noise_sigma: f64,
    /// Face drift in pixels per second, `(dx, dy)`.
    pub drift: (f64, f64),
    pub seed: u64,
    pub format: FrameFormat,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            duration_s: 10,
            fps: 25,
            gt_rate: 1000,
            frame_size: (96, 96),
            face: FaceBox {
                x: 16.0,
                y: 8.0,
                w: 64.0,
                h: 80.0,
            },
            base_color: [170.0, 120.0, 100.0],
            background: [40.0, 50.0, 60.0],
            amplitude: [0.6, 1.5, 0.3],
            hr: HrTimeline { knots: vec![(0.0, 75.0)] },
            phase0: 0.0,
            noise_sigma: 0.0,
            drift: (0.0, 0.0),
            seed: 0,
            format: FrameFormat::Float32,
        }
    }
}

fn mix_seed(seed: u64, stream: u64) -> u64 {
    // splitmix64 finalizer
    let mut z = seed ^ stream.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.fps == 0 || self.gt_rate == 0 || self.duration_s == 0 {
            return Err(Error::Synth("fps, gt_rate and duration must be positive".into()));
        }
        if self.amplitude.iter().any(|a| *a < 0.0) || self.noise_sigma < 0.0 {
            return Err(Error::Synth("amplitudes and noise must be non-negative".into()));
        }
        let (lo, hi) = self.hr.min_max();
        if lo < LABEL_MIN_BPM || hi > LABEL_MAX_BPM {
            return Err(Error::Synth(format!("heart rate range [{lo}, {hi}] outside [45, 240]")));
        }
        Ok(())
    }

    pub fn frame_count(&self) -> usize {
        self.duration_s * self.fps
    }

    pub fn time_of(&self, frame: usize) -> f64 {
        frame as f64 / self.fps as f64
    }

    /// Pulse phase at time `t`.
    pub fn phase(&self, t: f64) -> f64 {
        self.phase0 + 2.0 * PI * self.hr.integral(t) / 60.0
    }

    /// Noise-free face colour at `t`.
    pub fn skin_color(&self, t: f64) -> [f64; 3] {
        let s = self.phase(t).sin();
        [
            self.base_color[0] + self.amplitude[0] * s,
            self.base_color[1] + self.amplitude[1] * s,
            self.base_color[2] + self.amplitude[2] * s,
        ]
    }

    fn offset(&self, t: f64) -> (f64, f64) {
        (self.drift.0 * t, self.drift.1 * t)
    }

    pub fn render_frame(&self, frame: usize) -> RgbImage {
        let t = self.time_of(frame);
        let (w, h) = self.frame_size;
        let (dx, dy) = self.offset(t);
        let x0 = (self.face.x + dx).round() as isize;
        let y0 = (self.face.y + dy).round() as isize;
        let (fw, fh) = (self.face.w.round() as isize, self.face.h.round() as isize);
        let skin = self.skin_color(t);

        let mut img = RgbImage::filled(w, h, self.background);
        for y in y0.max(0)..(y0 + fh).min(h as isize) {
            for x in x0.max(0)..(x0 + fw).min(w as isize) {
                for c in 0..3 {
                    img.set(x as usize, y as usize, c, skin[c]);
                }
            }
        }
        if self.noise_sigma > 0.0 {
            let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(self.seed, frame as u64));
            let normal = Normal::new(0.0, self.noise_sigma).expect("sigma validated");
            for v in img.data_mut() {
                *v += normal.sample(&mut rng);
            }
        }
        img
    }

    /// Landmarks for `frame`, with the eight ROI points placed to give a
    /// cheek rectangle well inside the face box.
    pub fn landmarks(&self, frame: usize, idx: &RoiIndices) -> LandmarkSet {
        let (dx, dy) = self.offset(self.time_of(frame));
        let f = FaceBox {
            x: self.face.x + dx,
            y: self.face.y + dy,
            ..self.face
        };
        let (cx, cy) = (f.x + f.w / 2.0, f.y + f.h / 2.0);
        let mut pts: Vec<[f64; 2]> = (0..LANDMARK_COUNT)
            .map(|i| {
                let a = 2.0 * PI * i as f64 / LANDMARK_COUNT as f64;
                [cx + 0.45 * f.w * a.cos(), cy + 0.45 * f.h * a.sin()]
            })
            .collect();
        let mut put = |i: usize, x: f64, y: f64| pts[i - 1] = [x, y];
        put(idx.left, f.x + 0.15 * f.w, f.y + 0.55 * f.h);
        put(idx.right, f.x + 0.85 * f.w, f.y + 0.55 * f.h);
        for (k, &i) in idx.eye_bottom.iter().enumerate() {
            put(i, f.x + (0.3 + 0.12 * k as f64) * f.w, f.y + (0.34 + 0.003 * k as f64) * f.h);
        }
        for (k, &i) in idx.lip_top.iter().enumerate() {
            put(i, f.x + (0.45 + 0.1 * k as f64) * f.w, f.y + (0.74 + 0.004 * k as f64) * f.h);
        }
        let clamped = pts.into_iter().map(|p| [p[0].max(0.0), p[1].max(0.0)]).collect();
        LandmarkSet::new(clamped).expect("68 finite points")
    }

    /// Ground truth sampled at `gt_rate`, sample `i` at `i / gt_rate` s.
    pub fn ground_truth(&self) -> GroundTruthSeries {
        let n = self.duration_s * self.gt_rate;
        let samples = (0..n)
            .map(|i| self.hr.bpm_at(i as f64 / self.gt_rate as f64))
            .collect();
        GroundTruthSeries::new(samples, self.gt_rate).expect("timeline validated to [45, 240]")
    }

    /// Labelled windows straight from memory, bypassing the filesystem.
    pub fn windows(&self, idx: &RoiIndices) -> Result<EntryWindows> {
        self.validate()?;
        let frames: Vec<usize> = (0..self.frame_count()).collect();
        let lms: Vec<_> = frames.iter().map(|&f| Some(self.landmarks(f, idx))).collect();
        windows_from_parts(&frames, &lms, &self.ground_truth(), self.fps, idx, |&f| {
            Ok(self.render_frame(f))
        })
    }
}

/// Write one clip under `dir` (`frames/`, `landmarks.txt`, `gt.txt`) and
/// return its manifest entry with absolute paths.
pub fn generate(spec: &SynthSpec, dir: &Path, idx: &RoiIndices) -> Result<ManifestEntry> {
    spec.validate()?;
    let frames_dir = dir.join("frames");
    fs::create_dir_all(&frames_dir).map_err(|e| Error::io(&frames_dir, e))?;
    let ext = spec.format.extension();
    let mut lm_text = String::new();
    for f in 0..spec.frame_count() {
        let p = frames_dir.join(format!("frame_{f:06}.{ext}"));
        write_frame(&p, &spec.render_frame(f), spec.format)?;
        lm_text.push_str(&format_landmarks_line(f, &spec.landmarks(f, idx)));
        lm_text.push('\n');
    }
    let landmarks_path = dir.join("landmarks.txt");
    fs::write(&landmarks_path, lm_text).map_err(|e| Error::io(&landmarks_path, e))?;

    let gt_path = dir.join("gt.txt");
    let mut gt_text = String::new();
    for v in spec.ground_truth().samples() {
        gt_text.push_str(&format!("{v}\n"));
    }
    fs::write(&gt_path, gt_text).map_err(|e| Error::io(&gt_path, e))?;

    Ok(ManifestEntry {
        frames_dir,
        landmarks_path,
        gt_path,
        fps: spec.fps,
        gt_rate: spec.gt_rate,
    })
}

/// Histogram of drawn heart rates with a χ² statistic against uniform.
#[derive(Debug, Clone, PartialEq)]
pub struct CoverageReport {
    pub bins: Vec<(f64, f64, usize)>,
    pub chi_square: f64,
}

impl CoverageReport {
    pub fn from_draws(draws: &[f64], lo: f64, hi: f64, n_bins: usize) -> Self {
        let width = (hi - lo) / n_bins as f64;
        let mut counts = vec![0usize; n_bins];
        for &d in draws {
            let b = if width > 0.0 { ((d - lo) / width) as usize } else { 0 };
            counts[b.min(n_bins - 1)] += 1;
        }
        let expected = draws.len() as f64 / n_bins as f64;
        let chi_square = if width > 0.0 && expected > 0.0 {
            counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum()
        } else {
            0.0
        };
        let bins = counts
            .into_iter()
            .enumerate()
            .map(|(i, c)| (lo + i as f64 * width, lo + (i + 1) as f64 * width, c))
            .collect();
        CoverageReport { bins, chi_square }
    }
}

impl fmt::Display for CoverageReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "heart-rate coverage (chi-square vs uniform = {:.2}):", self.chi_square)?;
        for (a, b, c) in &self.bins {
            writeln!(f, "  [{a:6.1}, {b:6.1}) {c}")?;
        }
        Ok(())
    }
}

/// Per-clip specs for a corpus: constant heart rate drawn uniformly from
/// `hr_range`, each clip with its own seed and starting phase.
pub fn corpus_specs(n_clips: usize, hr_range: (f64, f64), template: &SynthSpec) -> Result<Vec<SynthSpec>> {
    let (lo, hi) = hr_range;
    if n_clips == 0 {
        return Err(Error::Synth("corpus needs at least one clip".into()));
    }
    if !(lo <= hi) || lo < LABEL_MIN_BPM || hi > LABEL_MAX_BPM {
        return Err(Error::Synth(format!("invalid heart-rate range [{lo}, {hi}]")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(template.seed);
    (0..n_clips)
        .map(|i| {
            let bpm = if hi > lo { rng.random_range(lo..hi) } else { lo };
            let phase0 = rng.random_range(0.0..2.0 * PI);
            Ok(SynthSpec {
                hr: HrTimeline::constant(bpm)?,
                phase0,
                seed: mix_seed(template.seed, i as u64 + 1),
                ..template.clone()
            })
        })
        .collect()
}

fn relative_to(path: &Path, base: &Path) -> PathBuf {
    path.strip_prefix(base).map(Path::to_path_buf).unwrap_or_else(|_| path.to_path_buf())
}

/// Directory of clip `i` inside a corpus.
pub fn clip_dir(out_dir: &Path, i: usize) -> PathBuf {
    out_dir.join(format!("clip_{i:04}"))
}

/// Write `manifest.tsv` for `entries`, with paths made relative to
/// `out_dir` where possible.
pub fn write_corpus_manifest(out_dir: &Path, entries: &[ManifestEntry]) -> Result<PathBuf> {
    let manifest = DatasetManifest {
        entries: entries
            .iter()
            .map(|e| ManifestEntry {
                frames_dir: relative_to(&e.frames_dir, out_dir),
                landmarks_path: relative_to(&e.landmarks_path, out_dir),
                gt_path: relative_to(&e.gt_path, out_dir),
                ..e.clone()
            })
            .collect(),
    };
    let path = out_dir.join("manifest.tsv");
    fs::write(&path, manifest.to_text()).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

/// Coverage of the starting heart rates of `specs` over `hr_range`.
pub fn coverage(specs: &[SynthSpec], hr_range: (f64, f64)) -> CoverageReport {
    let draws: Vec<f64> = specs.iter().map(|s| s.hr.bpm_at(0.0)).collect();
    CoverageReport::from_draws(&draws, hr_range.0, hr_range.1, 6)
}

/// Write `n_clips` clips under `out_dir` plus `manifest.tsv`. Returns the
/// manifest path and the coverage report.
pub fn make_training_corpus(
    n_clips: usize,
    hr_range: (f64, f64),
    template: &SynthSpec,
    out_dir: &Path,
    idx: &RoiIndices,
) -> Result<(PathBuf, CoverageReport)> {
    let specs = corpus_specs(n_clips, hr_range, template)?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let entries = specs
        .iter()
        .enumerate()
        .map(|(i, spec)| generate(spec, &clip_dir(out_dir, i), idx))
        .collect::<Result<Vec<_>>>()?;
    let path = write_corpus_manifest(out_dir, &entries)?;
    Ok((path, coverage(&specs, hr_range)))
}
