//! Dataset manifests, landmark and ground-truth files, and the split of a
//! recording into labelled one-second windows.
//!
//! Manifest lines are `frames_dir<TAB>landmarks_file<TAB>gt_file<TAB>fps<TAB>gt_rate`;
//! `#` starts a comment. Relative paths resolve against the manifest's
//! directory. Ground-truth sample 0 is taken to coincide with frame 0.

use std::fs;
use std::path::{Path, PathBuf};

use log::warn;

use crate::error::{Error, Result};
use crate::frames::{list_frames, read_frame};
use crate::roi::{freeze_window, LandmarkSet, RoiIndices, RoiRejection, RoiWindow, LANDMARK_COUNT};

pub const GT_MIN_BPM: f64 = 30.0;
pub const GT_MAX_BPM: f64 = 300.0;
pub const LABEL_MIN_BPM: f64 = 45.0;
pub const LABEL_MAX_BPM: f64 = 240.0;

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub frames_dir: PathBuf,
    pub landmarks_path: PathBuf,
    pub gt_path: PathBuf,
    pub fps: usize,
    pub gt_rate: usize,
}

impl ManifestEntry {
    /// Name used to group windows by recording: the frames directory name,
    /// or its parent's name when the directory is literally `frames`.
    pub fn video_id(&self) -> String {
        let name = |p: &Path| p.file_name().map(|s| s.to_string_lossy().into_owned());
        match name(&self.frames_dir) {
            Some(n) if n == "frames" => self
                .frames_dir
                .parent()
                .and_then(name)
                .unwrap_or(n),
            Some(n) => n,
            None => self.frames_dir.display().to_string(),
        }
    }

    pub fn to_line(&self) -> String {
        format!(
            "{}\t{}\t{}\t{}\t{}",
            self.frames_dir.display(),
            self.landmarks_path.display(),
            self.gt_path.display(),
            self.fps,
            self.gt_rate
        )
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    /// Serialize with paths written as stored.
    pub fn to_text(&self) -> String {
        let mut s = String::from("# frames_dir\tlandmarks\tground_truth\tfps\tgt_rate\n");
        for e in &self.entries {
            s.push_str(&e.to_line());
            s.push('\n');
        }
        s
    }
}

fn entry_err(path: &Path, line: usize, msg: impl std::fmt::Display) -> Error {
    Error::Ingest(format!("{}: entry at line {line}: {msg}", path.display()))
}

/// Parse and validate a manifest.
pub fn load_manifest(path: &Path) -> Result<DatasetManifest> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new(""));
    let resolve = |s: &str| {
        let p = PathBuf::from(s);
        if p.is_absolute() {
            p
        } else {
            base.join(p)
        }
    };
    let mut entries = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.split('#').next().unwrap_or("").trim_end();
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').map(str::trim).collect();
        if fields.len() != 5 {
            return Err(entry_err(path, line_no, format!("expected 5 tab-separated fields, got {}", fields.len())));
        }
        let parse_rate = |s: &str, what: &str| -> Result<usize> {
            let v: f64 = s
                .parse()
                .map_err(|_| entry_err(path, line_no, format!("{what} `{s}` is not a number")))?;
            if v <= 0.0 || v.fract() != 0.0 {
                return Err(entry_err(path, line_no, format!("{what} must be a positive integer, got {s}")));
            }
            Ok(v as usize)
        };
        let entry = ManifestEntry {
            frames_dir: resolve(fields[0]),
            landmarks_path: resolve(fields[1]),
            gt_path: resolve(fields[2]),
            fps: parse_rate(fields[3], "fps")?,
            gt_rate: parse_rate(fields[4], "gt_rate")?,
        };
        if !entry.frames_dir.is_dir() {
            return Err(entry_err(path, line_no, format!("frames directory {} not found", entry.frames_dir.display())));
        }
        for p in [&entry.landmarks_path, &entry.gt_path] {
            if !p.is_file() {
                return Err(entry_err(path, line_no, format!("file {} not found", p.display())));
            }
        }
        let n = list_frames(&entry.frames_dir)?.len();
        if n < entry.fps {
            return Err(entry_err(
                path,
                line_no,
                format!("{n} frames is less than one {}-frame window", entry.fps),
            ));
        }
        entries.push(entry);
    }
    Ok(DatasetManifest { entries })
}

/// Instantaneous heart rate sampled at a fixed rate.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthSeries {
    samples: Vec<f64>,
    rate: usize,
}

impl GroundTruthSeries {
    pub fn new(samples: Vec<f64>, rate: usize) -> Result<Self> {
        if rate == 0 {
            return Err(Error::Ingest("ground-truth rate must be positive".into()));
        }
        if let Some((i, v)) = samples
            .iter()
            .enumerate()
            .find(|(_, v)| !(GT_MIN_BPM..=GT_MAX_BPM).contains(*v))
        {
            return Err(Error::Ingest(format!(
                "ground-truth sample {i} = {v} bpm outside [{GT_MIN_BPM}, {GT_MAX_BPM}]"
            )));
        }
        Ok(GroundTruthSeries { samples, rate })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn rate(&self) -> usize {
        self.rate
    }

    /// Whole seconds covered.
    pub fn seconds(&self) -> usize {
        self.samples.len() / self.rate
    }
}

pub fn load_ground_truth(path: &Path, rate: usize) -> Result<GroundTruthSeries> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut samples = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let t = line.trim();
        if t.is_empty() || t.starts_with('#') {
            continue;
        }
        samples.push(t.parse::<f64>().map_err(|_| {
            Error::Ingest(format!("{}:{}: bad bpm value `{t}`", path.display(), i + 1))
        })?);
    }
    GroundTruthSeries::new(samples, rate)
        .map_err(|e| Error::Ingest(format!("{}: {e}", path.display())))
}

/// Mean of the samples falling in `[second, second + 1)`.
pub fn label_for_second(gt: &GroundTruthSeries, second: usize) -> Result<f64> {
    let start = second * gt.rate;
    let end = start + gt.rate;
    if end > gt.samples.len() {
        return Err(Error::Ingest(format!(
            "second {second} needs samples up to {end}, series has {}",
            gt.samples.len()
        )));
    }
    Ok(gt.samples[start..end].iter().sum::<f64>() / gt.rate as f64)
}

/// Clamp a label into the trainable range, warning when it moves.
pub fn clamp_label(bpm: f64) -> f64 {
    let c = bpm.clamp(LABEL_MIN_BPM, LABEL_MAX_BPM);
    if c != bpm {
        warn!("label {bpm:.2} bpm clamped to {c:.2}");
    }
    c
}

/// Parse a landmark file into one slot per frame. Frames without a line
/// stay `None`.
pub fn load_landmarks(path: &Path, frame_count: usize) -> Result<Vec<Option<LandmarkSet>>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_landmarks(&text, frame_count).map_err(|e| Error::Ingest(format!("{}: {e}", path.display())))
}

pub fn parse_landmarks(text: &str, frame_count: usize) -> Result<Vec<Option<LandmarkSet>>> {
    let mut out = vec![None; frame_count];
    for (i, line) in text.lines().enumerate() {
        let t = line.trim();
        if t.is_empty() || t.starts_with('#') {
            continue;
        }
        let mut it = t.split_whitespace();
        let bad = |msg: String| Error::Ingest(format!("line {}: {msg}", i + 1));
        let frame: usize = it
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| bad("missing frame index".into()))?;
        let coords: Vec<f64> = it
            .map(|s| s.parse::<f64>().map_err(|_| bad(format!("bad coordinate `{s}`"))))
            .collect::<Result<_>>()?;
        if coords.len() != 2 * LANDMARK_COUNT {
            return Err(bad(format!("expected {} coordinates, got {}", 2 * LANDMARK_COUNT, coords.len())));
        }
        if frame >= frame_count {
            return Err(bad(format!(
                "landmarks for frame {frame} but only {frame_count} frames exist"
            )));
        }
        let pts = coords.chunks_exact(2).map(|c| [c[0], c[1]]).collect();
        out[frame] = Some(LandmarkSet::new(pts).map_err(|e| bad(e.to_string()))?);
    }
    Ok(out)
}

pub fn format_landmarks_line(frame: usize, lm: &LandmarkSet) -> String {
    let mut s = frame.to_string();
    for p in lm.points() {
        s.push_str(&format!(" {} {}", p[0], p[1]));
    }
    s
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledWindow {
    pub window_index: usize,
    pub roi_window: RoiWindow,
    pub label_bpm: f64,
}

/// Windows of one recording together with those that were dropped.
#[derive(Debug, Clone, Default)]
pub struct EntryWindows {
    pub windows: Vec<LabeledWindow>,
    pub skipped: Vec<(usize, RoiRejection)>,
}

/// Number of complete windows in `frame_count` frames.
pub fn window_count(frame_count: usize, fps: usize) -> usize {
    frame_count / fps
}

/// Cut a recording into disjoint one-second windows, trailing partial
/// second dropped. Windows whose ROI is rejected are reported in `skipped`.
pub fn windows(entry: &ManifestEntry, idx: &RoiIndices) -> Result<EntryWindows> {
    let frame_paths = list_frames(&entry.frames_dir)?;
    let landmarks = load_landmarks(&entry.landmarks_path, frame_paths.len())?;
    let gt = load_ground_truth(&entry.gt_path, entry.gt_rate)?;
    windows_from_parts(&frame_paths, &landmarks, &gt, entry.fps, idx, |p| read_frame(p))
}

/// Core of [`windows`], with frame loading injected so in-memory sources
/// share the same partitioning and labelling.
pub fn windows_from_parts<F, T>(
    frames: &[T],
    landmarks: &[Option<LandmarkSet>],
    gt: &GroundTruthSeries,
    fps: usize,
    idx: &RoiIndices,
    mut load: F,
) -> Result<EntryWindows>
where
    F: FnMut(&T) -> Result<crate::image::RgbImage>,
{
    if fps == 0 {
        return Err(Error::Ingest("fps must be positive".into()));
    }
    if frames.len() != landmarks.len() {
        return Err(Error::Ingest(format!(
            "{} frames but {} landmark slots",
            frames.len(),
            landmarks.len()
        )));
    }
    let mut out = EntryWindows::default();
    for second in 0..window_count(frames.len(), fps) {
        let range = second * fps..(second + 1) * fps;
        let label = clamp_label(label_for_second(gt, second)?);
        let lms = &landmarks[range.clone()];
        if let Some(frame) = lms.iter().position(Option::is_none) {
            let r = RoiRejection::MissingLandmarks { frame };
            warn!("window {second} skipped: {r}");
            out.skipped.push((second, r));
            continue;
        }
        let imgs = frames[range].iter().map(&mut load).collect::<Result<Vec<_>>>()?;
        match freeze_window(&imgs, lms, fps, second, idx) {
            Ok(roi_window) => out.windows.push(LabeledWindow {
                window_index: second,
                roi_window,
                label_bpm: label,
            }),
            Err(Error::Roi(r)) => {
                warn!("window {second} skipped: {r}");
                out.skipped.push((second, r));
            }
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}
