//! Cheek region of interest from 68 facial landmarks.
//!
//! The rectangle spans horizontally between two jaw-line points and
//! vertically from the lowest of four lower-eyelid points down to the
//! highest of two upper-lip points, so it never contains the eyes or the
//! mouth. Within one window the rectangle is computed once, from the first
//! frame, and reused for every frame.

use std::fmt;

use crate::error::{Error, Result};
use crate::image::RgbImage;

pub const LANDMARK_COUNT: usize = 68;

/// 68 facial points in pixel coordinates, addressed 1-based.
#[derive(Debug, Clone, PartialEq)]
pub struct LandmarkSet {
    points: Vec<[f64; 2]>,
}

impl LandmarkSet {
    pub fn new(points: Vec<[f64; 2]>) -> Result<Self> {
        if points.len() != LANDMARK_COUNT {
            return Err(Error::Format(format!(
                "expected {LANDMARK_COUNT} landmarks, got {}",
                points.len()
            )));
        }
        for (i, p) in points.iter().enumerate() {
            if !p[0].is_finite() || !p[1].is_finite() || p[0] < 0.0 || p[1] < 0.0 {
                return Err(Error::Format(format!(
                    "landmark {} has invalid coordinates ({}, {})",
                    i + 1,
                    p[0],
                    p[1]
                )));
            }
        }
        Ok(LandmarkSet { points })
    }

    /// Landmark `index` (1-based).
    pub fn point(&self, index: usize) -> [f64; 2] {
        self.points[index - 1]
    }

    pub fn points(&self) -> &[[f64; 2]] {
        &self.points
    }

    pub fn translated(&self, dx: f64, dy: f64) -> Result<Self> {
        LandmarkSet::new(self.points.iter().map(|p| [p[0] + dx, p[1] + dy]).collect())
    }
}

/// Which landmarks bound the cheek rectangle (1-based indices).
///
/// 68-point annotation schemes number their points differently; the
/// defaults follow the numbering the ROI formula was published with.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RoiIndices {
    pub left: usize,
    pub right: usize,
    pub eye_bottom: [usize; 4],
    pub lip_top: [usize; 2],
}

impl Default for RoiIndices {
    fn default() -> Self {
        RoiIndices {
            left: 13,
            right: 16,
            eye_bottom: [40, 41, 46, 47],
            lip_top: [50, 52],
        }
    }
}

impl RoiIndices {
    pub fn validate(&self) -> Result<()> {
        let all = [self.left, self.right]
            .into_iter()
            .chain(self.eye_bottom)
            .chain(self.lip_top);
        for i in all {
            if i == 0 || i > LANDMARK_COUNT {
                return Err(Error::Format(format!("landmark index {i} out of 1..=68")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct RoiRect {
    pub x_lt: usize,
    pub y_lt: usize,
    pub width: usize,
    pub height: usize,
}

/// Reasons a window is dropped rather than processed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RoiRejection {
    Degenerate { width: i64, height: i64 },
    MissingLandmarks { frame: usize },
    OutOfBounds { frame: usize, rect: RoiRect },
    WrongFrameCount { expected: usize, got: usize },
}

impl fmt::Display for RoiRejection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RoiRejection::Degenerate { width, height } => {
                write!(f, "degenerate rectangle {width}x{height}")
            }
            RoiRejection::MissingLandmarks { frame } => {
                write!(f, "frame {frame} has no landmarks")
            }
            RoiRejection::OutOfBounds { frame, rect } => write!(
                f,
                "rectangle ({}, {}, {}x{}) exceeds bounds of frame {frame}",
                rect.x_lt, rect.y_lt, rect.width, rect.height
            ),
            RoiRejection::WrongFrameCount { expected, got } => {
                write!(f, "window needs {expected} frames, got {got}")
            }
        }
    }
}

impl std::error::Error for RoiRejection {}

#[inline]
fn round_half_up(v: f64) -> i64 {
    (v + 0.5).floor() as i64
}

/// Cheek rectangle for one landmark set.
pub fn roi_from_landmarks(lm: &LandmarkSet, idx: &RoiIndices) -> Result<RoiRect> {
    let x = |i: usize| round_half_up(lm.point(i)[0]);
    let y = |i: usize| round_half_up(lm.point(i)[1]);

    let x_lt = x(idx.left);
    let y_lt = idx.eye_bottom.iter().map(|&i| y(i)).max().unwrap_or(0);
    let width = x(idx.right) - x_lt;
    let height = idx.lip_top.iter().map(|&i| y(i)).min().unwrap_or(0) - y_lt;

    if width <= 0 || height <= 0 {
        return Err(RoiRejection::Degenerate { width, height }.into());
    }
    Ok(RoiRect {
        x_lt: x_lt as usize,
        y_lt: y_lt as usize,
        width: width as usize,
        height: height as usize,
    })
}

/// One second of equally sized crops taken at a fixed rectangle.
#[derive(Debug, Clone, PartialEq)]
pub struct RoiWindow {
    crops: Vec<RgbImage>,
    rect: RoiRect,
    second: usize,
}

impl RoiWindow {
    /// Wrap pre-cut crops. All crops must share one size.
    pub fn from_crops(crops: Vec<RgbImage>, rect: RoiRect, second: usize) -> Result<Self> {
        if crops.is_empty() {
            return Err(RoiRejection::WrongFrameCount {
                expected: 1,
                got: 0,
            }
            .into());
        }
        if crops
            .iter()
            .any(|c| c.width() != rect.width || c.height() != rect.height)
        {
            return Err(Error::Format("crops differ in size from the window rect".into()));
        }
        Ok(RoiWindow {
            crops,
            rect,
            second,
        })
    }

    pub fn crops(&self) -> &[RgbImage] {
        &self.crops
    }

    pub fn rect(&self) -> RoiRect {
        self.rect
    }

    pub fn second(&self) -> usize {
        self.second
    }

    pub fn len(&self) -> usize {
        self.crops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.crops.is_empty()
    }
}

/// Crop every frame of a window at the rectangle of its first frame.
///
/// `frames` and `landmarks` must both hold exactly `fps` entries. A frame
/// without landmarks, or a rectangle leaving any frame, rejects the window.
pub fn freeze_window(
    frames: &[RgbImage],
    landmarks: &[Option<LandmarkSet>],
    fps: usize,
    second: usize,
    idx: &RoiIndices,
) -> Result<RoiWindow> {
    if frames.len() != fps || landmarks.len() != fps {
        return Err(RoiRejection::WrongFrameCount {
            expected: fps,
            got: frames.len().min(landmarks.len()),
        }
        .into());
    }
    if let Some(frame) = landmarks.iter().position(Option::is_none) {
        return Err(RoiRejection::MissingLandmarks { frame }.into());
    }
    let first = landmarks[0].as_ref().expect("checked above");
    let rect = roi_from_landmarks(first, idx)?;

    let crops = frames
        .iter()
        .enumerate()
        .map(|(frame, img)| {
            img.crop(rect.x_lt, rect.y_lt, rect.width, rect.height)
                .ok_or(RoiRejection::OutOfBounds { frame, rect })
        })
        .collect::<std::result::Result<Vec<_>, _>>()?;

    Ok(RoiWindow {
        crops,
        rect,
        second,
    })
}
