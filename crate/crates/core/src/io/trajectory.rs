//! Trajectory JSON and run-length mask JSON.
//!
//! ```json
//! {"version": 1, "L": 16, "tracks": [{"points": [[10, 10], [25, 10]]}]}
//! ```
//!
//! A track with exactly `L` points lists one position per frame. Any other
//! point count is a polyline stroke, resampled to `L` points by arc length.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::BitMask2D;
use crate::tracks::{resample_polyline, Point, Track, TrackSet};

pub const TRAJECTORY_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrajectoryFile {
    pub version: u32,
    #[serde(rename = "L")]
    pub frames: usize,
    pub tracks: Vec<TrackEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrackEntry {
    pub points: Vec<[f64; 2]>,
}

impl TrajectoryFile {
    pub fn parse(bytes: &[u8]) -> Result<Self> {
        let file: TrajectoryFile = serde_json::from_slice(bytes)
            .map_err(|e| Error::format("trajectory", e.to_string()))?;
        file.validate()?;
        Ok(file)
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != TRAJECTORY_VERSION {
            return Err(Error::format(
                "trajectory.version",
                format!("unsupported version {}", self.version),
            ));
        }
        if self.frames == 0 {
            return Err(Error::format("trajectory.L", "must be at least 1"));
        }
        for (i, t) in self.tracks.iter().enumerate() {
            if t.points.is_empty() {
                return Err(Error::format(
                    format!("trajectory.tracks[{i}].points"),
                    "empty stroke",
                ));
            }
            if t.points.iter().flatten().any(|v| !v.is_finite()) {
                return Err(Error::format(
                    format!("trajectory.tracks[{i}].points"),
                    "non-finite coordinate",
                ));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Vec<u8> {
        let mut out = serde_json::to_vec_pretty(self).expect("trajectory serialization");
        out.push(b'\n');
        out
    }

    pub fn strokes(&self) -> Vec<Vec<Point>> {
        self.tracks
            .iter()
            .map(|t| t.points.iter().map(|p| Point::new(p[0], p[1])).collect())
            .collect()
    }

    /// Per-frame tracks: `L`-point entries verbatim, other strokes arc-length resampled.
    pub fn to_track_set(&self) -> Result<TrackSet> {
        let tracks = self
            .strokes()
            .iter()
            .map(|s| stroke_positions(s, self.frames).and_then(Track::new))
            .collect::<Result<Vec<_>>>()?;
        TrackSet::new(self.frames, tracks)
    }

    pub fn from_track_set(set: &TrackSet) -> Self {
        Self {
            version: TRAJECTORY_VERSION,
            frames: set.frames(),
            tracks: set
                .tracks()
                .iter()
                .map(|t| TrackEntry {
                    points: t.positions().iter().map(|p| [p.x, p.y]).collect(),
                })
                .collect(),
        }
    }
}

/// Per-frame positions for one stroke, see the module docs.
pub fn stroke_positions(stroke: &[Point], frames: usize) -> Result<Vec<Point>> {
    if stroke.len() == frames {
        Ok(stroke.to_vec())
    } else {
        resample_polyline(stroke, frames)
    }
}

/// Row-major runs of ones: `{"width": W, "height": H, "runs": [[start, length], ...]}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunLengthMask {
    pub width: usize,
    pub height: usize,
    pub runs: Vec<[usize; 2]>,
}

pub const MAX_MASK_PIXELS: usize = 1 << 26;

impl RunLengthMask {
    pub fn parse(bytes: &[u8]) -> Result<Self> {
        serde_json::from_slice(bytes).map_err(|e| Error::format("mask", e.to_string()))
    }

    pub fn from_mask(mask: &BitMask2D) -> Self {
        let mut runs = Vec::new();
        let mut start = None;
        for (i, &b) in mask.bits().iter().enumerate() {
            match (b != 0, start) {
                (true, None) => start = Some(i),
                (false, Some(s)) => {
                    runs.push([s, i - s]);
                    start = None;
                }
                _ => {}
            }
        }
        if let Some(s) = start {
            runs.push([s, mask.bits().len() - s]);
        }
        Self {
            width: mask.width(),
            height: mask.height(),
            runs,
        }
    }

    pub fn to_mask(&self) -> Result<BitMask2D> {
        let n = self
            .width
            .checked_mul(self.height)
            .filter(|&n| n > 0 && n <= MAX_MASK_PIXELS)
            .ok_or_else(|| Error::format("mask.width", "dimensions out of range"))?;
        let mut bits = vec![0u8; n];
        for (i, &[start, len]) in self.runs.iter().enumerate() {
            let end = start
                .checked_add(len)
                .filter(|&e| e <= n)
                .ok_or_else(|| Error::format(format!("mask.runs[{i}]"), "run exceeds mask"))?;
            bits[start..end].iter_mut().for_each(|b| *b = 1);
        }
        BitMask2D::from_bits(self.height, self.width, bits)
    }
}
