//! Artifact-level steps shared by the CLI and the HTTP service, so both emit
//! the same bytes for the same inputs.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::condition::{condition_tracks, make_training_condition, rasterize_tracks, strokes_to_tracks, ConditionTensors, SamplerConfig};
use crate::error::{Error, Result};
use crate::grid::{BitMask2D, BitMaskSeq, FlowField, Grid, VideoClip};
use crate::io::{
    clip_files, decode_mask_pgm, decode_png_rgb, encode_mask_pgm, encode_png_rgb, flow_files, flow_name, numbered_files, read_file, read_flow_dir, traj_name,
    TrajectoryFile,
};
use crate::metrics::{evaluate, FlowTracker, HistogramEmbedder, MetricsReport};
use crate::propagate::{densify, warp_clip, DensifyConfig};
use crate::tracks::{Point, TrackSet};

pub const TRACKS_FILE: &str = "tracks.json";

pub fn mask_name(i: usize) -> String {
    format!("mask_{:04}.pgm", i + 1)
}

/// Settings for the interactive (stroke + brush) path.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InferConfig {
    pub k: usize,
    #[serde(rename = "L")]
    pub frames: usize,
    pub threshold: f64,
    pub power: f64,
}

impl Default for InferConfig {
    fn default() -> Self {
        Self {
            k: 8,
            frames: 16,
            threshold: 1.0,
            power: DensifyConfig::default().power,
        }
    }
}

impl InferConfig {
    pub fn parse(bytes: &[u8]) -> Result<Self> {
        let cfg: Self = serde_json::from_slice(bytes).map_err(|e| Error::format("config", e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::format("config.k", "must be at least 1"));
        }
        if self.frames < 2 {
            return Err(Error::format("config.L", "must be at least 2"));
        }
        if !(self.threshold >= 0.0 && self.threshold.is_finite()) {
            return Err(Error::format("config.threshold", "must be non-negative"));
        }
        if !(self.power > 0.0 && self.power.is_finite()) {
            return Err(Error::format("config.power", "must be positive"));
        }
        Ok(())
    }

    pub fn densify(&self) -> DensifyConfig {
        DensifyConfig { power: self.power }
    }
}

/// Condition tensors plus the reference tracks they encode.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionOutput {
    pub cond: ConditionTensors,
    pub tracks: TrackSet,
}

impl ConditionOutput {
    /// `traj_NNNN.flo`, `mask_NNNN.pgm` and `tracks.json`.
    pub fn files(&self) -> Result<Vec<(String, Vec<u8>)>> {
        let mut files = flow_files(&self.cond.traj, traj_name)?;
        for (i, m) in self.cond.mask_seq.masks().iter().enumerate() {
            files.push((mask_name(i), encode_mask_pgm(m)));
        }
        files.push((TRACKS_FILE.to_string(), TrajectoryFile::from_track_set(&self.tracks).to_json()));
        Ok(files)
    }
}

/// Round trajectories to the `f32` precision of the flow files, so written and
/// in-memory conditions agree exactly.
fn quantize(cond: ConditionTensors) -> Result<ConditionTensors> {
    ConditionTensors::new(quantize_flow(&cond.traj)?, cond.mask_seq)
}

fn quantize_flow(f: &FlowField) -> Result<FlowField> {
    let data = f.as_slice().iter().map(|&v| f64::from(v as f32)).collect();
    FlowField::from_vec(f.len(), f.height(), f.width(), data)
}

pub fn train_condition(flow: &FlowField, vis: &BitMaskSeq, cfg: &SamplerConfig) -> Result<ConditionOutput> {
    let cond = quantize(make_training_condition(flow, vis, cfg)?)?;
    let tracks = condition_tracks(&cond, cfg.k);
    Ok(ConditionOutput { cond, tracks })
}

pub fn infer_condition(strokes: &[Vec<Point>], frames: usize, k: usize, brush: &BitMask2D) -> Result<ConditionOutput> {
    let tracks = strokes_to_tracks(strokes, frames, brush.height(), brush.width())?;
    let cond = quantize(rasterize_tracks(&tracks, k, brush)?)?;
    Ok(ConditionOutput { cond, tracks })
}

/// Centered window whose sides are the largest multiples of `multiple` that fit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Crop {
    pub x0: usize,
    pub y0: usize,
    pub width: usize,
    pub height: usize,
}

impl Crop {
    pub fn center(height: usize, width: usize, multiple: usize) -> Result<Self> {
        let m = multiple.max(1);
        let (h, w) = (height / m * m, width / m * m);
        if h == 0 || w == 0 {
            return Err(Error::shape(format!("{height}x{width} is smaller than {m}x{m}")));
        }
        Ok(Self {
            x0: (width - w) / 2,
            y0: (height - h) / 2,
            width: w,
            height: h,
        })
    }

    pub fn is_identity(&self, height: usize, width: usize) -> bool {
        self.height == height && self.width == width
    }

    pub fn grid(&self, g: &Grid) -> Grid {
        let c = g.channels();
        let mut data = Vec::with_capacity(self.height * self.width * c);
        for y in self.y0..self.y0 + self.height {
            for x in self.x0..self.x0 + self.width {
                data.extend_from_slice(g.pixel(x, y));
            }
        }
        Grid::from_vec(self.height, self.width, c, data).expect("crop fits")
    }

    pub fn clip(&self, clip: &VideoClip) -> VideoClip {
        VideoClip::new(clip.frames().iter().map(|f| self.grid(f)).collect(), clip.frame_rate).expect("crop fits")
    }

    /// Frame-1-relative displacements are translation invariant, so values carry over.
    pub fn flow(&self, flow: &FlowField) -> FlowField {
        let frames: Vec<Grid> = (0..flow.len()).map(|i| self.grid(&flow.frame_grid(i))).collect();
        FlowField::from_frames(&frames).expect("crop fits")
    }

    pub fn masks(&self, seq: &BitMaskSeq) -> BitMaskSeq {
        let masks = seq
            .masks()
            .iter()
            .map(|m| BitMask2D::from_fn(self.height, self.width, |x, y| m.get(x + self.x0, y + self.y0)))
            .collect();
        BitMaskSeq::new(masks).expect("crop fits")
    }
}

/// Read a directory written from [`ConditionOutput::files`].
pub fn read_condition_dir(dir: &Path) -> Result<ConditionTensors> {
    let traj = read_flow_dir(dir, "traj_")?.ok_or_else(|| Error::File {
        path: dir.to_path_buf(),
        message: "no traj_NNNN.flo files".into(),
    })?;
    let masks = numbered_files(dir, "mask_", ".pgm")?
        .iter()
        .map(|p| decode_mask_pgm(&read_file(p)?).map_err(|e| e.in_file(p)))
        .collect::<Result<Vec<_>>>()?;
    let seq = BitMaskSeq::new(masks).map_err(|e| e.in_file(dir))?;
    ConditionTensors::new(traj, seq).map_err(|e| e.in_file(dir))
}

#[derive(Debug, Clone, PartialEq)]
pub struct PreviewOutput {
    pub clip: VideoClip,
    pub flow: FlowField,
}

impl PreviewOutput {
    /// Frames, then the dense flow when `with_flow`.
    pub fn files(&self, with_flow: bool) -> Result<Vec<(String, Vec<u8>)>> {
        let mut files = clip_files(&self.clip)?;
        if with_flow {
            files.extend(flow_files(&self.flow, flow_name)?);
        }
        Ok(files)
    }
}

/// Densify and warp. The flow is held at `f32` and the frames at 8-bit
/// precision, matching what the files store.
pub fn run_preview(first: &Grid, cond: &ConditionTensors, cfg: &DensifyConfig) -> Result<PreviewOutput> {
    if first.height() != cond.height() || first.width() != cond.width() || first.channels() != 3 {
        return Err(Error::shape(format!(
            "reference frame {}x{} does not match condition {}x{}",
            first.width(),
            first.height(),
            cond.width(),
            cond.height()
        )));
    }
    let dense = densify(cond, cfg)?;
    let flow = quantize_flow(&dense)?;
    let warped = warp_clip(first, &flow)?;
    let frames = warped
        .frames()
        .iter()
        .map(|f| decode_png_rgb(&encode_png_rgb(f)?))
        .collect::<Result<Vec<_>>>()?;
    let clip = VideoClip::new(frames, warped.frame_rate)?;
    Ok(PreviewOutput { clip, flow })
}

/// Metrics of a preview against reference tracks, tracking with its own flow.
pub fn oracle_metrics(reference: &TrackSet, out: &PreviewOutput) -> Result<MetricsReport> {
    let tracker = FlowTracker { flow: out.flow.clone() };
    evaluate(reference, &out.clip, &tracker, &HistogramEmbedder, Some(&out.flow))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io::write_files;

    fn brush(h: usize, w: usize) -> BitMask2D {
        BitMask2D::from_fn(h, w, |x, y| (4..12).contains(&x) && (4..12).contains(&y))
    }

    #[test]
    fn center_crop_keeps_multiples() {
        let c = Crop::center(21, 30, 8).unwrap();
        assert_eq!(c, Crop { x0: 3, y0: 2, width: 24, height: 16 });
        assert!(Crop::center(16, 24, 8).unwrap().is_identity(16, 24));
        assert!(Crop::center(5, 30, 8).is_err());
        let g = Grid::from_vec(3, 4, 1, (0..12).map(f64::from).collect()).unwrap();
        let inner = Crop { x0: 1, y0: 1, width: 2, height: 2 }.grid(&g);
        assert_eq!(inner.as_slice(), &[5.0, 6.0, 9.0, 10.0]);
    }

    #[test]
    fn condition_dir_round_trip() {
        let strokes = vec![vec![Point::new(5.0, 5.0), Point::new(9.0, 6.0)]];
        let out = infer_condition(&strokes, 4, 4, &brush(16, 16)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_files(dir.path(), &out.files().unwrap()).unwrap();
        assert!(read_condition_dir(dir.path()).unwrap() == out.cond);
        let names: Vec<String> = out.files().unwrap().into_iter().map(|(n, _)| n).collect();
        assert_eq!(names.len(), 4 + 4 + 1);
        assert_eq!(names[0], "traj_0001.flo");
        assert_eq!(names[4], "mask_0001.pgm");
    }

    #[test]
    fn stroke_preview_tracks_itself() {
        let strokes = vec![vec![Point::new(8.0, 8.0), Point::new(11.0, 8.0)]];
        let out = infer_condition(&strokes, 4, 4, &brush(16, 16)).unwrap();
        let first = Grid::from_vec(16, 16, 3, (0..16 * 16 * 3).map(|i| (i % 7) as f64 / 7.0).collect()).unwrap();
        let p = run_preview(&first, &out.cond, &DensifyConfig::default()).unwrap();
        let m = oracle_metrics(&out.tracks, &p).unwrap();
        assert!(m.md_vid.unwrap() < 1e-5);
    }

    #[test]
    fn empty_brush_with_no_strokes_is_static() {
        let out = infer_condition(&[], 5, 4, &BitMask2D::zeros(8, 8)).unwrap();
        let first = Grid::from_vec(8, 8, 3, (0..8 * 8 * 3).map(|i| (i % 5) as f64 / 5.0).collect()).unwrap();
        let p = run_preview(&first, &out.cond, &DensifyConfig::default()).unwrap();
        assert_eq!(p.clip.len(), 5);
        assert!(p.clip.frames().iter().all(|f| f == &first));
        let nonempty = infer_condition(&[], 5, 4, &brush(16, 16)).unwrap();
        let first16 = Grid::zeros(16, 16, 3);
        assert!(matches!(
            run_preview(&first16, &nonempty.cond, &DensifyConfig::default()),
            Err(Error::UnconstrainedMotion)
        ));
    }

    #[test]
    fn config_defaults_and_validation() {
        assert_eq!(InferConfig::parse(b"{}").unwrap(), InferConfig::default());
        assert!(InferConfig::parse(br#"{"k":0}"#).is_err());
        assert!(InferConfig::parse(br#"{"bogus":1}"#).is_err());
        assert_eq!(InferConfig::parse(br#"{"L":4}"#).unwrap().frames, 4);
    }
}
