//! Region-wise trajectory and motion-mask conditioning.
//!
//! Training conditions come from dense flow plus visibility: the visibility
//! masks are intersected over time, the flow is masked by the intersection,
//! and only the flow inside a sparse random selection of `k × k` regions is
//! kept. The motion mask marks pixels whose mean flow magnitude exceeds a
//! threshold and is repeated over all frames.
//!
//! Inference conditions come from user strokes and a brush mask: every
//! stroke's displacements are painted into the `k`-aligned block containing
//! its start point, and the brush becomes the motion mask.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{flow_magnitude_mean, mask_and, BitMask2D, BitMaskSeq, FlowField};
use crate::io::trajectory::stroke_positions;
use crate::tracks::{Point, Track, TrackSet};

pub use crate::tracks::resample_polyline;

/// How the drawn ratio `r_m` maps to a region's selection probability.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RatioSemantics {
    /// `r_m` is the fraction of regions masked out; regions are kept with `1 - r_m`.
    #[default]
    MaskOut,
    /// `r_m` is the fraction of regions kept.
    Keep,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerConfig {
    /// Region size in pixels.
    pub k: usize,
    pub r_min: f64,
    /// Motion-mask cutoff on the mean flow magnitude, in px.
    pub threshold: f64,
    pub seed: u64,
    pub semantics: RatioSemantics,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            k: 8,
            r_min: 0.95,
            threshold: 1.0,
            seed: 0,
            semantics: RatioSemantics::MaskOut,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::format("k", "must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.r_min) {
            return Err(Error::format("r_min", "must lie in [0, 1]"));
        }
        if !(self.threshold > 0.0 && self.threshold.is_finite()) {
            return Err(Error::format("threshold", "must be positive"));
        }
        Ok(())
    }
}

/// `(H/k) × (W/k)` region selection with its realized ratio.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionSelectionMask {
    pub bits: BitMask2D,
    pub k: usize,
    pub ratio: f64,
}

/// Region-wise trajectory `L × H × W × 2` and motion mask sequence `L × H × W × 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionTensors {
    pub traj: FlowField,
    pub mask_seq: BitMaskSeq,
}

impl ConditionTensors {
    pub fn new(traj: FlowField, mask_seq: BitMaskSeq) -> Result<Self> {
        if traj.len() != mask_seq.len()
            || traj.height() != mask_seq.height()
            || traj.width() != mask_seq.width()
        {
            return Err(Error::shape(format!(
                "trajectory {}x{}x{} does not match mask {}x{}x{}",
                traj.len(),
                traj.height(),
                traj.width(),
                mask_seq.len(),
                mask_seq.height(),
                mask_seq.width()
            )));
        }
        if mask_seq.masks().iter().any(|m| m != mask_seq.mask(0)) {
            return Err(Error::invalid("motion mask must be constant over time"));
        }
        Ok(Self { traj, mask_seq })
    }

    pub fn zeros(len: usize, height: usize, width: usize) -> Self {
        Self {
            traj: FlowField::zeros(len, height, width),
            mask_seq: repeat_motion_mask(&BitMask2D::zeros(height, width), len),
        }
    }

    pub fn len(&self) -> usize {
        self.traj.len()
    }

    pub fn is_empty(&self) -> bool {
        self.traj.is_empty()
    }

    pub fn height(&self) -> usize {
        self.traj.height()
    }

    pub fn width(&self) -> usize {
        self.traj.width()
    }

    pub fn motion_mask(&self) -> &BitMask2D {
        self.mask_seq.mask(0)
    }
}

/// Temporal intersection `M_g = Π_i M^i`.
pub fn global_visibility(vis: &BitMaskSeq) -> BitMask2D {
    let mut acc = vis.mask(0).clone();
    for m in &vis.masks()[1..] {
        acc = mask_and(&acc, m).expect("sequence masks share a shape");
    }
    acc
}

/// Multiply both channels of every frame by `mg`.
pub fn mask_flow(flow: &FlowField, mg: &BitMask2D) -> Result<FlowField> {
    if flow.height() != mg.height() || flow.width() != mg.width() {
        return Err(Error::shape(format!(
            "flow is {}x{}, mask is {}x{}",
            flow.height(),
            flow.width(),
            mg.height(),
            mg.width()
        )));
    }
    let mut out = flow.clone();
    for i in 0..flow.len() {
        for (d, &b) in out.frame_mut(i).chunks_exact_mut(2).zip(mg.bits()) {
            let s = f64::from(b);
            d[0] *= s;
            d[1] *= s;
        }
    }
    Ok(out)
}

/// Draw `r_m ~ U[r_min, 1]`, then keep each region independently.
pub fn sample_region_mask(hk: usize, wk: usize, cfg: &SamplerConfig) -> RegionSelectionMask {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let ratio = if cfg.r_min >= 1.0 {
        1.0
    } else {
        rng.random_range(cfg.r_min..=1.0)
    };
    sample_region_mask_with_ratio(hk, wk, cfg.k, ratio, cfg.semantics, &mut rng)
}

/// Region sampling with a pinned ratio.
pub fn sample_region_mask_with_ratio(
    hk: usize,
    wk: usize,
    k: usize,
    ratio: f64,
    semantics: RatioSemantics,
    rng: &mut impl Rng,
) -> RegionSelectionMask {
    let keep = match semantics {
        RatioSemantics::MaskOut => 1.0 - ratio,
        RatioSemantics::Keep => ratio,
    };
    let bits = BitMask2D::from_fn(hk, wk, |_, _| rng.random::<f64>() < keep);
    RegionSelectionMask { bits, k, ratio }
}

/// Replicate each region bit over its `k × k` pixel block.
pub fn pad_region_mask(msel: &RegionSelectionMask) -> BitMask2D {
    let k = msel.k;
    BitMask2D::from_fn(msel.bits.height() * k, msel.bits.width() * k, |x, y| {
        msel.bits.get(x / k, y / k)
    })
}

/// `T_s = {f_m^i · Pad(M_sel)}`.
pub fn region_trajectories(masked_flow: &FlowField, msel: &RegionSelectionMask) -> Result<FlowField> {
    let k = msel.k;
    let (h, w) = (masked_flow.height(), masked_flow.width());
    if k == 0 || h % k != 0 || w % k != 0 {
        return Err(Error::shape(format!("{h}x{w} is not divisible by k = {k}")));
    }
    if msel.bits.height() != h / k || msel.bits.width() != w / k {
        return Err(Error::shape(format!(
            "selection grid {}x{} does not tile {h}x{w} with k = {k}",
            msel.bits.height(),
            msel.bits.width()
        )));
    }
    mask_flow(masked_flow, &pad_region_mask(msel))
}

/// `1` where the mean flow magnitude exceeds `cfg.threshold`.
pub fn motion_mask(flow: &FlowField, cfg: &SamplerConfig) -> BitMask2D {
    let avg = flow_magnitude_mean(flow);
    let bits = avg
        .values()
        .iter()
        .map(|&v| u8::from(v > cfg.threshold))
        .collect();
    BitMask2D::from_bits(flow.height(), flow.width(), bits).expect("shape from flow")
}

pub fn repeat_motion_mask(m: &BitMask2D, len: usize) -> BitMaskSeq {
    BitMaskSeq::new(vec![m.clone(); len.max(1)]).expect("identical masks")
}

/// Training-time conditions from dense flow and visibility.
pub fn make_training_condition(
    flow: &FlowField,
    vis: &BitMaskSeq,
    cfg: &SamplerConfig,
) -> Result<ConditionTensors> {
    cfg.validate()?;
    if flow.len() != vis.len() || flow.height() != vis.height() || flow.width() != vis.width() {
        return Err(Error::shape(format!(
            "flow {}x{}x{} does not match visibility {}x{}x{}",
            flow.len(),
            flow.height(),
            flow.width(),
            vis.len(),
            vis.height(),
            vis.width()
        )));
    }
    let (h, w, k) = (flow.height(), flow.width(), cfg.k);
    if h % k != 0 || w % k != 0 {
        return Err(Error::shape(format!("{h}x{w} is not divisible by k = {k}")));
    }
    let mg = global_visibility(vis);
    let masked = mask_flow(flow, &mg)?;
    let msel = sample_region_mask(h / k, w / k, cfg);
    let traj = region_trajectories(&masked, &msel)?;
    let mask_seq = repeat_motion_mask(&motion_mask(flow, cfg), flow.len());
    ConditionTensors::new(traj, mask_seq)
}

/// Per-frame displacement of each stroke in the `k`-aligned block containing
/// its start point.
///
/// Strokes are resampled to `len` points (see [`stroke_positions`]). Later
/// strokes overwrite earlier ones when they share a block.
pub fn rasterize_user_trajectory(
    strokes: &[Vec<Point>],
    len: usize,
    k: usize,
    brush: &BitMask2D,
) -> Result<ConditionTensors> {
    let tracks = strokes_to_tracks(strokes, len, brush.height(), brush.width())?;
    rasterize_tracks(&tracks, k, brush)
}

/// Validate strokes against the canvas and resample them to per-frame tracks.
pub fn strokes_to_tracks(
    strokes: &[Vec<Point>],
    len: usize,
    height: usize,
    width: usize,
) -> Result<TrackSet> {
    if len < 2 {
        return Err(Error::invalid("user trajectories need at least 2 frames"));
    }
    let mut tracks = Vec::with_capacity(strokes.len());
    for (i, s) in strokes.iter().enumerate() {
        if s.is_empty() {
            return Err(Error::format(format!("tracks[{i}]"), "empty stroke"));
        }
        if s.iter().any(|p| {
            !(p.x >= 0.0 && p.y >= 0.0 && p.x <= (width - 1) as f64 && p.y <= (height - 1) as f64)
        }) {
            return Err(Error::format(
                format!("tracks[{i}]"),
                format!("stroke leaves the {width}x{height} canvas"),
            ));
        }
        tracks.push(Track::new(stroke_positions(s, len)?)?);
    }
    TrackSet::new(len, tracks)
}

/// Paint per-frame tracks into `k × k` blocks; the brush becomes the motion mask.
pub fn rasterize_tracks(tracks: &TrackSet, k: usize, brush: &BitMask2D) -> Result<ConditionTensors> {
    let (h, w, len) = (brush.height(), brush.width(), tracks.frames());
    if k == 0 || h % k != 0 || w % k != 0 {
        return Err(Error::shape(format!("{h}x{w} is not divisible by k = {k}")));
    }
    let mut data = vec![0.0; len * h * w * 2];
    for track in tracks.tracks() {
        let start = track.start();
        let bx = (start.x.max(0.0) as usize / k).min(w / k - 1) * k;
        let by = (start.y.max(0.0) as usize / k).min(h / k - 1) * k;
        for i in 0..len {
            let d = track.displacement(i);
            for y in by..by + k {
                for x in bx..bx + k {
                    let j = ((i * h + y) * w + x) * 2;
                    data[j] = d.x;
                    data[j + 1] = d.y;
                }
            }
        }
    }
    let traj = FlowField::from_vec(len, h, w, data)?;
    ConditionTensors::new(traj, repeat_motion_mask(brush, len))
}

/// Training-mode reference tracks: one per selected region, starting at the
/// region's top-left pixel and carrying the trajectory stored there.
pub fn condition_tracks(cond: &ConditionTensors, k: usize) -> TrackSet {
    let (len, h, w) = (cond.len(), cond.height(), cond.width());
    let mut tracks = Vec::new();
    for by in (0..h).step_by(k.max(1)) {
        for bx in (0..w).step_by(k.max(1)) {
            let carries = (0..len).any(|i| cond.traj.at(i, bx, by) != [0.0, 0.0]);
            if !carries {
                continue;
            }
            let start = Point::new(bx as f64, by as f64);
            let positions = (0..len)
                .map(|i| {
                    let d = cond.traj.at(i, bx, by);
                    start + Point::new(d[0], d[1])
                })
                .collect();
            tracks.push(Track::new(positions).expect("finite"));
        }
    }
    TrackSet::new(len, tracks).expect("uniform length")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seq(masks: &[&[u8]], h: usize, w: usize) -> BitMaskSeq {
        BitMaskSeq::new(
            masks
                .iter()
                .map(|b| BitMask2D::from_bits(h, w, b.to_vec()).unwrap())
                .collect(),
        )
        .unwrap()
    }

    fn constant_flow(len: usize, h: usize, w: usize, d: [f64; 2]) -> FlowField {
        let mut data = vec![0.0; len * h * w * 2];
        for (j, v) in data.iter_mut().enumerate().skip(h * w * 2) {
            *v = d[j % 2];
        }
        FlowField::from_vec(len, h, w, data).unwrap()
    }

    #[test]
    fn global_visibility_examples() {
        let s = seq(&[&[1, 1, 1, 0], &[1, 0, 1, 1]], 2, 2);
        assert_eq!(global_visibility(&s).bits(), &[1, 0, 1, 0]);
        let s = seq(&[&[1, 1, 1, 1], &[1, 1, 1, 1]], 2, 2);
        assert_eq!(global_visibility(&s).count_ones(), 4);
        let s = seq(&[&[1, 1, 1, 1], &[0, 0, 0, 0], &[1, 1, 1, 1]], 2, 2);
        assert!(global_visibility(&s).is_empty());
    }

    #[test]
    fn mask_flow_examples() {
        let f = constant_flow(3, 3, 3, [1.5, -2.0]);
        assert_eq!(mask_flow(&f, &BitMask2D::ones(3, 3)).unwrap(), f);
        assert!(mask_flow(&f, &BitMask2D::zeros(3, 3))
            .unwrap()
            .as_slice()
            .iter()
            .all(|&v| v == 0.0));
        let single = BitMask2D::from_fn(3, 3, |x, y| x == 2 && y == 1);
        let m = mask_flow(&f, &single).unwrap();
        for i in 0..3 {
            for y in 0..3 {
                for x in 0..3 {
                    let expect = if x == 2 && y == 1 { f.at(i, x, y) } else { [0.0, 0.0] };
                    assert_eq!(m.at(i, x, y), expect);
                }
            }
        }
        assert!(mask_flow(&f, &BitMask2D::ones(2, 3)).is_err());
    }

    #[test]
    fn region_mask_ratio_extremes() {
        let cfg = SamplerConfig { r_min: 1.0, ..SamplerConfig::default() };
        let m = sample_region_mask(10, 10, &cfg);
        assert!(m.bits.is_empty());
        assert_eq!(m.ratio, 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let m = sample_region_mask_with_ratio(10, 10, 8, 0.0, RatioSemantics::MaskOut, &mut rng);
        assert_eq!(m.bits.count_ones(), 100);
    }

    #[test]
    fn keep_semantics_inverts_probability() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let m = sample_region_mask_with_ratio(4, 4, 1, 1.0, RatioSemantics::Keep, &mut rng);
        assert_eq!(m.bits.count_ones(), 16);
    }

    #[test]
    fn sampling_is_seeded() {
        let cfg = SamplerConfig { r_min: 0.3, seed: 9, ..SamplerConfig::default() };
        assert_eq!(sample_region_mask(6, 6, &cfg), sample_region_mask(6, 6, &cfg));
    }

    #[test]
    fn padding_examples() {
        let bits = BitMask2D::from_bits(2, 2, vec![1, 0, 0, 0]).unwrap();
        let id = pad_region_mask(&RegionSelectionMask { bits: bits.clone(), k: 1, ratio: 0.0 });
        assert_eq!(id, bits);
        let padded = pad_region_mask(&RegionSelectionMask { bits, k: 2, ratio: 0.0 });
        assert_eq!(
            padded.bits(),
            &[1, 1, 0, 0, 1, 1, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0]
        );
        let all = pad_region_mask(&RegionSelectionMask { bits: BitMask2D::ones(2, 3), k: 4, ratio: 0.0 });
        assert_eq!(all, BitMask2D::ones(8, 12));
    }

    #[test]
    fn region_trajectory_examples() {
        let f = constant_flow(3, 4, 4, [1.0, 1.0]);
        let sel = |bits: Vec<u8>| RegionSelectionMask {
            bits: BitMask2D::from_bits(2, 2, bits).unwrap(),
            k: 2,
            ratio: 0.0,
        };
        let t = region_trajectories(&f, &sel(vec![1, 0, 0, 0])).unwrap();
        for i in 1..3 {
            for y in 0..4 {
                for x in 0..4 {
                    let expect = if x < 2 && y < 2 { [1.0, 1.0] } else { [0.0, 0.0] };
                    assert_eq!(t.at(i, x, y), expect);
                }
            }
        }
        assert_eq!(region_trajectories(&f, &sel(vec![1; 4])).unwrap(), f);
        assert!(region_trajectories(&f, &sel(vec![0; 4]))
            .unwrap()
            .as_slice()
            .iter()
            .all(|&v| v == 0.0));
        let odd = constant_flow(2, 5, 4, [1.0, 0.0]);
        assert!(region_trajectories(&odd, &sel(vec![1; 4])).is_err());
    }

    #[test]
    fn motion_mask_thresholds() {
        let cfg = SamplerConfig::default();
        // magnitude 2 in later frames only: mean over 5 frames is 1.6 > 1
        let f = constant_flow(5, 2, 2, [2.0, 0.0]);
        assert_eq!(motion_mask(&f, &cfg).count_ones(), 4);
        let f = constant_flow(5, 2, 2, [0.5, 0.0]);
        assert!(motion_mask(&f, &cfg).is_empty());
    }

    #[test]
    fn repeat_examples() {
        let m = BitMask2D::from_fn(3, 3, |x, _| x == 1);
        assert_eq!(repeat_motion_mask(&m, 1).masks(), std::slice::from_ref(&m));
        let s = repeat_motion_mask(&m, 16);
        assert_eq!(s.len(), 16);
        assert!(s.masks().iter().all(|x| *x == m));
        assert!(repeat_motion_mask(&BitMask2D::zeros(2, 2), 4).masks().iter().all(|x| x.is_empty()));
    }

    #[test]
    fn straight_stroke_rasterizes_into_aligned_block() {
        let brush = BitMask2D::ones(32, 32);
        let stroke = vec![Point::new(10.0, 10.0), Point::new(25.0, 10.0)];
        let c = rasterize_user_trajectory(&[stroke], 16, 8, &brush).unwrap();
        for i in 0..16 {
            for y in 0..32 {
                for x in 0..32 {
                    let inside = (8..16).contains(&x) && (8..16).contains(&y);
                    let d = c.traj.at(i, x, y);
                    if inside {
                        assert!((d[0] - i as f64).abs() < 1e-12 && d[1] == 0.0);
                    } else {
                        assert_eq!(d, [0.0, 0.0]);
                    }
                }
            }
        }
        assert!(c.mask_seq.masks().iter().all(|m| *m == brush));
    }

    #[test]
    fn single_point_and_disjoint_strokes() {
        let brush = BitMask2D::zeros(16, 16);
        let c = rasterize_user_trajectory(&[vec![Point::new(3.0, 3.0)]], 4, 4, &brush).unwrap();
        assert!(c.traj.as_slice().iter().all(|&v| v == 0.0));

        let strokes = vec![
            vec![Point::new(1.0, 1.0), Point::new(5.0, 1.0)],
            vec![Point::new(13.0, 13.0), Point::new(13.0, 9.0)],
        ];
        let c = rasterize_user_trajectory(&strokes, 5, 4, &brush).unwrap();
        let last = c.len() - 1;
        for y in 0..16 {
            for x in 0..16 {
                let d = c.traj.at(last, x, y);
                let expect = if x < 4 && y < 4 {
                    [4.0, 0.0]
                } else if x >= 12 && y >= 12 {
                    [0.0, -4.0]
                } else {
                    [0.0, 0.0]
                };
                assert_eq!(d, expect, "({x},{y})");
            }
        }
        assert!(rasterize_user_trajectory(&[vec![]], 4, 4, &brush).is_err());
        assert!(rasterize_user_trajectory(&[vec![Point::new(20.0, 0.0)]], 4, 4, &brush).is_err());
    }

    #[test]
    fn zero_flow_gives_zero_condition() {
        let f = FlowField::zeros(4, 8, 8);
        let vis = repeat_motion_mask(&BitMask2D::ones(8, 8), 4);
        let cfg = SamplerConfig { k: 4, r_min: 0.0, ..SamplerConfig::default() };
        let c = make_training_condition(&f, &vis, &cfg).unwrap();
        assert!(c.traj.as_slice().iter().all(|&v| v == 0.0));
        assert!(c.motion_mask().is_empty());
    }

    #[test]
    fn condition_tracks_follow_selected_regions() {
        let f = constant_flow(3, 4, 4, [1.0, 2.0]);
        let msel = RegionSelectionMask {
            bits: BitMask2D::from_bits(2, 2, vec![0, 1, 0, 0]).unwrap(),
            k: 2,
            ratio: 0.75,
        };
        let traj = region_trajectories(&f, &msel).unwrap();
        let cond = ConditionTensors::new(traj, repeat_motion_mask(&BitMask2D::ones(4, 4), 3)).unwrap();
        let set = condition_tracks(&cond, 2);
        assert_eq!(set.len(), 1);
        assert_eq!(set.tracks()[0].start(), Point::new(2.0, 0.0));
        assert_eq!(set.tracks()[0].positions()[2], Point::new(3.0, 2.0));
    }
}
