//! Trajectory-alignment and temporal-quality metrics.
//!
//! `md_img` matches the reference start point in every frame independently
//! against frame 1; `md_vid` runs a tracker through the clip. Both report the
//! mean Euclidean distance to the reference positions. Correspondence and
//! tracking are pluggable: analytic flow lookup, the synthetic-scene oracle,
//! or a block matcher.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{FlowField, Grid, VideoClip};
use crate::synth::{oracle_track, SceneSpec};
use crate::tracks::{Point, Track, TrackSet};

/// Frame → unit-norm feature vector.
pub trait Embedder {
    fn embed_clip(&self, clip: &VideoClip) -> Result<Vec<Vec<f64>>>;
}

/// 8×8×8 RGB color histogram, L2-normalized.
#[derive(Debug, Clone, Copy, Default)]
pub struct HistogramEmbedder;

pub const HISTOGRAM_BINS: usize = 8;

impl HistogramEmbedder {
    pub fn embed(&self, frame: &Grid) -> Vec<f64> {
        let b = HISTOGRAM_BINS;
        let mut hist = vec![0.0; b * b * b];
        let bin = |v: f64| ((v * b as f64) as usize).min(b - 1);
        for px in frame.as_slice().chunks_exact(3) {
            hist[(bin(px[0]) * b + bin(px[1])) * b + bin(px[2])] += 1.0;
        }
        normalize(hist)
    }
}

impl Embedder for HistogramEmbedder {
    fn embed_clip(&self, clip: &VideoClip) -> Result<Vec<Vec<f64>>> {
        Ok(clip.frames().iter().map(|f| self.embed(f)).collect())
    }
}

/// Externally computed per-frame features, e.g. `{"embeddings": [[...], ...]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrecomputedEmbeddings {
    pub embeddings: Vec<Vec<f64>>,
}

impl PrecomputedEmbeddings {
    pub fn parse(bytes: &[u8]) -> Result<Self> {
        let e: Self =
            serde_json::from_slice(bytes).map_err(|e| Error::format("embeddings", e.to_string()))?;
        for (i, v) in e.embeddings.iter().enumerate() {
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if v.is_empty() || !norm.is_finite() || norm == 0.0 {
                return Err(Error::format(
                    format!("embeddings[{i}]"),
                    "must be a nonzero finite vector",
                ));
            }
        }
        Ok(e)
    }
}

impl Embedder for PrecomputedEmbeddings {
    fn embed_clip(&self, clip: &VideoClip) -> Result<Vec<Vec<f64>>> {
        if self.embeddings.len() != clip.len() {
            return Err(Error::format(
                "embeddings",
                format!("{} vectors for a {}-frame clip", self.embeddings.len(), clip.len()),
            ));
        }
        Ok(self.embeddings.iter().cloned().map(normalize).collect())
    }
}

fn normalize(mut v: Vec<f64>) -> Vec<f64> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
    v
}

/// Tracker output: one track per query, flagged when the backend lost it.
#[derive(Debug, Clone, PartialEq)]
pub struct Tracked {
    pub tracks: TrackSet,
    pub valid: Vec<bool>,
}

/// Follows frame-1 query points through a clip.
pub trait Tracker {
    fn track(&self, clip: &VideoClip, points: &[Point]) -> Result<Tracked>;
}

/// Finds where a frame-1 point went in frame `i`, looking at frames 1 and `i` only.
pub trait Correspondence {
    fn correspond(&self, clip: &VideoClip, frame: usize, point: Point) -> Option<Point>;
}

/// Tracks by reading a known frame-1-relative flow field, e.g. the ground
/// truth of a synthetic clip or the dense field a preview was warped with.
#[derive(Debug, Clone)]
pub struct FlowTracker {
    pub flow: FlowField,
}

impl FlowTracker {
    fn position(&self, frame: usize, p: Point) -> Point {
        let d = self.flow.sample(frame, p.x, p.y);
        p + Point::new(d[0], d[1])
    }
}

impl Tracker for FlowTracker {
    fn track(&self, clip: &VideoClip, points: &[Point]) -> Result<Tracked> {
        check_clip_flow(clip, &self.flow)?;
        let tracks = points
            .iter()
            .map(|&p| {
                let mut pos: Vec<Point> =
                    (0..self.flow.len()).map(|i| self.position(i, p)).collect();
                pos[0] = p;
                Track::new(pos)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Tracked {
            valid: vec![true; tracks.len()],
            tracks: TrackSet::new(self.flow.len(), tracks)?,
        })
    }
}

impl Correspondence for FlowTracker {
    fn correspond(&self, _clip: &VideoClip, frame: usize, point: Point) -> Option<Point> {
        Some(self.position(frame, point))
    }
}

fn check_clip_flow(clip: &VideoClip, flow: &FlowField) -> Result<()> {
    if clip.len() != flow.len() || clip.height() != flow.height() || clip.width() != flow.width() {
        return Err(Error::shape(format!(
            "clip {}x{}x{} does not match flow {}x{}x{}",
            clip.len(),
            clip.height(),
            clip.width(),
            flow.len(),
            flow.height(),
            flow.width()
        )));
    }
    Ok(())
}

/// Analytic tracks of the scene that produced the clip.
#[derive(Debug, Clone)]
pub struct SceneOracle {
    pub spec: SceneSpec,
}

impl Tracker for SceneOracle {
    fn track(&self, _clip: &VideoClip, points: &[Point]) -> Result<Tracked> {
        let tracks = oracle_track(&self.spec, points)?;
        Ok(Tracked {
            valid: vec![true; tracks.len()],
            tracks,
        })
    }
}

impl Correspondence for SceneOracle {
    fn correspond(&self, _clip: &VideoClip, frame: usize, point: Point) -> Option<Point> {
        oracle_track(&self.spec, &[point])
            .ok()
            .map(|t| t.tracks()[0].positions()[frame])
    }
}

/// Patch matcher: sequential frame-to-frame search with a drift-correcting
/// refinement against the frame-1 template.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlockMatcher {
    /// Patch half-width; the patch is `(2 half + 1)²`.
    pub half: usize,
    /// Frame-to-frame search radius.
    pub radius: i32,
    /// Search radius of the frame-1 refinement.
    pub refine_radius: i32,
    /// Search radius for independent frame-1 vs frame-i correspondence.
    pub pair_radius: i32,
    /// Matches scoring below this normalized correlation count as failures.
    pub score_floor: f64,
}

impl Default for BlockMatcher {
    fn default() -> Self {
        Self {
            half: 4,
            radius: 8,
            refine_radius: 2,
            pair_radius: 24,
            score_floor: 0.5,
        }
    }
}

struct Match {
    pos: Point,
    score: f64,
}

impl BlockMatcher {
    fn patch(&self, frame: &Grid, center: Point) -> Vec<f64> {
        let h = self.half as i32;
        let mut out = Vec::with_capacity(((2 * h + 1) * (2 * h + 1) * 3) as usize);
        let mut px = [0.0; 3];
        for dy in -h..=h {
            for dx in -h..=h {
                frame.sample_into(center.x + f64::from(dx), center.y + f64::from(dy), &mut px);
                out.extend_from_slice(&px);
            }
        }
        out
    }

    /// Exhaustive integer-offset search around `around`, then a parabolic
    /// sub-pixel fit of the SSD surface along each axis.
    fn search(&self, frame: &Grid, template: &[f64], around: Point, radius: i32) -> Match {
        let side = (2 * radius + 1) as usize;
        let mut ssd = vec![f64::INFINITY; side * side];
        let mut best = (0i32, 0i32);
        let mut best_ssd = f64::INFINITY;
        // Visit the zero offset first so ties keep the current position.
        let zero = self.ssd(frame, template, around);
        ssd[(radius as usize) * side + radius as usize] = zero;
        best_ssd = best_ssd.min(zero);
        for oy in -radius..=radius {
            for ox in -radius..=radius {
                if ox == 0 && oy == 0 {
                    continue;
                }
                let c = around + Point::new(f64::from(ox), f64::from(oy));
                let s = self.ssd(frame, template, c);
                ssd[((oy + radius) as usize) * side + (ox + radius) as usize] = s;
                if s < best_ssd {
                    best_ssd = s;
                    best = (ox, oy);
                }
            }
        }
        let at = |ox: i32, oy: i32| -> Option<f64> {
            if ox.abs() > radius || oy.abs() > radius {
                None
            } else {
                Some(ssd[((oy + radius) as usize) * side + (ox + radius) as usize])
            }
        };
        let refine = |m: Option<f64>, c: f64, p: Option<f64>| -> f64 {
            match (m, p) {
                (Some(m), Some(p)) => {
                    let denom = m - 2.0 * c + p;
                    if denom > 0.0 {
                        (0.5 * (m - p) / denom).clamp(-0.5, 0.5)
                    } else {
                        0.0
                    }
                }
                _ => 0.0,
            }
        };
        let (bx, by) = best;
        let sx = refine(at(bx - 1, by), best_ssd, at(bx + 1, by));
        let sy = refine(at(bx, by - 1), best_ssd, at(bx, by + 1));
        let pos = around + Point::new(f64::from(bx) + sx, f64::from(by) + sy);
        let score = ncc(template, &self.patch(frame, pos));
        Match { pos, score }
    }

    fn ssd(&self, frame: &Grid, template: &[f64], center: Point) -> f64 {
        self.patch(frame, center)
            .iter()
            .zip(template)
            .map(|(a, b)| (a - b) * (a - b))
            .sum()
    }
}

/// Normalized cross-correlation; flat patches score 1 only against an equal flat patch.
fn ncc(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    const FLAT: f64 = 1e-10;
    if saa < FLAT || sbb < FLAT {
        let flat_equal = saa < FLAT && sbb < FLAT && (ma - mb).abs() <= 1.0 / 255.0;
        return if flat_equal { 1.0 } else { 0.0 };
    }
    sab / (saa * sbb).sqrt()
}

impl Tracker for BlockMatcher {
    fn track(&self, clip: &VideoClip, points: &[Point]) -> Result<Tracked> {
        let mut tracks = Vec::with_capacity(points.len());
        let mut valid = Vec::with_capacity(points.len());
        for &p in points {
            let anchor = self.patch(clip.frame(0), p);
            let mut positions = vec![p];
            let mut ok = true;
            for i in 1..clip.len() {
                let prev = positions[i - 1];
                let template = self.patch(clip.frame(i - 1), prev);
                let step = self.search(clip.frame(i), &template, prev, self.radius);
                let refined = self.search(clip.frame(i), &anchor, step.pos, self.refine_radius);
                let chosen = if refined.score >= self.score_floor {
                    refined
                } else {
                    step
                };
                ok &= chosen.score >= self.score_floor;
                positions.push(chosen.pos);
            }
            tracks.push(Track::new(positions)?);
            valid.push(ok);
        }
        Ok(Tracked {
            tracks: TrackSet::new(clip.len(), tracks)?,
            valid,
        })
    }
}

impl Correspondence for BlockMatcher {
    fn correspond(&self, clip: &VideoClip, frame: usize, point: Point) -> Option<Point> {
        if frame == 0 {
            return Some(point);
        }
        let anchor = self.patch(clip.frame(0), point);
        let m = self.search(clip.frame(frame), &anchor, point, self.pair_radius);
        (m.score >= self.score_floor).then_some(m.pos)
    }
}

/// Mean distance and the reference tracks left out of it.
#[derive(Debug, Clone, PartialEq)]
pub struct MeanDistance {
    /// `None` when every track was excluded.
    pub mean: Option<f64>,
    pub excluded: Vec<usize>,
}

fn check_lengths(reference: &TrackSet, clip: &VideoClip) -> Result<()> {
    if reference.frames() != clip.len() {
        return Err(Error::shape(format!(
            "reference tracks span {} frames, clip has {}",
            reference.frames(),
            clip.len()
        )));
    }
    Ok(())
}

/// Frame-level mean distance over frames `2..=L`, matching each frame to frame 1.
pub fn md_img(reference: &TrackSet, clip: &VideoClip, correspond: &dyn Correspondence) -> Result<MeanDistance> {
    check_lengths(reference, clip)?;
    let (mut sum, mut count, mut excluded) = (0.0, 0usize, Vec::new());
    for (t, track) in reference.tracks().iter().enumerate() {
        let mut dists = Vec::with_capacity(clip.len());
        for i in 1..clip.len() {
            match correspond.correspond(clip, i, track.start()) {
                Some(q) => dists.push(q.distance(track.positions()[i])),
                None => break,
            }
        }
        if dists.len() + 1 == clip.len() {
            sum += dists.iter().sum::<f64>();
            count += dists.len();
        } else {
            excluded.push(t);
        }
    }
    let included = reference.len() - excluded.len();
    let mean = if included == 0 {
        None
    } else if count == 0 {
        Some(0.0)
    } else {
        Some(sum / count as f64)
    };
    Ok(MeanDistance { mean, excluded })
}

/// Video-level mean distance over all `L` frames of tracker output.
pub fn md_vid(reference: &TrackSet, clip: &VideoClip, tracker: &dyn Tracker) -> Result<MeanDistance> {
    check_lengths(reference, clip)?;
    let tracked = tracker.track(clip, &reference.starts())?;
    if tracked.tracks.len() != reference.len() || tracked.tracks.frames() != clip.len() {
        return Err(Error::shape("tracker returned tracks of the wrong shape"));
    }
    let (mut sum, mut count, mut excluded) = (0.0, 0usize, Vec::new());
    for (t, (r, g)) in reference.tracks().iter().zip(tracked.tracks.tracks()).enumerate() {
        if !tracked.valid[t] {
            excluded.push(t);
            continue;
        }
        for (a, b) in r.positions().iter().zip(g.positions()) {
            sum += a.distance(*b);
            count += 1;
        }
    }
    let mean = (count > 0).then(|| sum / count as f64);
    Ok(MeanDistance { mean, excluded })
}

/// Mean cosine similarity of adjacent-frame embeddings.
pub fn frame_consistency(clip: &VideoClip, emb: &dyn Embedder) -> Result<f64> {
    if clip.len() < 2 {
        return Err(Error::invalid("frame consistency needs at least 2 frames"));
    }
    let e = emb.embed_clip(clip)?;
    let total: f64 = e
        .windows(2)
        .map(|w| w[0].iter().zip(&w[1]).map(|(a, b)| a * b).sum::<f64>())
        .sum();
    Ok(total / (e.len() - 1) as f64)
}

/// Mean per-step displacement magnitude, from frame-to-frame differences of
/// the frame-1-relative flow, over all pixels and transitions.
pub fn avg_flow_magnitude(flow: &FlowField) -> f64 {
    if flow.len() < 2 {
        return 0.0;
    }
    let mut total = 0.0;
    for i in 1..flow.len() {
        let (a, b) = (flow.frame(i - 1), flow.frame(i));
        total += a
            .chunks_exact(2)
            .zip(b.chunks_exact(2))
            .map(|(p, q)| (q[0] - p[0]).hypot(q[1] - p[1]))
            .sum::<f64>();
    }
    total / ((flow.len() - 1) * flow.height() * flow.width()) as f64
}

/// The `eval` report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub md_img: Option<f64>,
    pub md_vid: Option<f64>,
    pub frame_consistency: f64,
    pub avg_flow_magnitude: Option<f64>,
    pub excluded_points: Vec<usize>,
}

impl MetricsReport {
    pub fn to_json(&self) -> Vec<u8> {
        let mut out = serde_json::to_vec_pretty(self).expect("report serialization");
        out.push(b'\n');
        out
    }
}

/// All metrics for one clip against reference tracks.
///
/// `flow`, when known, feeds the average flow magnitude.
pub fn evaluate<B>(
    reference: &TrackSet,
    clip: &VideoClip,
    backend: &B,
    emb: &dyn Embedder,
    flow: Option<&FlowField>,
) -> Result<MetricsReport>
where
    B: Tracker + Correspondence,
{
    let img = md_img(reference, clip, backend)?;
    let vid = md_vid(reference, clip, backend)?;
    let mut excluded = img.excluded.clone();
    excluded.extend(vid.excluded.iter().copied());
    excluded.sort_unstable();
    excluded.dedup();
    let fc = if clip.len() >= 2 {
        frame_consistency(clip, emb)?
    } else {
        1.0
    };
    Ok(MetricsReport {
        md_img: img.mean,
        md_vid: vid.mean,
        frame_consistency: fc,
        avg_flow_magnitude: flow.map(avg_flow_magnitude),
        excluded_points: excluded,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{ground_truth, random_scene, render_clip, RandomSceneConfig};

    fn flat_clip(len: usize, h: usize, w: usize, color: [f64; 3]) -> VideoClip {
        let mut g = Grid::zeros(h, w, 3);
        for px in g.as_mut_slice().chunks_exact_mut(3) {
            px.copy_from_slice(&color);
        }
        VideoClip::constant(&g, len, 8.0).unwrap()
    }

    fn tracks(len: usize, f: impl Fn(usize, usize) -> Point, n: usize) -> TrackSet {
        TrackSet::new(len, (0..n).map(|t| Track::new((0..len).map(|i| f(t, i)).collect()).unwrap()).collect())
            .unwrap()
    }

    fn uniform_flow(len: usize, h: usize, w: usize, step: impl Fn(usize) -> [f64; 2]) -> FlowField {
        let mut data = vec![0.0; len * h * w * 2];
        for i in 0..len {
            let d = step(i);
            for px in data[i * h * w * 2..(i + 1) * h * w * 2].chunks_exact_mut(2) {
                px.copy_from_slice(&d);
            }
        }
        FlowField::from_vec(len, h, w, data).unwrap()
    }

    #[test]
    fn md_zero_for_identical_tracks() {
        let len = 5;
        let flow = uniform_flow(len, 16, 16, |i| [i as f64, 0.5 * i as f64]);
        let reference = tracks(len, |t, i| Point::new(2.0 + t as f64 + i as f64, 3.0 + 0.5 * i as f64), 4);
        let clip = flat_clip(len, 16, 16, [0.5; 3]);
        let oracle = FlowTracker { flow };
        assert_eq!(md_img(&reference, &clip, &oracle).unwrap().mean, Some(0.0));
        assert_eq!(md_vid(&reference, &clip, &oracle).unwrap().mean, Some(0.0));
    }

    #[test]
    fn md_img_constant_offset_is_five() {
        let len = 6;
        let flow = uniform_flow(len, 16, 16, |i| if i == 0 { [0.0, 0.0] } else { [3.0, 4.0] });
        let reference = tracks(len, |_, _| Point::new(5.0, 5.0), 3);
        let clip = flat_clip(len, 16, 16, [0.5; 3]);
        let r = md_img(&reference, &clip, &FlowTracker { flow }).unwrap();
        assert!((r.mean.unwrap() - 5.0).abs() < 1e-12);
    }

    #[test]
    fn md_img_static_clip_linear_drift() {
        let (len, d) = (8, 14.0);
        let reference = tracks(len, |_, i| Point::new(1.0 + d * i as f64 / (len - 1) as f64, 2.0), 2);
        let clip = flat_clip(len, 20, 20, [0.3; 3]);
        let r = md_img(&reference, &clip, &FlowTracker { flow: FlowField::zeros(len, 20, 20) }).unwrap();
        // scalar-loop oracle
        let mut sum = 0.0;
        for i in 1..len {
            sum += d * i as f64 / (len - 1) as f64;
        }
        let oracle = sum / (len - 1) as f64;
        assert!((r.mean.unwrap() - oracle).abs() < 1e-12);
        assert!((oracle - d * (len as f64 / 2.0) / (len - 1) as f64).abs() < 1e-12);
    }

    #[test]
    fn md_vid_offset_excluding_first_frame() {
        let len = 7;
        let flow = uniform_flow(len, 12, 12, |i| if i == 0 { [0.0, 0.0] } else { [0.0, 2.0] });
        let reference = tracks(len, |_, _| Point::new(4.0, 4.0), 2);
        let clip = flat_clip(len, 12, 12, [0.5; 3]);
        let r = md_vid(&reference, &clip, &FlowTracker { flow }).unwrap();
        assert!((r.mean.unwrap() - 2.0 * (len - 1) as f64 / len as f64).abs() < 1e-12);
    }

    #[test]
    fn frame_consistency_examples() {
        let clip = flat_clip(4, 6, 6, [0.2, 0.4, 0.6]);
        assert!((frame_consistency(&clip, &HistogramEmbedder).unwrap() - 1.0).abs() < 1e-9);

        let a = flat_clip(1, 4, 4, [0.05; 3]).frame(0).clone();
        let b = flat_clip(1, 4, 4, [0.95; 3]).frame(0).clone();
        let alt = VideoClip::new(vec![a.clone(), b.clone(), a, b], 8.0).unwrap();
        assert_eq!(frame_consistency(&alt, &HistogramEmbedder).unwrap(), 0.0);
    }

    #[test]
    fn frame_consistency_matches_scalar_loop() {
        let spec = random_scene(3, &RandomSceneConfig::default());
        let clip = render_clip(&spec).unwrap();
        let got = frame_consistency(&clip, &HistogramEmbedder).unwrap();
        // scalar loop with an independently written histogram
        let hist = |f: &Grid| {
            let mut h = [0.0f64; 512];
            for y in 0..f.height() {
                for x in 0..f.width() {
                    let p = f.pixel(x, y);
                    let q = |v: f64| ((v * 8.0).floor() as usize).min(7);
                    h[q(p[0]) * 64 + q(p[1]) * 8 + q(p[2])] += 1.0;
                }
            }
            h
        };
        let mut total = 0.0;
        for i in 1..clip.len() {
            let (a, b) = (hist(clip.frame(i - 1)), hist(clip.frame(i)));
            let mut dot = 0.0;
            let mut na = 0.0;
            let mut nb = 0.0;
            for j in 0..512 {
                dot += a[j] * b[j];
                na += a[j] * a[j];
                nb += b[j] * b[j];
            }
            total += dot / (na.sqrt() * nb.sqrt());
        }
        assert!((got - total / (clip.len() - 1) as f64).abs() < 1e-12);
    }

    #[test]
    fn embedder_output_is_unit_norm() {
        let spec = random_scene(8, &RandomSceneConfig::default());
        let clip = render_clip(&spec).unwrap();
        for e in HistogramEmbedder.embed_clip(&clip).unwrap() {
            let n = e.iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!((n - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn avg_flow_magnitude_examples() {
        assert_eq!(avg_flow_magnitude(&FlowField::zeros(4, 3, 3)), 0.0);
        let f = uniform_flow(6, 4, 5, |i| [3.0 * i as f64, 0.0]);
        assert_eq!(avg_flow_magnitude(&f), 3.0);
    }

    #[test]
    fn avg_flow_magnitude_matches_scalar_loop() {
        let spec = random_scene(21, &RandomSceneConfig::default());
        let gt = ground_truth(&spec).unwrap();
        let f = &gt.flow;
        let mut total = 0.0;
        let mut n = 0usize;
        for i in 1..f.len() {
            for y in 0..f.height() {
                for x in 0..f.width() {
                    let (a, b) = (f.at(i - 1, x, y), f.at(i, x, y));
                    total += ((b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2)).sqrt();
                    n += 1;
                }
            }
        }
        assert!((avg_flow_magnitude(f) - total / n as f64).abs() < 1e-9);
    }

    #[test]
    fn block_matcher_follows_translating_texture() {
        use crate::synth::{Background, Blob, Motion};
        let (len, size) = (8, 48);
        let spec = SceneSpec {
            frames: len,
            height: size,
            width: size,
            background: Background { color: [0.4, 0.5, 0.6], pan: [0.0, 0.0], texture: 0.2 },
            blobs: vec![Blob {
                center: [16.0, 18.0],
                radius: 11.0,
                color: [0.7, 0.3, 0.2],
                texture: 0.25,
                motion: Motion::Constant { velocity: [1.5, 0.75] },
            }],
            seed: 5,
        };
        let clip = render_clip(&spec).unwrap();
        // Patch-interior points only: inside the blob, or background away from its path.
        let end = Point::new(16.0 + 1.5 * (len - 1) as f64, 18.0 + 0.75 * (len - 1) as f64);
        let pts: Vec<Point> = crate::synth::grid_points(size, size, 2)
            .into_iter()
            .filter(|p| p.x >= 6.0 && p.y >= 6.0 && p.x <= 41.0 && p.y <= 41.0)
            .filter(|p| {
                let inside = p.distance(Point::new(16.0, 18.0)) <= 4.0;
                let clear = (0..len).all(|i| {
                    let c = Point::new(16.0, 18.0) + Point::new(1.5 * i as f64, 0.75 * i as f64);
                    p.distance(c) > 11.0 + 8.0
                });
                inside || (clear && p.distance(end) > 19.0)
            })
            .collect();
        assert!(pts.len() > 20);
        let oracle = oracle_track(&spec, &pts).unwrap();
        let got = BlockMatcher::default().track(&clip, &pts).unwrap();
        assert_eq!(got.tracks.tracks()[0].start(), pts[0]);
        let close = oracle
            .tracks()
            .iter()
            .zip(got.tracks.tracks())
            .filter(|(a, b)| a.positions().iter().zip(b.positions()).all(|(p, q)| p.distance(*q) <= 1.0))
            .count();
        assert!(close * 100 >= pts.len() * 95, "{close}/{}", pts.len());
    }

    #[test]
    fn flat_patch_correspondence_fails() {
        let clip = VideoClip::new(
            vec![flat_clip(1, 20, 20, [0.2; 3]).frame(0).clone(), flat_clip(1, 20, 20, [0.8; 3]).frame(0).clone()],
            8.0,
        )
        .unwrap();
        let reference = tracks(2, |_, _| Point::new(10.0, 10.0), 1);
        let r = md_img(&reference, &clip, &BlockMatcher::default()).unwrap();
        assert_eq!(r.mean, None);
        assert_eq!(r.excluded, vec![0]);
    }
}
