//! Parametric synthetic scenes with analytic flow, visibility and point tracks.
//!
//! A scene is a background plus a stack of textured discs. Every element moves
//! rigidly: a rotation about a pivot followed by a translation, both functions
//! of the frame index. Since the motion is known in closed form the generator
//! doubles as the ground-truth oracle for flow estimation and point tracking.
//!
//! Scenes are serialized as JSON:
//!
//! ```json
//! {
//!   "frames": 8, "height": 32, "width": 32, "seed": 7,
//!   "background": {"color": [0.2, 0.3, 0.4], "pan": [0.0, 0.0], "texture": 0.1},
//!   "blobs": [
//!     {"center": [10, 12], "radius": 5, "color": [0.9, 0.2, 0.1], "texture": 0.15,
//!      "motion": {"type": "constant", "velocity": [2, 0]}},
//!     {"center": [20, 20], "radius": 4, "color": [0.1, 0.8, 0.2],
//!      "motion": {"type": "circular", "pivot": [16, 16], "angular_rate": 0.1}},
//!     {"center": [5, 5], "radius": 3, "color": [0.5, 0.5, 0.9],
//!      "motion": {"type": "waypoints", "points": [[5, 5], [12, 5], [12, 14]]}}
//!   ]
//! }
//! ```
//!
//! Blobs listed later are drawn on top. `texture` is the amplitude of a seeded
//! two-wave sinusoidal pattern attached to the element, `pan` a background
//! velocity in px/frame.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{BitMask2D, BitMaskSeq, FlowField, Grid, VideoClip};
use crate::tracks::{Point, Track, TrackSet};

pub const MAX_SCENE_PIXELS: usize = 1 << 24;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneSpec {
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    #[serde(default)]
    pub background: Background,
    #[serde(default)]
    pub blobs: Vec<Blob>,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Background {
    pub color: [f64; 3],
    #[serde(default)]
    pub pan: [f64; 2],
    #[serde(default)]
    pub texture: f64,
}

impl Default for Background {
    fn default() -> Self {
        Self {
            color: [0.5, 0.5, 0.5],
            pan: [0.0, 0.0],
            texture: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Blob {
    pub center: [f64; 2],
    pub radius: f64,
    pub color: [f64; 3],
    #[serde(default)]
    pub texture: f64,
    pub motion: Motion,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum Motion {
    Static,
    /// Translation by `velocity` px per frame.
    Constant { velocity: [f64; 2] },
    /// Rigid rotation about `pivot` by `angular_rate` radians per frame.
    Circular { pivot: [f64; 2], angular_rate: f64 },
    /// Piecewise-linear translation; waypoint `j` of `n` is reached at frame
    /// `1 + j (L-1)/(n-1)`, displacements are relative to the first waypoint.
    Waypoints { points: Vec<[f64; 2]> },
}

/// `q = pivot + R(angle) (p - pivot) + shift`.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Rigid {
    pivot: Point,
    angle: f64,
    shift: Point,
}

impl Rigid {
    const IDENTITY: Rigid = Rigid {
        pivot: Point::new(0.0, 0.0),
        angle: 0.0,
        shift: Point::new(0.0, 0.0),
    };

    fn apply(&self, p: Point) -> Point {
        if self.angle == 0.0 {
            return p + self.shift;
        }
        let (s, c) = self.angle.sin_cos();
        let d = p - self.pivot;
        Point::new(
            self.pivot.x + c * d.x - s * d.y + self.shift.x,
            self.pivot.y + s * d.x + c * d.y + self.shift.y,
        )
    }

    fn invert(&self, q: Point) -> Point {
        let r = q - self.shift;
        if self.angle == 0.0 {
            return r;
        }
        let (s, c) = self.angle.sin_cos();
        let d = r - self.pivot;
        Point::new(
            self.pivot.x + c * d.x + s * d.y,
            self.pivot.y - s * d.x + c * d.y,
        )
    }
}

impl Motion {
    fn at(&self, t: usize, frames: usize) -> Rigid {
        let tf = t as f64;
        match self {
            Motion::Static => Rigid::IDENTITY,
            Motion::Constant { velocity } => Rigid {
                shift: Point::new(velocity[0] * tf, velocity[1] * tf),
                ..Rigid::IDENTITY
            },
            Motion::Circular {
                pivot,
                angular_rate,
            } => Rigid {
                pivot: Point::new(pivot[0], pivot[1]),
                angle: angular_rate * tf,
                shift: Point::default(),
            },
            Motion::Waypoints { points } => {
                let shift = match points.len() {
                    0 | 1 => Point::default(),
                    n => {
                        let span = (frames.max(2) - 1) as f64;
                        let u = (tf / span).clamp(0.0, 1.0) * (n - 1) as f64;
                        let j = (u.floor() as usize).min(n - 2);
                        let f = u - j as f64;
                        let (a, b) = (points[j], points[j + 1]);
                        Point::new(
                            a[0] + f * (b[0] - a[0]) - points[0][0],
                            a[1] + f * (b[1] - a[1]) - points[0][1],
                        )
                    }
                };
                Rigid {
                    shift,
                    ..Rigid::IDENTITY
                }
            }
        }
    }
}

/// Seeded two-wave sinusoid in element-local (frame-1) coordinates.
#[derive(Debug, Clone, Copy)]
struct Texture {
    amplitude: f64,
    waves: [(f64, f64, f64); 2],
}

impl Texture {
    fn draw(amplitude: f64, rng: &mut ChaCha8Rng) -> Self {
        let mut wave = || {
            let wavelength: f64 = rng.random_range(6.0..14.0);
            let theta: f64 = rng.random_range(0.0..std::f64::consts::TAU);
            let phase: f64 = rng.random_range(0.0..std::f64::consts::TAU);
            let k = std::f64::consts::TAU / wavelength;
            (k * theta.cos(), k * theta.sin(), phase)
        };
        let waves = [wave(), wave()];
        Self { amplitude, waves }
    }

    fn color(&self, base: &[f64; 3], p: Point) -> [f64; 3] {
        if self.amplitude == 0.0 {
            return *base;
        }
        let v = 0.5
            * self
                .waves
                .iter()
                .map(|&(kx, ky, ph)| (kx * p.x + ky * p.y + ph).sin())
                .sum::<f64>();
        base.map(|c| (c + self.amplitude * v).clamp(0.0, 1.0))
    }
}

/// Which scene element a position belongs to: `None` is the background.
type Owner = Option<usize>;

/// A validated scene with per-element textures resolved from the seed.
struct Scene<'a> {
    spec: &'a SceneSpec,
    background: Texture,
    blobs: Vec<Texture>,
}

impl<'a> Scene<'a> {
    fn new(spec: &'a SceneSpec) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let background = Texture::draw(spec.background.texture, &mut rng);
        let blobs = spec
            .blobs
            .iter()
            .map(|b| Texture::draw(b.texture, &mut rng))
            .collect();
        Ok(Self {
            spec,
            background,
            blobs,
        })
    }

    fn motion(&self, owner: Owner, t: usize) -> Rigid {
        let frames = self.spec.frames;
        match owner {
            None => Motion::Constant {
                velocity: self.spec.background.pan,
            }
            .at(t, frames),
            Some(b) => self.spec.blobs[b].motion.at(t, frames),
        }
    }

    /// Topmost element covering screen position `q` at frame `t`, with its
    /// frame-1 local coordinate.
    fn owner_at(&self, q: Point, t: usize) -> (Owner, Point) {
        for (b, blob) in self.spec.blobs.iter().enumerate().rev() {
            let local = self.motion(Some(b), t).invert(q);
            let c = Point::new(blob.center[0], blob.center[1]);
            if local.distance(c) <= blob.radius {
                return (Some(b), local);
            }
        }
        (None, self.motion(None, t).invert(q))
    }

    fn color_at(&self, q: Point, t: usize) -> [f64; 3] {
        match self.owner_at(q, t) {
            (Some(b), local) => self.blobs[b].color(&self.spec.blobs[b].color, local),
            (None, local) => self.background.color(&self.spec.background.color, local),
        }
    }

    /// Frame-1 ownership and the displacement to frame `t`.
    fn displacement(&self, p: Point, t: usize) -> (Owner, Point) {
        let (owner, _) = self.owner_at(p, 0);
        (owner, self.motion(owner, t).apply(p) - p)
    }

    fn in_bounds(&self, q: Point) -> bool {
        q.x >= 0.0
            && q.y >= 0.0
            && q.x <= (self.spec.width - 1) as f64
            && q.y <= (self.spec.height - 1) as f64
    }
}

/// Subsample offsets of the 4x4 supersampling grid, relative to pixel centers.
const SUBSAMPLES: [f64; 4] = [-0.375, -0.125, 0.125, 0.375];

impl SceneSpec {
    pub fn parse(bytes: &[u8]) -> Result<Self> {
        let spec: SceneSpec =
            serde_json::from_slice(bytes).map_err(|e| Error::format("scene", e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_json(&self) -> Vec<u8> {
        serde_json::to_vec_pretty(self).expect("scene serialization")
    }

    pub fn validate(&self) -> Result<()> {
        if self.frames < 2 {
            return Err(Error::format("scene.frames", "must be at least 2"));
        }
        if self.height == 0 || self.width == 0 {
            return Err(Error::format("scene.height", "canvas must be nonempty"));
        }
        let pixels = self
            .frames
            .checked_mul(self.height)
            .and_then(|v| v.checked_mul(self.width));
        if pixels.is_none_or(|p| p > MAX_SCENE_PIXELS) {
            return Err(Error::format("scene.frames", "canvas too large"));
        }
        let finite = |v: &[f64]| v.iter().all(|x| x.is_finite());
        let bg = &self.background;
        if !finite(&bg.color) || !finite(&bg.pan) || !bg.texture.is_finite() {
            return Err(Error::format("scene.background", "non-finite value"));
        }
        for (i, b) in self.blobs.iter().enumerate() {
            let field = |f: &str| format!("scene.blobs[{i}].{f}");
            if !(b.radius > 0.0 && b.radius.is_finite()) {
                return Err(Error::format(field("radius"), "must be positive"));
            }
            if !finite(&b.center) || !finite(&b.color) || !b.texture.is_finite() {
                return Err(Error::format(field("center"), "non-finite value"));
            }
            let ok = match &b.motion {
                Motion::Static => true,
                Motion::Constant { velocity } => finite(velocity),
                Motion::Circular {
                    pivot,
                    angular_rate,
                } => finite(pivot) && angular_rate.is_finite(),
                Motion::Waypoints { points } => points.iter().all(|p| finite(p)),
            };
            if !ok {
                return Err(Error::format(field("motion"), "non-finite parameter"));
            }
        }
        Ok(())
    }
}

/// Deterministic anti-aliased rasterization of the scene.
pub fn render_clip(spec: &SceneSpec) -> Result<VideoClip> {
    let scene = Scene::new(spec)?;
    let (h, w) = (spec.height, spec.width);
    let norm = 1.0 / (SUBSAMPLES.len() * SUBSAMPLES.len()) as f64;
    let mut frames = Vec::with_capacity(spec.frames);
    for t in 0..spec.frames {
        let mut frame = Grid::zeros(h, w, 3);
        for y in 0..h {
            for x in 0..w {
                let mut acc = [0.0; 3];
                for &oy in &SUBSAMPLES {
                    for &ox in &SUBSAMPLES {
                        let c = scene.color_at(Point::new(x as f64 + ox, y as f64 + oy), t);
                        acc.iter_mut().zip(c).for_each(|(a, v)| *a += v);
                    }
                }
                frame
                    .pixel_mut(x, y)
                    .iter_mut()
                    .zip(acc)
                    .for_each(|(o, a)| *o = (a * norm).clamp(0.0, 1.0));
            }
        }
        frames.push(frame);
    }
    VideoClip::new(frames, 8.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub flow: FlowField,
    pub visibility: BitMaskSeq,
}

/// Flow and visibility of every frame-1 pixel, by its owning element.
pub fn ground_truth(spec: &SceneSpec) -> Result<GroundTruth> {
    let scene = Scene::new(spec)?;
    let (l, h, w) = (spec.frames, spec.height, spec.width);
    let mut flow = vec![0.0; l * h * w * 2];
    let mut masks = Vec::with_capacity(l);
    for t in 0..l {
        let mut vis = BitMask2D::zeros(h, w);
        for y in 0..h {
            for x in 0..w {
                let p = Point::new(x as f64, y as f64);
                let (owner, d) = scene.displacement(p, t);
                let j = ((t * h + y) * w + x) * 2;
                flow[j] = d.x;
                flow[j + 1] = d.y;
                let q = p + d;
                let visible = t == 0 || (scene.in_bounds(q) && scene.owner_at(q, t).0 == owner);
                vis.set(x, y, visible);
            }
        }
        masks.push(vis);
    }
    Ok(GroundTruth {
        flow: FlowField::from_vec(l, h, w, flow)?,
        visibility: BitMaskSeq::new(masks)?,
    })
}

/// Analytic per-frame positions of frame-1 query points.
///
/// Positions are computed as `start + displacement`, exactly as the ground
/// truth flow is, so grid-point tracks agree with the flow bit for bit.
pub fn oracle_track(spec: &SceneSpec, points: &[Point]) -> Result<TrackSet> {
    let scene = Scene::new(spec)?;
    let mut tracks = Vec::with_capacity(points.len());
    for (i, &p) in points.iter().enumerate() {
        if !scene.in_bounds(p) {
            return Err(Error::invalid(format!(
                "query point {i} ({}, {}) is outside frame 1",
                p.x, p.y
            )));
        }
        let positions = (0..spec.frames)
            .map(|t| p + scene.displacement(p, t).1)
            .collect();
        tracks.push(Track::new(positions)?);
    }
    TrackSet::new(spec.frames, tracks)
}

/// Pixel-grid query points spaced `stride` apart, starting at `stride / 2`.
pub fn grid_points(height: usize, width: usize, stride: usize) -> Vec<Point> {
    let stride = stride.max(1);
    let mut out = Vec::new();
    let mut y = stride / 2;
    while y < height {
        let mut x = stride / 2;
        while x < width {
            out.push(Point::new(x as f64, y as f64));
            x += stride;
        }
        y += stride;
    }
    out
}

/// Knobs for [`random_scene`].
#[derive(Debug, Clone, PartialEq)]
pub struct RandomSceneConfig {
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub max_blobs: usize,
    pub radius: (f64, f64),
    pub max_speed: f64,
    pub texture: f64,
    pub circular: bool,
}

impl Default for RandomSceneConfig {
    fn default() -> Self {
        Self {
            frames: 8,
            height: 32,
            width: 32,
            max_blobs: 2,
            radius: (4.0, 8.0),
            max_speed: 1.5,
            texture: 0.15,
            circular: true,
        }
    }
}

/// A random scene drawn from `seed`; the result has `spec.seed == seed`.
pub fn random_scene(seed: u64, cfg: &RandomSceneConfig) -> SceneSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5ce_e5ce);
    let color = |rng: &mut ChaCha8Rng| [0; 3].map(|_| rng.random_range(0.15..0.85));
    let background = Background {
        color: color(&mut rng),
        pan: [0.0, 0.0],
        texture: cfg.texture * 0.5,
    };
    let n = rng.random_range(1..=cfg.max_blobs.max(1));
    let (w, h) = (cfg.width as f64, cfg.height as f64);
    let blobs = (0..n)
        .map(|_| {
            let radius = rng.random_range(cfg.radius.0..=cfg.radius.1);
            let center = [
                rng.random_range(radius..(w - radius).max(radius + 1e-9)),
                rng.random_range(radius..(h - radius).max(radius + 1e-9)),
            ];
            let motion = if cfg.circular && rng.random_bool(0.25) {
                Motion::Circular {
                    pivot: [w / 2.0, h / 2.0],
                    angular_rate: rng.random_range(-0.08..0.08),
                }
            } else {
                let speed = rng.random_range(0.0..=cfg.max_speed);
                let theta: f64 = rng.random_range(0.0..std::f64::consts::TAU);
                Motion::Constant {
                    velocity: [speed * theta.cos(), speed * theta.sin()],
                }
            };
            Blob {
                center,
                radius,
                color: color(&mut rng),
                texture: cfg.texture,
                motion,
            }
        })
        .collect();
    SceneSpec {
        frames: cfg.frames,
        height: cfg.height,
        width: cfg.width,
        background,
        blobs,
        seed,
    }
}
