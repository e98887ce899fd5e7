//! Camera-motion trajectories: lift frame-1 pixels with metric depth, then
//! project them through a camera-to-world pose sequence.

use nalgebra::{Matrix3, Point3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{bilinear_sample_into, BitMask2D, Grid};
use crate::io::pnm::Pgm;
use crate::synth::grid_points;
use crate::tracks::{Point, Track, TrackSet};

/// Points closer to the camera plane than this are behind it.
pub const MIN_DEPTH: f64 = 1e-9;
/// Tolerance for orthonormality and identity checks on poses.
pub const POSE_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    height: usize,
    width: usize,
    depth: Vec<f64>,
}

impl DepthMap {
    pub fn new(height: usize, width: usize, depth: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 || depth.len() != height * width {
            return Err(Error::shape(format!("{} depth values for {height}x{width}", depth.len())));
        }
        if let Some(i) = depth.iter().position(|d| !(d.is_finite() && *d > 0.0)) {
            return Err(Error::format(
                format!("depth[{},{}]", i % width, i / width),
                format!("{} is not a positive finite depth", depth[i]),
            ));
        }
        Ok(Self { height, width, depth })
    }

    pub fn constant(height: usize, width: usize, z: f64) -> Result<Self> {
        Self::new(height, width, vec![z; height * width])
    }

    /// 16-bit samples times `scale` meters.
    pub fn from_pgm(pgm: &Pgm, scale: f64) -> Result<Self> {
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::format("depth_scale", "must be positive"));
        }
        Self::new(pgm.height, pgm.width, pgm.samples.iter().map(|&s| f64::from(s) * scale).collect())
    }

    pub fn from_grid(g: &Grid) -> Result<Self> {
        if g.channels() != 1 {
            return Err(Error::shape("depth map must have one channel"));
        }
        Self::new(g.height(), g.width(), g.as_slice().to_vec())
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// Bilinear depth at `(u, v)`; the caller checks bounds.
    fn at(&self, u: f64, v: f64) -> f64 {
        let mut out = [0.0];
        bilinear_sample_into(&self.depth, self.height, self.width, 1, u, v, &mut out);
        out[0]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl Intrinsics {
    pub fn parse(bytes: &[u8]) -> Result<Self> {
        let k: Self = serde_json::from_slice(bytes).map_err(|e| Error::format("intrinsics", e.to_string()))?;
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("fx", self.fx), ("fy", self.fy)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::format(name, "focal length must be positive"));
            }
        }
        for (name, v) in [("cx", self.cx), ("cy", self.cy)] {
            if !v.is_finite() {
                return Err(Error::format(name, "must be finite"));
            }
        }
        Ok(())
    }
}

/// Camera-to-world rigid transform: `p_world = R p_cam + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Pose {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn to_camera(&self, p: &Point3<f64>) -> Point3<f64> {
        Point3::from(self.rotation.transpose() * (p.coords - self.translation))
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PoseEntry {
    #[serde(rename = "R")]
    r: [f64; 9],
    t: [f64; 3],
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PoseFile {
    poses: Vec<PoseEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoseSeq {
    poses: Vec<Pose>,
}

impl PoseSeq {
    pub fn new(poses: Vec<Pose>) -> Result<Self> {
        let first = poses.first().ok_or_else(|| Error::format("poses", "sequence is empty"))?;
        for (i, p) in poses.iter().enumerate() {
            let field = format!("poses[{i}].R");
            if p.rotation.iter().chain(p.translation.iter()).any(|v| !v.is_finite()) {
                return Err(Error::format(format!("poses[{i}]"), "non-finite entry"));
            }
            let gram = p.rotation.transpose() * p.rotation - Matrix3::identity();
            if gram.abs().max() > POSE_TOLERANCE {
                return Err(Error::format(field, "rotation is not orthonormal"));
            }
            if p.rotation.determinant() <= 0.0 {
                return Err(Error::format(field, "rotation has negative determinant"));
            }
        }
        let id = Pose::identity();
        if (first.rotation - id.rotation).abs().max() > POSE_TOLERANCE
            || first.translation.abs().max() > POSE_TOLERANCE
        {
            return Err(Error::format("poses[0]", "first pose must be the identity"));
        }
        Ok(Self { poses })
    }

    pub fn parse(bytes: &[u8]) -> Result<Self> {
        let file: PoseFile = serde_json::from_slice(bytes).map_err(|e| Error::format("poses", e.to_string()))?;
        Self::new(
            file.poses
                .iter()
                .map(|e| Pose {
                    rotation: Matrix3::from_row_slice(&e.r),
                    translation: Vector3::from_row_slice(&e.t),
                })
                .collect(),
        )
    }

    pub fn to_json(&self) -> Vec<u8> {
        let file = PoseFile {
            poses: self
                .poses
                .iter()
                .map(|p| {
                    let mut r = [0.0; 9];
                    for i in 0..3 {
                        for j in 0..3 {
                            r[i * 3 + j] = p.rotation[(i, j)];
                        }
                    }
                    PoseEntry {
                        r,
                        t: [p.translation.x, p.translation.y, p.translation.z],
                    }
                })
                .collect(),
        };
        let mut out = serde_json::to_vec_pretty(&file).expect("poses serialize");
        out.push(b'\n');
        out
    }

    pub fn poses(&self) -> &[Pose] {
        &self.poses
    }

    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }
}

/// Back-project pixels into frame-1 camera (= world) coordinates.
pub fn lift(pixels: &[Point], depth: &DepthMap, k: &Intrinsics) -> Result<Vec<Point3<f64>>> {
    let (w, h) = ((depth.width - 1) as f64, (depth.height - 1) as f64);
    pixels
        .iter()
        .enumerate()
        .map(|(i, p)| {
            if !(p.x >= 0.0 && p.y >= 0.0 && p.x <= w && p.y <= h) {
                return Err(Error::invalid(format!(
                    "pixel {i} at ({}, {}) is outside the {}x{} depth map",
                    p.x, p.y, depth.width, depth.height
                )));
            }
            let z = depth.at(p.x, p.y);
            Ok(Point3::new((p.x - k.cx) * z / k.fx, (p.y - k.cy) * z / k.fy, z))
        })
        .collect()
}

fn project_one(p: &Point3<f64>, pose: &Pose, k: &Intrinsics) -> std::result::Result<Point, f64> {
    let c = pose.to_camera(p);
    if c.z <= MIN_DEPTH {
        return Err(c.z);
    }
    Ok(Point::new(k.fx * c.x / c.z + k.cx, k.fy * c.y / c.z + k.cy))
}

/// Pixel positions of world points seen from `pose`.
pub fn project(points: &[Point3<f64>], pose: &Pose, k: &Intrinsics) -> Result<Vec<Point>> {
    points
        .iter()
        .enumerate()
        .map(|(index, p)| project_one(p, pose, k).map_err(|depth| Error::BehindCamera { index, depth }))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct CameraTrajectories {
    pub tracks: TrackSet,
    /// All-ones motion mask.
    pub mask: BitMask2D,
    /// Grid points dropped because they fell behind the camera in some frame.
    pub dropped: usize,
}

/// Sparse tracks of a stride-spaced pixel grid under camera motion.
pub fn pose_to_trajectories(depth: &DepthMap, k: &Intrinsics, poses: &PoseSeq, stride: usize) -> Result<CameraTrajectories> {
    k.validate()?;
    if stride == 0 {
        return Err(Error::format("stride", "must be at least 1"));
    }
    let pixels = grid_points(depth.height, depth.width, stride);
    let world = lift(&pixels, depth, k)?;
    let mut tracks = Vec::with_capacity(world.len());
    let mut dropped = 0;
    for p in &world {
        let positions: std::result::Result<Vec<Point>, f64> =
            poses.poses().iter().map(|pose| project_one(p, pose, k)).collect();
        match positions {
            Ok(pos) => tracks.push(Track::new(pos)?),
            Err(_) => dropped += 1,
        }
    }
    if tracks.is_empty() {
        return Err(Error::invalid(format!("all {dropped} grid points fall behind the camera")));
    }
    Ok(CameraTrajectories {
        tracks: TrackSet::new(poses.len(), tracks)?,
        mask: BitMask2D::ones(depth.height, depth.width),
        dropped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Rotation3;
    use proptest::prelude::*;

    fn k100() -> Intrinsics {
        Intrinsics {
            fx: 100.0,
            fy: 100.0,
            cx: 16.0,
            cy: 12.0,
        }
    }

    fn translate(t: [f64; 3]) -> Pose {
        Pose {
            rotation: Matrix3::identity(),
            translation: Vector3::from(t),
        }
    }

    #[test]
    fn lift_examples() {
        let d = DepthMap::constant(24, 32, 10.0).unwrap();
        let k = k100();
        assert_eq!(lift(&[Point::new(16.0, 12.0)], &d, &k).unwrap()[0], Point3::new(0.0, 0.0, 10.0));
        let kk = Intrinsics { fx: 10.0, ..k };
        let one = DepthMap::constant(24, 32, 1.0).unwrap();
        assert_eq!(lift(&[Point::new(26.0, 12.0)], &one, &kk).unwrap()[0].x, 1.0);
        assert!(lift(&[Point::new(32.0, 0.0)], &d, &k).is_err());
    }

    #[test]
    fn translation_shifts_by_minus_one_pixel() {
        let k = k100();
        let p = project(&[Point3::new(0.0, 0.0, 10.0)], &translate([0.1, 0.0, 0.0]), &k).unwrap();
        assert!((p[0].x - k.cx - (-1.0)).abs() < 1e-9);
        assert!((p[0].y - k.cy).abs() < 1e-12);
    }

    #[test]
    fn roll_keeps_principal_point() {
        let k = k100();
        let roll = Pose {
            rotation: *Rotation3::from_axis_angle(&Vector3::z_axis(), 0.7).matrix(),
            translation: Vector3::zeros(),
        };
        let p = project(&[Point3::new(0.0, 0.0, 5.0)], &roll, &k).unwrap();
        assert!((p[0].x - k.cx).abs() < 1e-12 && (p[0].y - k.cy).abs() < 1e-12);
    }

    #[test]
    fn behind_camera_reports_index() {
        let k = k100();
        let pts = [Point3::new(0.0, 0.0, 10.0), Point3::new(0.0, 0.0, 1.0)];
        match project(&pts, &translate([0.0, 0.0, 2.0]), &k) {
            Err(Error::BehindCamera { index, .. }) => assert_eq!(index, 1),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn identity_poses_give_constant_tracks() {
        let d = DepthMap::constant(32, 32, 4.0).unwrap();
        let poses = PoseSeq::new(vec![Pose::identity(); 5]).unwrap();
        let out = pose_to_trajectories(&d, &k100(), &poses, 16).unwrap();
        assert_eq!(out.tracks.len(), 4);
        assert_eq!(out.dropped, 0);
        for t in out.tracks.tracks() {
            for i in 0..5 {
                assert!(t.displacement(i).x.abs() < 1e-12 && t.displacement(i).y.abs() < 1e-12);
            }
        }
        assert_eq!(out.mask.count_ones(), 32 * 32);
    }

    #[test]
    fn plane_translation_shares_displacement() {
        let z = 8.0;
        let d = DepthMap::constant(32, 48, z).unwrap();
        let k = k100();
        let ts = [0.0, 0.05, 0.1, 0.2];
        let poses = PoseSeq::new(ts.iter().map(|&t| translate([t, 0.0, 0.0])).collect()).unwrap();
        let out = pose_to_trajectories(&d, &k, &poses, 8).unwrap();
        for tr in out.tracks.tracks() {
            for (i, &t) in ts.iter().enumerate() {
                assert!((tr.displacement(i).x - (-k.fx * t / z)).abs() < 1e-9);
                assert!(tr.displacement(i).y.abs() < 1e-9);
            }
        }
    }

    #[test]
    fn behind_camera_points_are_dropped() {
        // Depth ramp: near points go behind the camera after a forward move.
        let (h, w) = (16, 16);
        let depth: Vec<f64> = (0..h * w).map(|i| if i % w < 8 { 1.0 } else { 10.0 }).collect();
        let d = DepthMap::new(h, w, depth).unwrap();
        let poses = PoseSeq::new(vec![Pose::identity(), translate([0.0, 0.0, 2.0])]).unwrap();
        let out = pose_to_trajectories(&d, &k100(), &poses, 4).unwrap();
        assert_eq!(out.tracks.len() + out.dropped, 16);
        assert_eq!(out.dropped, 8);
        let all_near = DepthMap::constant(h, w, 1.0).unwrap();
        assert!(pose_to_trajectories(&all_near, &k100(), &poses, 4).is_err());
    }

    #[test]
    fn pose_json_validation() {
        let ok = br#"{"poses":[{"R":[1,0,0,0,1,0,0,0,1],"t":[0,0,0]},{"R":[1,0,0,0,1,0,0,0,1],"t":[0.1,0,0]}]}"#;
        let seq = PoseSeq::parse(ok).unwrap();
        assert_eq!(PoseSeq::parse(&seq.to_json()).unwrap(), seq);
        let not_identity = br#"{"poses":[{"R":[1,0,0,0,1,0,0,0,1],"t":[1,0,0]}]}"#;
        assert!(PoseSeq::parse(not_identity).is_err());
        let reflect = br#"{"poses":[{"R":[1,0,0,0,1,0,0,0,1],"t":[0,0,0]},{"R":[-1,0,0,0,1,0,0,0,1],"t":[0,0,0]}]}"#;
        assert!(PoseSeq::parse(reflect).is_err());
        let skew = br#"{"poses":[{"R":[1,0,0,0,1,0,0,0,1],"t":[0,0,0]},{"R":[1,0.1,0,0,1,0,0,0,1],"t":[0,0,0]}]}"#;
        assert!(PoseSeq::parse(skew).is_err());
        assert!(PoseSeq::parse(br#"{"poses":[]}"#).is_err());
    }

    proptest! {
        #[test]
        fn lift_project_round_trip(u in 0.0f64..31.0, v in 0.0f64..23.0, z in 0.5f64..50.0) {
            let d = DepthMap::constant(24, 32, z).unwrap();
            let k = Intrinsics { fx: 87.0, fy: 91.0, cx: 15.3, cy: 11.1 };
            let world = lift(&[Point::new(u, v)], &d, &k).unwrap();
            let back = project(&world, &Pose::identity(), &k).unwrap()[0];
            prop_assert!((back.x - u).abs() <= 1e-9 && (back.y - v).abs() <= 1e-9);
            let again = lift(&[back], &d, &k).unwrap()[0];
            prop_assert!((again - world[0]).norm() <= 1e-9);
        }

        #[test]
        fn rigid_transform_invariance(ax in -1.0f64..1.0, ay in -1.0f64..1.0, angle in -1.0f64..1.0,
                                      tx in -0.5f64..0.5, px in -1.0f64..1.0, py in -1.0f64..1.0, pz in 4.0f64..9.0) {
            let k = k100();
            let axis = nalgebra::Unit::new_normalize(Vector3::new(ax, ay, 1.0));
            let q = Rotation3::from_axis_angle(&axis, angle);
            let pose = Pose { rotation: *Rotation3::from_euler_angles(0.05, -0.1, 0.2).matrix(), translation: Vector3::new(tx, 0.1, 0.2) };
            let moved = Pose { rotation: q.matrix() * pose.rotation, translation: q * pose.translation };
            let p = Point3::new(px, py, pz);
            let a = project(&[p], &pose, &k).unwrap()[0];
            let b = project(&[q * p], &moved, &k).unwrap()[0];
            prop_assert!((a.x - b.x).abs() < 1e-9 && (a.y - b.y).abs() < 1e-9);
        }
    }
}
