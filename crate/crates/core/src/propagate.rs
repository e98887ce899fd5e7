//! Preview rendering: densify sparse condition trajectories inside the motion
//! mask, then backward-warp the reference frame.
//!
//! The warp samples the reference at `p - flow_i(p)`, treating the forward
//! displacement at `p` as if it were the displacement of the source pixel.
//! That is exact for locally constant flow and degrades under large rotations.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::condition::ConditionTensors;
use crate::error::{Error, Result};
use crate::grid::{FlowField, Grid, VideoClip};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DensifyConfig {
    pub power: f64,
}

impl Default for DensifyConfig {
    fn default() -> Self {
        Self { power: 2.0 }
    }
}

/// Inverse-distance-weighted densification of the condition trajectory.
///
/// Data sites are the mask pixels whose trajectory is nonzero in at least one
/// frame; each frame interpolates the sites' displacements for that frame.
/// Pixels outside the motion mask get zero flow.
pub fn densify(cond: &ConditionTensors, cfg: &DensifyConfig) -> Result<FlowField> {
    if !(cfg.power > 0.0 && cfg.power.is_finite()) {
        return Err(Error::format("power", "must be positive"));
    }
    let (len, h, w) = (cond.len(), cond.height(), cond.width());
    let mask = cond.motion_mask();
    let carries = |x: usize, y: usize| (0..len).any(|i| cond.traj.at(i, x, y) != [0.0, 0.0]);
    let sites: Vec<(usize, usize)> = (0..h)
        .flat_map(|y| (0..w).map(move |x| (x, y)))
        .filter(|&(x, y)| mask.get(x, y) && carries(x, y))
        .collect();
    if sites.is_empty() {
        if mask.is_empty() {
            return Ok(FlowField::zeros(len, h, w));
        }
        return Err(Error::UnconstrainedMotion);
    }
    // values[s][i] = displacement of site s at frame i
    let values: Vec<Vec<[f64; 2]>> = sites
        .iter()
        .map(|&(x, y)| (0..len).map(|i| cond.traj.at(i, x, y)).collect())
        .collect();
    let half_power = cfg.power / 2.0;

    // One row of `len * w * 2` outputs per image row, frame-major within the row.
    let rows: Vec<Vec<f64>> = (0..h)
        .into_par_iter()
        .map(|y| {
            let mut row = vec![0.0; len * w * 2];
            let mut acc = vec![[0.0f64; 2]; len];
            for x in 0..w {
                if !mask.get(x, y) {
                    continue;
                }
                acc.iter_mut().for_each(|a| *a = [0.0, 0.0]);
                let mut exact = None;
                let mut total = 0.0;
                for (s, &(sx, sy)) in sites.iter().enumerate() {
                    let dx = sx as f64 - x as f64;
                    let dy = sy as f64 - y as f64;
                    let d2 = dx * dx + dy * dy;
                    if d2 == 0.0 {
                        exact = Some(s);
                        break;
                    }
                    let wgt = d2.powf(-half_power);
                    total += wgt;
                    for (a, v) in acc.iter_mut().zip(&values[s]) {
                        a[0] += wgt * v[0];
                        a[1] += wgt * v[1];
                    }
                }
                for i in 0..len {
                    let v = match exact {
                        Some(s) => values[s][i],
                        None => [acc[i][0] / total, acc[i][1] / total],
                    };
                    let j = (i * w + x) * 2;
                    row[j] = v[0];
                    row[j + 1] = v[1];
                }
            }
            row
        })
        .collect();

    let mut data = vec![0.0; len * h * w * 2];
    for (y, row) in rows.iter().enumerate() {
        for i in 0..len {
            let src = &row[i * w * 2..(i + 1) * w * 2];
            let dst = ((i * h + y) * w) * 2;
            data[dst..dst + w * 2].copy_from_slice(src);
        }
    }
    FlowField::from_vec(len, h, w, data)
}

/// Backward warp: frame `i` at `p` samples `first` at `p - dense[i](p)`.
pub fn warp_clip(first: &Grid, dense: &FlowField) -> Result<VideoClip> {
    if first.channels() != 3 || first.height() != dense.height() || first.width() != dense.width() {
        return Err(Error::shape(format!(
            "frame {}x{}x{} does not match flow {}x{}",
            first.height(),
            first.width(),
            first.channels(),
            dense.height(),
            dense.width()
        )));
    }
    let (h, w) = (first.height(), first.width());
    let frames = (0..dense.len())
        .into_par_iter()
        .map(|i| {
            let mut out = Grid::zeros(h, w, 3);
            let mut px = [0.0; 3];
            for y in 0..h {
                for x in 0..w {
                    let d = dense.at(i, x, y);
                    first.sample_into(x as f64 - d[0], y as f64 - d[1], &mut px);
                    out.pixel_mut(x, y)
                        .iter_mut()
                        .zip(px)
                        .for_each(|(o, v)| *o = v.clamp(0.0, 1.0));
                }
            }
            out
        })
        .collect();
    VideoClip::new(frames, 8.0)
}

/// Densify then warp; returns the clip and the dense flow it was warped with.
pub fn preview(first: &Grid, cond: &ConditionTensors, cfg: &DensifyConfig) -> Result<(VideoClip, FlowField)> {
    let dense = densify(cond, cfg)?;
    Ok((warp_clip(first, &dense)?, dense))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::condition::repeat_motion_mask;
    use crate::grid::BitMask2D;

    fn cond_with_sites(len: usize, h: usize, w: usize, sites: &[((usize, usize), [f64; 2])], mask: BitMask2D) -> ConditionTensors {
        let mut data = vec![0.0; len * h * w * 2];
        for i in 1..len {
            for &((x, y), d) in sites {
                let j = ((i * h + y) * w + x) * 2;
                data[j] = d[0] * i as f64;
                data[j + 1] = d[1] * i as f64;
            }
        }
        ConditionTensors::new(FlowField::from_vec(len, h, w, data).unwrap(), repeat_motion_mask(&mask, len)).unwrap()
    }

    #[test]
    fn single_site_is_constant() {
        let c = cond_with_sites(3, 6, 7, &[((2, 3), [5.0, 0.0])], BitMask2D::ones(6, 7));
        let f = densify(&c, &DensifyConfig::default()).unwrap();
        for y in 0..6 {
            for x in 0..7 {
                assert_eq!(f.at(0, x, y), [0.0, 0.0]);
                let d = f.at(1, x, y);
                assert!((d[0] - 5.0).abs() < 1e-12 && d[1] == 0.0);
            }
        }
    }

    #[test]
    fn empty_mask_gives_zero_field() {
        let c = cond_with_sites(3, 4, 4, &[((1, 1), [1.0, 1.0])], BitMask2D::zeros(4, 4));
        let f = densify(&c, &DensifyConfig::default()).unwrap();
        assert!(f.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn equidistant_sites_average() {
        let c = cond_with_sites(2, 1, 11, &[((0, 0), [2.0, 0.0]), ((10, 0), [0.0, 4.0])], BitMask2D::ones(1, 11));
        let f = densify(&c, &DensifyConfig::default()).unwrap();
        let d = f.at(1, 5, 0);
        assert!((d[0] - 1.0).abs() < 1e-12 && (d[1] - 2.0).abs() < 1e-12);
        assert_eq!(f.at(1, 0, 0), [2.0, 0.0]);
        assert_eq!(f.at(1, 10, 0), [0.0, 4.0]);
    }

    #[test]
    fn unconstrained_region_is_an_error() {
        let c = ConditionTensors::new(FlowField::zeros(3, 4, 4), repeat_motion_mask(&BitMask2D::ones(4, 4), 3)).unwrap();
        assert!(matches!(densify(&c, &DensifyConfig::default()), Err(Error::UnconstrainedMotion)));
    }

    #[test]
    fn output_vanishes_outside_mask() {
        let mask = BitMask2D::from_fn(8, 8, |x, _| x < 4);
        let c = cond_with_sites(3, 8, 8, &[((1, 1), [1.0, 2.0]), ((6, 6), [3.0, 0.0])], mask.clone());
        let f = densify(&c, &DensifyConfig::default()).unwrap();
        for i in 0..3 {
            for y in 0..8 {
                for x in 0..8 {
                    if !mask.get(x, y) {
                        assert_eq!(f.at(i, x, y), [0.0, 0.0]);
                    }
                }
            }
        }
    }

    #[test]
    fn zero_flow_warp_is_identity() {
        let data: Vec<f64> = (0..4 * 5 * 3).map(|i| (i as f64 * 0.37).fract()).collect();
        let first = Grid::from_vec(4, 5, 3, data).unwrap();
        let clip = warp_clip(&first, &FlowField::zeros(3, 4, 5)).unwrap();
        assert_eq!(clip, VideoClip::constant(&first, 3, 8.0).unwrap());
    }

    #[test]
    fn uniform_flow_shifts_right() {
        let data: Vec<f64> = (0..3 * 6 * 3).map(|i| ((i / 3) % 6) as f64 / 5.0).collect();
        let first = Grid::from_vec(3, 6, 3, data).unwrap();
        let mut flow = vec![0.0; 2 * 3 * 6 * 2];
        for v in flow[3 * 6 * 2..].chunks_exact_mut(2) {
            v[0] = 1.0;
        }
        let clip = warp_clip(&first, &FlowField::from_vec(2, 3, 6, flow).unwrap()).unwrap();
        for y in 0..3 {
            for x in 0..6usize {
                let src = x.saturating_sub(1);
                assert_eq!(clip.frame(1).pixel(x, y), first.pixel(src, y));
            }
        }
    }
}
