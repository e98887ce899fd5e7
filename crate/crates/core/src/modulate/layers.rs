//! Forward and backward passes of the toy network's building blocks.
//!
//! Backward functions accumulate into parameter-gradient slices (`+=`) and
//! return the input gradient.

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Group-norm intermediates kept for the backward pass.
#[derive(Debug, Clone)]
pub struct GroupNormCache {
    pub normalized: Tensor,
    pub inv_std: Vec<f64>,
    pub groups: usize,
}

fn check_groups(channels: usize, groups: usize) -> Result<()> {
    if groups == 0 || !channels.is_multiple_of(groups) {
        return Err(Error::shape(format!(
            "{channels} channels are not divisible into {groups} groups"
        )));
    }
    Ok(())
}

/// Normalize each channel group over all frames, positions and channels in the group.
pub fn group_norm(h: &Tensor, groups: usize, eps: f64) -> Result<Tensor> {
    Ok(group_norm_cached(h, groups, eps)?.normalized)
}

pub fn group_norm_cached(h: &Tensor, groups: usize, eps: f64) -> Result<GroupNormCache> {
    let c = h.channels();
    check_groups(c, groups)?;
    let cg = c / groups;
    let n = (h.positions() * cg) as f64;
    let data = h.as_slice();
    let mut mean = vec![0.0; groups];
    for px in data.chunks_exact(c) {
        for (ch, v) in px.iter().enumerate() {
            mean[ch / cg] += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0; groups];
    for px in data.chunks_exact(c) {
        for (ch, v) in px.iter().enumerate() {
            let d = v - mean[ch / cg];
            var[ch / cg] += d * d;
        }
    }
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v / n + eps).sqrt()).collect();
    let mut out = h.clone();
    for px in out.as_mut_slice().chunks_exact_mut(c) {
        for (ch, v) in px.iter_mut().enumerate() {
            let g = ch / cg;
            *v = (*v - mean[g]) * inv_std[g];
        }
    }
    Ok(GroupNormCache {
        normalized: out,
        inv_std,
        groups,
    })
}

pub fn group_norm_backward(cache: &GroupNormCache, d_norm: &Tensor) -> Tensor {
    let xh = &cache.normalized;
    let c = xh.channels();
    let cg = c / cache.groups;
    let n = (xh.positions() * cg) as f64;
    let mut sum_d = vec![0.0; cache.groups];
    let mut sum_dx = vec![0.0; cache.groups];
    for (px, dpx) in xh.as_slice().chunks_exact(c).zip(d_norm.as_slice().chunks_exact(c)) {
        for ch in 0..c {
            sum_d[ch / cg] += dpx[ch];
            sum_dx[ch / cg] += dpx[ch] * px[ch];
        }
    }
    let mut dh = d_norm.clone();
    for (dpx, px) in dh.as_mut_slice().chunks_exact_mut(c).zip(xh.as_slice().chunks_exact(c)) {
        for ch in 0..c {
            let g = ch / cg;
            dpx[ch] = cache.inv_std[g] * (dpx[ch] - sum_d[g] / n - px[ch] * sum_dx[g] / n);
        }
    }
    dh
}

/// Scale/bias modulation with a skip connection: `GN(h)·γ + β + h`.
pub fn modulate(h: &Tensor, gamma: &Tensor, beta: &Tensor, groups: usize, eps: f64) -> Result<Tensor> {
    Ok(modulate_cached(h, gamma, beta, groups, eps)?.0)
}

pub fn modulate_cached(
    h: &Tensor,
    gamma: &Tensor,
    beta: &Tensor,
    groups: usize,
    eps: f64,
) -> Result<(Tensor, GroupNormCache)> {
    h.expect_dims(gamma, "modulate γ")?;
    h.expect_dims(beta, "modulate β")?;
    let gn = group_norm_cached(h, groups, eps)?;
    let mut out = h.clone();
    for (((o, xh), g), b) in out
        .as_mut_slice()
        .iter_mut()
        .zip(gn.normalized.as_slice())
        .zip(gamma.as_slice())
        .zip(beta.as_slice())
    {
        *o += xh * g + b;
    }
    Ok((out, gn))
}

/// Returns `(dh, dγ, dβ)`.
pub fn modulate_backward(cache: &GroupNormCache, gamma: &Tensor, d_out: &Tensor) -> (Tensor, Tensor, Tensor) {
    let d_gamma = d_out.zip(&cache.normalized, |d, xh| d * xh);
    let d_beta = d_out.clone();
    let d_norm = d_out.zip(gamma, |d, g| d * g);
    let dh = group_norm_backward(cache, &d_norm).add(d_out).expect("same dims");
    (dh, d_gamma, d_beta)
}

/// 3×3×3 space-time convolution with zero padding 1 and spatial stride.
///
/// Weights are laid out `[tap][c_in][c_out]`, taps ordered `(t, y, x)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv3d {
    pub c_in: usize,
    pub c_out: usize,
    pub stride: usize,
}

pub const TAPS: usize = 27;

impl Conv3d {
    pub fn weight_len(&self) -> usize {
        TAPS * self.c_in * self.c_out
    }

    pub fn out_size(&self, n: usize) -> usize {
        (n - 1) / self.stride + 1
    }

    fn check(&self, x: &Tensor, w: &[f64], b: &[f64]) -> Result<()> {
        if x.channels() != self.c_in || w.len() != self.weight_len() || b.len() != self.c_out {
            return Err(Error::shape(format!(
                "conv expects {} input channels, got {}",
                self.c_in,
                x.channels()
            )));
        }
        Ok(())
    }

    /// Calls `f(tap, out_index_base, in_index_base)` for each valid tap.
    fn for_each_tap(&self, x: &Tensor, mut f: impl FnMut(usize, usize, usize)) {
        let (l, h, w) = (x.len(), x.height(), x.width());
        let (ho, wo) = (self.out_size(h), self.out_size(w));
        let s = self.stride;
        for t in 0..l {
            for oy in 0..ho {
                for ox in 0..wo {
                    let out_base = ((t * ho + oy) * wo + ox) * self.c_out;
                    for kt in 0..3 {
                        let it = t as isize + kt as isize - 1;
                        if it < 0 || it >= l as isize {
                            continue;
                        }
                        for ky in 0..3 {
                            let iy = (oy * s) as isize + ky as isize - 1;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            for kx in 0..3 {
                                let ix = (ox * s) as isize + kx as isize - 1;
                                if ix < 0 || ix >= w as isize {
                                    continue;
                                }
                                let tap = (kt * 3 + ky) * 3 + kx;
                                let in_base = ((it as usize * h + iy as usize) * w + ix as usize) * self.c_in;
                                f(tap, out_base, in_base);
                            }
                        }
                    }
                }
            }
        }
    }

    pub fn forward(&self, x: &Tensor, w: &[f64], b: &[f64]) -> Result<Tensor> {
        self.check(x, w, b)?;
        let mut out = Tensor::zeros(x.len(), self.out_size(x.height()), self.out_size(x.width()), self.c_out);
        for px in out.as_mut_slice().chunks_exact_mut(self.c_out) {
            px.copy_from_slice(b);
        }
        let (ci, co) = (self.c_in, self.c_out);
        let xs = x.as_slice();
        let os = out.as_mut_slice();
        self.for_each_tap(x, |tap, ob, ib| {
            let wt = &w[tap * ci * co..(tap + 1) * ci * co];
            let o = &mut os[ob..ob + co];
            for (i, &xv) in xs[ib..ib + ci].iter().enumerate() {
                if xv != 0.0 {
                    for (ov, wv) in o.iter_mut().zip(&wt[i * co..(i + 1) * co]) {
                        *ov += xv * wv;
                    }
                }
            }
        });
        Ok(out)
    }

    pub fn backward(&self, x: &Tensor, w: &[f64], d_out: &Tensor, dw: &mut [f64], db: &mut [f64]) -> Tensor {
        let (ci, co) = (self.c_in, self.c_out);
        for px in d_out.as_slice().chunks_exact(co) {
            for (g, d) in db.iter_mut().zip(px) {
                *g += d;
            }
        }
        let mut dx = Tensor::zeros(x.len(), x.height(), x.width(), ci);
        let xs = x.as_slice();
        let ds = d_out.as_slice();
        let dxs = dx.as_mut_slice();
        self.for_each_tap(x, |tap, ob, ib| {
            let d = &ds[ob..ob + co];
            let base = tap * ci * co;
            for i in 0..ci {
                let row = base + i * co;
                let wr = &w[row..row + co];
                let mut acc = 0.0;
                for (wv, dv) in wr.iter().zip(d) {
                    acc += wv * dv;
                }
                dxs[ib + i] += acc;
                let xv = xs[ib + i];
                if xv != 0.0 {
                    for (g, dv) in dw[row..row + co].iter_mut().zip(d) {
                        *g += xv * dv;
                    }
                }
            }
        });
        dx
    }
}

/// Per-position channel mixing `y = W x + b` with `W` stored `c_out × c_in`.
pub fn linear(x: &Tensor, w: &[f64], b: &[f64], c_out: usize) -> Result<Tensor> {
    let ci = x.channels();
    if w.len() != c_out * ci || b.len() != c_out {
        return Err(Error::shape(format!("linear expects {c_out}x{ci} weights")));
    }
    let mut out = Tensor::zeros(x.len(), x.height(), x.width(), c_out);
    for (o, xi) in out.as_mut_slice().chunks_exact_mut(c_out).zip(x.as_slice().chunks_exact(ci)) {
        for (r, ov) in o.iter_mut().enumerate() {
            *ov = b[r] + w[r * ci..(r + 1) * ci].iter().zip(xi).map(|(a, b)| a * b).sum::<f64>();
        }
    }
    Ok(out)
}

/// Accumulates `dW` (`c_out × c_in`) and `db`; returns `dx`.
pub fn linear_backward(x: &Tensor, w: &[f64], d_out: &Tensor, dw: &mut [f64], db: &mut [f64]) -> Tensor {
    let ci = x.channels();
    let co = d_out.channels();
    let mut dx = Tensor::zeros(x.len(), x.height(), x.width(), ci);
    for ((d, xi), dxi) in d_out
        .as_slice()
        .chunks_exact(co)
        .zip(x.as_slice().chunks_exact(ci))
        .zip(dx.as_mut_slice().chunks_exact_mut(ci))
    {
        for r in 0..co {
            db[r] += d[r];
            for c in 0..ci {
                dw[r * ci + c] += d[r] * xi[c];
                dxi[c] += d[r] * w[r * ci + c];
            }
        }
    }
    dx
}

pub fn silu(x: &Tensor) -> Tensor {
    x.map(|v| v / (1.0 + (-v).exp()))
}

pub fn silu_backward(x: &Tensor, d_out: &Tensor) -> Tensor {
    x.zip(d_out, |v, d| {
        let s = 1.0 / (1.0 + (-v).exp());
        d * s * (1.0 + v * (1.0 - s))
    })
}

/// Spatial average pooling by `k` (time is untouched).
pub fn avg_pool(x: &Tensor, k: usize) -> Result<Tensor> {
    if k == 0 || !x.height().is_multiple_of(k) || !x.width().is_multiple_of(k) {
        return Err(Error::shape(format!(
            "{}x{} is not divisible by pooling factor {k}",
            x.height(),
            x.width()
        )));
    }
    let (h, w, c) = (x.height() / k, x.width() / k, x.channels());
    let inv = 1.0 / (k * k) as f64;
    Ok(Tensor::from_fn(x.len(), h, w, c, |i, y, xx, ch| {
        let mut s = 0.0;
        for dy in 0..k {
            for dx in 0..k {
                s += x.get(i, y * k + dy, xx * k + dx, ch);
            }
        }
        s * inv
    }))
}

pub fn avg_pool_backward(d_out: &Tensor, k: usize) -> Tensor {
    let inv = 1.0 / (k * k) as f64;
    upsample_nearest(d_out, k).scale(inv)
}

/// Spatial nearest-neighbor upsampling by `k`.
pub fn upsample_nearest(x: &Tensor, k: usize) -> Tensor {
    Tensor::from_fn(x.len(), x.height() * k, x.width() * k, x.channels(), |i, y, xx, c| {
        x.get(i, y / k, xx / k, c)
    })
}

pub fn upsample_nearest_backward(d_out: &Tensor, k: usize) -> Tensor {
    avg_pool(d_out, k).expect("upsampled dims divide").scale((k * k) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(l: usize, h: usize, w: usize, c: usize, seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_fn(l, h, w, c, |_, _, _, _| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn group_norm_constant_is_zero() {
        let t = Tensor::from_fn(2, 3, 3, 4, |_, _, _, _| 7.5);
        assert!(group_norm(&t, 2, 1e-5).unwrap().as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn group_norm_two_values() {
        let t = Tensor::from_vec(1, 1, 2, 1, vec![1.0, 3.0]).unwrap();
        let g = group_norm(&t, 1, 1e-5).unwrap();
        let expect = 1.0 / (1.0f64 + 1e-5).sqrt();
        assert!((g.as_slice()[0] + expect).abs() < 1e-12);
        assert!((g.as_slice()[1] - expect).abs() < 1e-12);
        assert!((expect - 1.0).abs() < 1e-5);
    }

    #[test]
    fn group_norm_rejects_bad_groups() {
        assert!(group_norm(&Tensor::zeros(1, 2, 2, 6), 4, 1e-5).is_err());
    }

    #[test]
    fn group_norm_moments() {
        let t = random(3, 4, 4, 8, 1);
        let g = group_norm(&t, 4, 1e-5).unwrap();
        for grp in 0..4 {
            let vals: Vec<f64> = g
                .as_slice()
                .chunks_exact(8)
                .flat_map(|px| px[grp * 2..grp * 2 + 2].to_vec())
                .collect();
            let n = vals.len() as f64;
            let m = vals.iter().sum::<f64>() / n;
            let v = vals.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n;
            assert!(m.abs() < 1e-12);
            assert!((v - 1.0).abs() < 1e-3);
        }
    }

    #[test]
    fn modulate_zero_is_identity() {
        let h = random(2, 3, 3, 4, 2);
        let z = Tensor::zeros(2, 3, 3, 4);
        assert_eq!(modulate(&h, &z, &z, 2, 1e-5).unwrap(), h);
    }

    #[test]
    fn modulate_constant_input() {
        let h = Tensor::from_fn(2, 2, 2, 4, |_, _, _, _| 0.25);
        let g = random(2, 2, 2, 4, 3);
        let b = random(2, 2, 2, 4, 4);
        let out = modulate(&h, &g, &b, 4, 1e-5).unwrap();
        let expect = b.map(|v| v + 0.25);
        assert!(out.max_abs_diff(&expect) == 0.0);
    }

    #[test]
    fn modulate_matches_scalar_loop() {
        let (l, hh, ww, c, groups, eps) = (2, 3, 2, 6, 3, 1e-5);
        let h = random(l, hh, ww, c, 5);
        let g = random(l, hh, ww, c, 6);
        let b = random(l, hh, ww, c, 7);
        let out = modulate(&h, &g, &b, groups, eps).unwrap();
        let cg = c / groups;
        for grp in 0..groups {
            let mut vals = Vec::new();
            for i in 0..l {
                for y in 0..hh {
                    for x in 0..ww {
                        for ch in grp * cg..(grp + 1) * cg {
                            vals.push(h.get(i, y, x, ch));
                        }
                    }
                }
            }
            let n = vals.len() as f64;
            let mean = vals.iter().sum::<f64>() / n;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            for i in 0..l {
                for y in 0..hh {
                    for x in 0..ww {
                        for ch in grp * cg..(grp + 1) * cg {
                            let gn = (h.get(i, y, x, ch) - mean) / (var + eps).sqrt();
                            let e = gn * g.get(i, y, x, ch) + b.get(i, y, x, ch) + h.get(i, y, x, ch);
                            assert!((out.get(i, y, x, ch) - e).abs() < 1e-12);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn modulate_shape_mismatch() {
        let h = Tensor::zeros(1, 2, 2, 4);
        assert!(modulate(&h, &Tensor::zeros(1, 2, 3, 4), &h, 2, 1e-5).is_err());
    }

    #[test]
    fn conv_matches_direct_sum() {
        let conv = Conv3d { c_in: 2, c_out: 3, stride: 2 };
        let x = random(3, 5, 4, 2, 8);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let w: Vec<f64> = (0..conv.weight_len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let b = vec![0.1, -0.2, 0.3];
        let y = conv.forward(&x, &w, &b).unwrap();
        assert_eq!(y.dims(), [3, 3, 2, 3]);
        for t in 0..3 {
            for oy in 0..3 {
                for ox in 0..2 {
                    for co in 0..3 {
                        let mut s = b[co];
                        for kt in 0..3i64 {
                            for ky in 0..3i64 {
                                for kx in 0..3i64 {
                                    let (it, iy, ix) = (t as i64 + kt - 1, oy as i64 * 2 + ky - 1, ox as i64 * 2 + kx - 1);
                                    if it < 0 || iy < 0 || ix < 0 || it >= 3 || iy >= 5 || ix >= 4 {
                                        continue;
                                    }
                                    for ci in 0..2 {
                                        let tap = ((kt * 3 + ky) * 3 + kx) as usize;
                                        s += w[(tap * 2 + ci) * 3 + co] * x.get(it as usize, iy as usize, ix as usize, ci);
                                    }
                                }
                            }
                        }
                        assert!((y.get(t, oy, ox, co) - s).abs() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn pooling_adjoint_pairs() {
        // <P x, y> = <x, P* y> for pooling and upsampling
        let x = random(2, 4, 6, 3, 10);
        let y = random(2, 2, 3, 3, 11);
        let dot = |a: &Tensor, b: &Tensor| a.as_slice().iter().zip(b.as_slice()).map(|(p, q)| p * q).sum::<f64>();
        let px = avg_pool(&x, 2).unwrap();
        assert!((dot(&px, &y) - dot(&x, &avg_pool_backward(&y, 2))).abs() < 1e-12);
        let uy = upsample_nearest(&y, 2);
        assert!((dot(&uy, &x) - dot(&y, &upsample_nearest_backward(&x, 2))).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn modulate_zero_identity_prop(seed in 0u64..1000, l in 1usize..3, h in 1usize..4, w in 1usize..4) {
            let t = random(l, h, w, 4, seed);
            let z = Tensor::zeros(l, h, w, 4);
            prop_assert_eq!(modulate(&t, &z, &z, 4, 1e-5).unwrap(), t);
        }
    }
}
