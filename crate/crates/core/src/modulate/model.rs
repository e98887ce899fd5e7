//! Two-scale space-time denoiser with a motion encoder that injects
//! scale/bias modulation at both scales.
//!
//! Latents are `2 · avgpool4(clip) − 1`. The denoiser input at each frame is
//! the preconditioned noisy latent, the frame-1 latent, and a constant
//! noise-level channel. Layout of one pass:
//!
//! ```text
//! x0 = [c_in z | c_I | c_noise]           (L, h, w, 7)
//! h1 = mod1(silu(conv_a(lin_in(x0))))      scale 1
//! h2 = mod2(silu(conv_b(avgpool2(h1))))    scale 2
//! F  = lin_out(silu(up2(h2) + h1))
//! ẑ0 = c_skip z + c_out F
//! ```
//!
//! The motion encoder runs three stride-2 convolutions on the pixel-resolution
//! condition; zero-initialized heads read the second and third outputs.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::edm::{edm_precondition, EdmSchedule, Preconditioning};
use super::layers::{self, Conv3d, GroupNormCache};
use super::lora::{check_rank, factor_grads, low_rank_product};
use super::params::Params;
use super::tensor::Tensor;
use crate::condition::ConditionTensors;
use crate::error::{Error, Result};
use crate::grid::VideoClip;

/// Spatial downsampling of the latent codec.
pub const LATENT_POOL: usize = 4;
pub const LATENT_CHANNELS: usize = 3;
/// Condition channels: trajectory x, trajectory y, motion mask.
pub const COND_CHANNELS: usize = 3;
const INPUT_CHANNELS: usize = 2 * LATENT_CHANNELS + 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToyConfig {
    pub channels: usize,
    pub groups: usize,
    pub encoder_channels: usize,
    pub lora_rank: usize,
    /// Trajectory values are multiplied by this before entering the encoder.
    pub traj_scale: f64,
    pub gn_eps: f64,
    pub init_seed: u64,
}

impl Default for ToyConfig {
    fn default() -> Self {
        Self {
            channels: 8,
            groups: 4,
            encoder_channels: 8,
            lora_rank: 2,
            traj_scale: 0.125,
            gn_eps: 1e-5,
            init_seed: 0,
        }
    }
}

impl ToyConfig {
    /// Largest LoRA rank both adapted maps admit.
    pub fn max_lora_rank(&self) -> usize {
        self.channels.min(INPUT_CHANNELS).min(LATENT_CHANNELS)
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels == 0 || self.groups == 0 || !self.channels.is_multiple_of(self.groups) {
            return Err(Error::format("model.channels", "must be a positive multiple of model.groups"));
        }
        if self.encoder_channels == 0 {
            return Err(Error::format("model.encoder_channels", "must be positive"));
        }
        check_rank(self.channels, INPUT_CHANNELS, self.lora_rank)
            .and_then(|_| check_rank(LATENT_CHANNELS, self.channels, self.lora_rank))
            .map_err(|e| Error::format("model.lora_rank", e.to_string()))?;
        if !(self.gn_eps > 0.0) || !self.traj_scale.is_finite() {
            return Err(Error::format("model", "gn_eps must be positive and traj_scale finite"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
struct Lin {
    w: usize,
    b: usize,
    a: usize,
    bb: usize,
    c_in: usize,
    c_out: usize,
}

#[derive(Debug, Clone, Copy)]
struct Conv {
    w: usize,
    b: usize,
    op: Conv3d,
}

#[derive(Debug, Clone, Copy)]
struct Layout {
    lin_in: Lin,
    conv_a: Conv,
    conv_b: Conv,
    lin_out: Lin,
    enc: [Conv; 3],
    heads: [Conv; 2],
}

/// The toy conditioned denoiser: weights plus configuration.
#[derive(Debug, Clone)]
pub struct ToyDenoiser {
    pub config: ToyConfig,
    pub schedule: EdmSchedule,
    pub params: Params,
    layout: Layout,
}

/// Per-scale `(γ, β)` from the motion encoder.
#[derive(Debug, Clone, PartialEq)]
pub struct Modulation {
    pub gamma: Tensor,
    pub beta: Tensor,
}

struct EncoderCache {
    input: Tensor,
    pre: [Tensor; 3],
    post: [Tensor; 3],
    gammas: [Tensor; 2],
}

/// Everything the backward pass needs from one forward pass.
pub struct ForwardCache {
    pre: Preconditioning,
    x0: Tensor,
    w_in: Vec<f64>,
    a1: Tensor,
    a2: Tensor,
    gn1: GroupNormCache,
    p: Tensor,
    b1: Tensor,
    gn2: GroupNormCache,
    u: Tensor,
    u2: Tensor,
    w_out: Vec<f64>,
    enc: EncoderCache,
}

fn normal_vec(rng: &mut ChaCha8Rng, n: usize, std: f64) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let v: f64 = rng.sample(StandardNormal);
            v * std
        })
        .collect()
}

impl ToyDenoiser {
    /// Fresh weights; scale/bias heads and the LoRA up-factors start at zero.
    pub fn new(config: ToyConfig, schedule: EdmSchedule) -> Result<Self> {
        config.validate()?;
        schedule.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.init_seed);
        let mut params = Params::default();
        let (c, e, r) = (config.channels, config.encoder_channels, config.lora_rank);

        let lin = |params: &mut Params, rng: &mut ChaCha8Rng, name: &str, c_in: usize, c_out: usize| {
            let w = params.push(&format!("{name}.weight"), &[c_out, c_in], normal_vec(rng, c_out * c_in, (1.0 / c_in as f64).sqrt()));
            let b = params.push(&format!("{name}.bias"), &[c_out], vec![0.0; c_out]);
            let a = params.push(&format!("{name}.lora_a"), &[c_out, r], vec![0.0; c_out * r]);
            let bb = params.push(&format!("{name}.lora_b"), &[c_in, r], normal_vec(rng, c_in * r, (1.0 / c_in as f64).sqrt()));
            Lin { w, b, a, bb, c_in, c_out }
        };
        let conv = |params: &mut Params, rng: &mut ChaCha8Rng, name: &str, c_in: usize, c_out: usize, stride: usize, zero: bool| {
            let op = Conv3d { c_in, c_out, stride };
            let std = (1.0 / (layers::TAPS * c_in) as f64).sqrt();
            let data = if zero { vec![0.0; op.weight_len()] } else { normal_vec(rng, op.weight_len(), std) };
            let w = params.push(&format!("{name}.weight"), &[layers::TAPS, c_in, c_out], data);
            let b = params.push(&format!("{name}.bias"), &[c_out], vec![0.0; c_out]);
            Conv { w, b, op }
        };

        let lin_in = lin(&mut params, &mut rng, "in", INPUT_CHANNELS, c);
        let conv_a = conv(&mut params, &mut rng, "scale1.conv", c, c, 1, false);
        let conv_b = conv(&mut params, &mut rng, "scale2.conv", c, c, 1, false);
        let lin_out = lin(&mut params, &mut rng, "out", c, LATENT_CHANNELS);
        let enc = [
            conv(&mut params, &mut rng, "encoder.conv1", COND_CHANNELS, e, 2, false),
            conv(&mut params, &mut rng, "encoder.conv2", e, e, 2, false),
            conv(&mut params, &mut rng, "encoder.conv3", e, e, 2, false),
        ];
        let heads = [
            conv(&mut params, &mut rng, "encoder.head1", e, 2 * c, 1, true),
            conv(&mut params, &mut rng, "encoder.head2", e, 2 * c, 1, true),
        ];
        Ok(Self {
            config,
            schedule,
            params,
            layout: Layout {
                lin_in,
                conv_a,
                conv_b,
                lin_out,
                enc,
                heads,
            },
        })
    }

    /// Names of the scale/bias head parameters.
    pub fn head_parameter_names(&self) -> Vec<String> {
        self.layout
            .heads
            .iter()
            .flat_map(|h| [h.w, h.b])
            .map(|id| self.params.items()[id].name.clone())
            .collect()
    }

    fn fused(&self, l: &Lin) -> Vec<f64> {
        let r = self.config.lora_rank;
        let delta = low_rank_product(self.params.get(l.a), self.params.get(l.bb), l.c_out, l.c_in, r);
        self.params.get(l.w).iter().zip(delta).map(|(w, d)| w + d).collect()
    }

    fn conv_fwd(&self, c: &Conv, x: &Tensor) -> Result<Tensor> {
        c.op.forward(x, self.params.get(c.w), self.params.get(c.b))
    }

    fn encoder_cached(&self, cond: &Tensor) -> Result<(Vec<Modulation>, EncoderCache)> {
        if cond.channels() != COND_CHANNELS {
            return Err(Error::shape(format!("condition needs {COND_CHANNELS} channels")));
        }
        if !cond.height().is_multiple_of(2 * LATENT_POOL) || !cond.width().is_multiple_of(2 * LATENT_POOL) {
            return Err(Error::shape(format!(
                "condition {}x{} is not divisible by {}",
                cond.height(),
                cond.width(),
                2 * LATENT_POOL
            )));
        }
        let l = &self.layout;
        let pre1 = self.conv_fwd(&l.enc[0], cond)?;
        let post1 = layers::silu(&pre1);
        let pre2 = self.conv_fwd(&l.enc[1], &post1)?;
        let post2 = layers::silu(&pre2);
        let pre3 = self.conv_fwd(&l.enc[2], &post2)?;
        let post3 = layers::silu(&pre3);
        let c = self.config.channels;
        let (g1, b1) = self.conv_fwd(&l.heads[0], &post2)?.split_channels(c);
        let (g2, b2) = self.conv_fwd(&l.heads[1], &post3)?.split_channels(c);
        let mods = vec![
            Modulation {
                gamma: g1.clone(),
                beta: b1,
            },
            Modulation {
                gamma: g2.clone(),
                beta: b2,
            },
        ];
        Ok((
            mods,
            EncoderCache {
                input: cond.clone(),
                pre: [pre1, pre2, pre3],
                post: [post1, post2, post3],
                gammas: [g1, g2],
            },
        ))
    }

    /// Per-scale `(γ_s, β_s)` for an encoder input from [`condition_input`].
    pub fn encoder_forward(&self, cond: &Tensor) -> Result<Vec<Modulation>> {
        Ok(self.encoder_cached(cond)?.0)
    }

    /// `ẑ0` for noisy latent `z`, noise level `σ`, frame-1 latent `c_i` and encoder input `cond`.
    pub fn forward(&self, z: &Tensor, sigma: f64, c_i: &Tensor, cond: &Tensor) -> Result<Tensor> {
        Ok(self.forward_cached(z, sigma, c_i, cond)?.0)
    }

    pub fn forward_cached(&self, z: &Tensor, sigma: f64, c_i: &Tensor, cond: &Tensor) -> Result<(Tensor, ForwardCache)> {
        let [len, h, w, ch] = z.dims();
        if ch != LATENT_CHANNELS || h % 2 != 0 || w % 2 != 0 {
            return Err(Error::shape(format!("latent {:?} must have 3 channels and even size", z.dims())));
        }
        if c_i.dims() != [1, h, w, LATENT_CHANNELS] {
            return Err(Error::shape("frame-1 latent does not match the noisy latent"));
        }
        if cond.len() != len || cond.height() != h * LATENT_POOL || cond.width() != w * LATENT_POOL {
            return Err(Error::shape(format!(
                "condition {:?} does not match latent {:?}",
                cond.dims(),
                z.dims()
            )));
        }
        let pre = edm_precondition(sigma, &self.schedule)?;
        if !pre.c_noise.is_finite() {
            return Err(Error::invalid("noise level must be positive and finite"));
        }
        let (mods, enc) = self.encoder_cached(cond)?;
        let l = &self.layout;
        let (groups, eps) = (self.config.groups, self.config.gn_eps);

        let noise = Tensor::from_fn(len, h, w, 1, |_, _, _, _| pre.c_noise);
        let x0 = Tensor::concat(&[&z.scale(pre.c_in), &c_i.repeat_frames(len)?, &noise])?;
        let w_in = self.fused(&l.lin_in);
        let a1 = layers::linear(&x0, &w_in, self.params.get(l.lin_in.b), l.lin_in.c_out)?;
        let a2 = self.conv_fwd(&l.conv_a, &a1)?;
        let a3 = layers::silu(&a2);
        let (h1, gn1) = layers::modulate_cached(&a3, &mods[0].gamma, &mods[0].beta, groups, eps)?;
        let p = layers::avg_pool(&h1, 2)?;
        let b1 = self.conv_fwd(&l.conv_b, &p)?;
        let b2 = layers::silu(&b1);
        let (h2, gn2) = layers::modulate_cached(&b2, &mods[1].gamma, &mods[1].beta, groups, eps)?;
        let u = layers::upsample_nearest(&h2, 2).add(&h1)?;
        let u2 = layers::silu(&u);
        let w_out = self.fused(&l.lin_out);
        let f = layers::linear(&u2, &w_out, self.params.get(l.lin_out.b), LATENT_CHANNELS)?;
        let pred = z.zip(&f, |zv, fv| pre.c_skip * zv + pre.c_out * fv);
        Ok((
            pred,
            ForwardCache {
                pre,
                x0,
                w_in,
                a1,
                a2,
                gn1,
                p,
                b1,
                gn2,
                u,
                u2,
                w_out,
                enc,
            },
        ))
    }

    /// Parameter gradients given `∂loss/∂ẑ0`, accumulated into `grads`.
    pub fn backward(&self, cache: &ForwardCache, d_pred: &Tensor, grads: &mut [Vec<f64>]) {
        let l = &self.layout;
        let d_f = d_pred.scale(cache.pre.c_out);
        let d_u2 = self.lin_backward(&l.lin_out, &cache.u2, &cache.w_out, &d_f, grads);
        let d_u = layers::silu_backward(&cache.u, &d_u2);
        let d_h2 = layers::upsample_nearest_backward(&d_u, 2);
        let (d_b2, d_g2, d_be2) = layers::modulate_backward(&cache.gn2, &cache.enc.gammas[1], &d_h2);
        let d_b1 = layers::silu_backward(&cache.b1, &d_b2);
        let d_p = self.conv_backward(&l.conv_b, &cache.p, &d_b1, grads);
        let d_h1 = d_u.add(&layers::avg_pool_backward(&d_p, 2)).expect("scale-1 dims");
        let (d_a3, d_g1, d_be1) = layers::modulate_backward(&cache.gn1, &cache.enc.gammas[0], &d_h1);
        let d_a2 = layers::silu_backward(&cache.a2, &d_a3);
        let d_a1 = self.conv_backward(&l.conv_a, &cache.a1, &d_a2, grads);
        self.lin_backward(&l.lin_in, &cache.x0, &cache.w_in, &d_a1, grads);

        let e = &cache.enc;
        let d_head1 = Tensor::concat(&[&d_g1, &d_be1]).expect("head dims");
        let d_head2 = Tensor::concat(&[&d_g2, &d_be2]).expect("head dims");
        let mut d_post2 = self.conv_backward(&l.heads[0], &e.post[1], &d_head1, grads);
        let d_post3 = self.conv_backward(&l.heads[1], &e.post[2], &d_head2, grads);
        let d_pre3 = layers::silu_backward(&e.pre[2], &d_post3);
        d_post2 = d_post2.add(&self.conv_backward(&l.enc[2], &e.post[1], &d_pre3, grads)).expect("encoder dims");
        let d_pre2 = layers::silu_backward(&e.pre[1], &d_post2);
        let d_post1 = self.conv_backward(&l.enc[1], &e.post[0], &d_pre2, grads);
        let d_pre1 = layers::silu_backward(&e.pre[0], &d_post1);
        self.conv_backward(&l.enc[0], &e.input, &d_pre1, grads);
    }

    fn conv_backward(&self, c: &Conv, x: &Tensor, d_out: &Tensor, grads: &mut [Vec<f64>]) -> Tensor {
        let [dw, db] = grads.get_disjoint_mut([c.w, c.b]).expect("distinct parameter ids");
        c.op.backward(x, self.params.get(c.w), d_out, dw, db)
    }

    fn lin_backward(&self, lin: &Lin, x: &Tensor, fused: &[f64], d_out: &Tensor, grads: &mut [Vec<f64>]) -> Tensor {
        let mut d_fused = vec![0.0; lin.c_out * lin.c_in];
        let dx = {
            let db = &mut grads[lin.b];
            layers::linear_backward(x, fused, d_out, &mut d_fused, db)
        };
        for (g, d) in grads[lin.w].iter_mut().zip(&d_fused) {
            *g += d;
        }
        let [da, dbb] = grads.get_disjoint_mut([lin.a, lin.bb]).expect("distinct parameter ids");
        factor_grads(
            &d_fused,
            self.params.get(lin.a),
            self.params.get(lin.bb),
            lin.c_out,
            lin.c_in,
            self.config.lora_rank,
            da,
            dbb,
        );
        dx
    }
}

/// Latent codec: `2 · avgpool4(clip) − 1`, shape `(L, H/4, W/4, 3)`.
pub fn encode_clip(clip: &VideoClip) -> Result<Tensor> {
    let (len, h, w) = (clip.len(), clip.height(), clip.width());
    let mut data = Vec::with_capacity(len * h * w * 3);
    for f in clip.frames() {
        data.extend_from_slice(f.as_slice());
    }
    let pixels = Tensor::from_vec(len, h, w, 3, data)?;
    Ok(layers::avg_pool(&pixels, LATENT_POOL)?.map(|v| 2.0 * v - 1.0))
}

/// Nearest-neighbor decode of a latent back to a clip, clamped to `[0, 1]`.
pub fn decode_latent(z: &Tensor, frame_rate: f64) -> Result<VideoClip> {
    let up = layers::upsample_nearest(z, LATENT_POOL);
    let (h, w) = (up.height(), up.width());
    let n = h * w * 3;
    let frames = (0..up.len())
        .map(|i| {
            let data = up.as_slice()[i * n..(i + 1) * n]
                .iter()
                .map(|v| ((v + 1.0) / 2.0).clamp(0.0, 1.0))
                .collect();
            crate::grid::Grid::from_vec(h, w, 3, data)
        })
        .collect::<Result<Vec<_>>>()?;
    VideoClip::new(frames, frame_rate)
}

/// Encoder input `(L, H, W, 3)`: scaled trajectory x, y and the motion mask.
pub fn condition_input(cond: &ConditionTensors, traj_scale: f64) -> Tensor {
    let (len, h, w) = (cond.len(), cond.height(), cond.width());
    Tensor::from_fn(len, h, w, COND_CHANNELS, |i, y, x, c| match c {
        0 | 1 => cond.traj.at(i, x, y)[c] * traj_scale,
        _ => {
            if cond.mask_seq.mask(i).get(x, y) {
                1.0
            } else {
                0.0
            }
        }
    })
}
