//! Central finite differences against the hand-written backward passes.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::edm::{dsm_loss, dsm_loss_grad, EdmSchedule};
use super::layers;
use super::lora::factor_grads;
use super::model::{ToyConfig, ToyDenoiser};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Denominators below this are clamped, so near-zero gradient pairs compare absolutely.
pub const REL_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub checked: usize,
}

/// Max elementwise `|a − n| / max(|a| + |n|, REL_FLOOR)` against fourth-order
/// central differences.
pub fn grad_check(mut f: impl FnMut(&[f64]) -> f64, x: &[f64], analytic: &[f64], eps: f64) -> Result<GradCheck> {
    if !(eps > 0.0) {
        return Err(Error::invalid("finite-difference step must be positive"));
    }
    if x.len() != analytic.len() {
        return Err(Error::shape("gradient length differs from parameter length"));
    }
    let mut probe = x.to_vec();
    let mut worst = (0.0f64, 0usize);
    for i in 0..x.len() {
        let mut at = |offset: f64| {
            probe[i] = x[i] + offset;
            f(&probe)
        };
        let (up2, up, down, down2) = (at(2.0 * eps), at(eps), at(-eps), at(-2.0 * eps));
        probe[i] = x[i];
        let numeric = (8.0 * (up - down) - (up2 - down2)) / (12.0 * eps);
        let a = analytic[i];
        let rel = (a - numeric).abs() / (a.abs() + numeric.abs()).max(REL_FLOOR);
        if rel > worst.0 || !rel.is_finite() {
            worst = (rel, i);
        }
    }
    Ok(GradCheck {
        max_rel_error: worst.0,
        worst_index: worst.1,
        checked: x.len(),
    })
}

fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `⟨c, GN(h)·γ + β + h⟩` checked over `h`, `γ` and `β` jointly.
pub fn check_modulate_chain(seed: u64, eps: f64) -> Result<GradCheck> {
    let (l, h, w, c, groups, gn_eps) = (2, 3, 3, 4, 2, 1e-5);
    let n = l * h * w * c;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = random_vec(&mut rng, 3 * n);
    let proj = random_vec(&mut rng, n);
    let split = |v: &[f64]| -> Result<(Tensor, Tensor, Tensor)> {
        Ok((
            Tensor::from_vec(l, h, w, c, v[..n].to_vec())?,
            Tensor::from_vec(l, h, w, c, v[n..2 * n].to_vec())?,
            Tensor::from_vec(l, h, w, c, v[2 * n..].to_vec())?,
        ))
    };
    let (ht, gt, bt) = split(&x)?;
    let (_, cache) = layers::modulate_cached(&ht, &gt, &bt, groups, gn_eps)?;
    let d_out = Tensor::from_vec(l, h, w, c, proj.clone())?;
    let (dh, dg, db) = layers::modulate_backward(&cache, &gt, &d_out);
    let analytic: Vec<f64> = [dh.as_slice(), dg.as_slice(), db.as_slice()].concat();
    grad_check(
        |v| {
            let (a, b, cc) = split(v).expect("sizes");
            dot(layers::modulate(&a, &b, &cc, groups, gn_eps).expect("dims").as_slice(), &proj)
        },
        &x,
        &analytic,
        eps,
    )
}

/// `⟨c, (W + A Bᵀ) x + b⟩` checked over `W`, `A`, `B`, `b` and `x`.
pub fn check_lora_linear(seed: u64, eps: f64) -> Result<GradCheck> {
    let (d_in, d_out, r, positions) = (5, 4, 2, 6);
    let sizes = [d_out * d_in, d_out * r, d_in * r, d_out, positions * d_in];
    let total: usize = sizes.iter().sum();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = random_vec(&mut rng, total);
    let proj = random_vec(&mut rng, positions * d_out);
    let parts = |v: &[f64]| -> Vec<Vec<f64>> {
        let mut off = 0;
        sizes
            .iter()
            .map(|&s| {
                off += s;
                v[off - s..off].to_vec()
            })
            .collect()
    };
    let eval = |v: &[f64]| -> (Vec<f64>, Tensor, Vec<Vec<f64>>) {
        let p = parts(v);
        let delta = super::lora::low_rank_product(&p[1], &p[2], d_out, d_in, r);
        let fused: Vec<f64> = p[0].iter().zip(delta).map(|(a, b)| a + b).collect();
        let input = Tensor::from_vec(1, 1, positions, d_in, p[4].clone()).expect("sizes");
        (fused, input, p)
    };
    let (fused, input, p) = eval(&x);
    let d_out_t = Tensor::from_vec(1, 1, positions, d_out, proj.clone())?;
    let mut d_fused = vec![0.0; d_out * d_in];
    let mut d_bias = vec![0.0; d_out];
    let dx = layers::linear_backward(&input, &fused, &d_out_t, &mut d_fused, &mut d_bias);
    let mut da = vec![0.0; d_out * r];
    let mut dbf = vec![0.0; d_in * r];
    factor_grads(&d_fused, &p[1], &p[2], d_out, d_in, r, &mut da, &mut dbf);
    let analytic = [d_fused.as_slice(), &da, &dbf, &d_bias, dx.as_slice()].concat();
    grad_check(
        |v| {
            let (fused, input, p) = eval(v);
            dot(layers::linear(&input, &fused, &p[3], d_out).expect("dims").as_slice(), &proj)
        },
        &x,
        &analytic,
        eps,
    )
}

/// Full forward + weighted DSM loss of a small toy model, over every parameter.
///
/// Heads and LoRA up-factors get random non-zero values first so every path
/// carries gradient.
pub fn check_toy_loss(seed: u64, eps: f64) -> Result<GradCheck> {
    let cfg = ToyConfig {
        channels: 4,
        groups: 2,
        encoder_channels: 3,
        lora_rank: 2,
        init_seed: seed,
        ..ToyConfig::default()
    };
    let sched = EdmSchedule::default();
    let mut model = ToyDenoiser::new(cfg, sched)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let mut flat = model.params.flatten();
    for v in flat.iter_mut() {
        if *v == 0.0 {
            *v = 0.3 * rng.random_range(-1.0..1.0);
        }
    }
    model.params.set_flat(&flat);

    let (len, h, w) = (2, 4, 4);
    let rand_t = |rng: &mut ChaCha8Rng, l, hh, ww| {
        let data = random_vec(rng, l * hh * ww * 3);
        Tensor::from_vec(l, hh, ww, 3, data).expect("sizes")
    };
    let z0 = rand_t(&mut rng, len, h, w);
    let z = rand_t(&mut rng, len, h, w);
    let ci = z0.frame(0);
    let cond = rand_t(&mut rng, len, 4 * h, 4 * w);
    let sigma = 0.8;
    let weight = sched.loss_weight(sigma);

    let (pred, cache) = model.forward_cached(&z, sigma, &ci, &cond)?;
    let mut grads = model.params.zeros_like();
    model.backward(&cache, &dsm_loss_grad(&pred, &z0, weight), &mut grads);
    let analytic: Vec<f64> = grads.concat();
    let mut probe = model.clone();
    grad_check(
        |v| {
            probe.params.set_flat(v);
            let pred = probe.forward(&z, sigma, &ci, &cond).expect("dims");
            dsm_loss(&pred, &z0, weight).expect("dims")
        },
        &flat,
        &analytic,
        eps,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_map_is_exact() {
        let x = vec![0.3, -1.2, 2.0];
        let c = [1.5, -0.5, 4.0];
        let r = grad_check(|v| dot(v, &c), &x, &c, 1e-5).unwrap();
        assert!(r.max_rel_error < 1e-9);
    }

    #[test]
    fn modulate_chain() {
        for seed in 0..3 {
            assert!(check_modulate_chain(seed, 1e-5).unwrap().max_rel_error < 1e-4);
        }
    }

    #[test]
    fn lora_linear() {
        for seed in 0..3 {
            assert!(check_lora_linear(seed, 1e-5).unwrap().max_rel_error < 1e-6);
        }
    }

    #[test]
    fn toy_loss() {
        for seed in [1, 9] {
            let r = check_toy_loss(seed, 1e-3).unwrap();
            assert!(r.max_rel_error < 1e-4, "{r:?}");
        }
    }

    #[test]
    fn quartic_is_exact() {
        let f = |v: &[f64]| v[0].powi(4) - 2.0 * v[0].powi(3);
        let x = 1.3f64;
        let r = grad_check(f, &[x], &[4.0 * x.powi(3) - 6.0 * x * x], 1e-2).unwrap();
        assert!(r.max_rel_error < 1e-12, "{r:?}");
    }

    #[test]
    fn rejects_bad_step() {
        assert!(grad_check(|v| v[0], &[1.0], &[1.0], 0.0).is_err());
    }
}
