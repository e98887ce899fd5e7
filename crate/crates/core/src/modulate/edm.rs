use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Noise-level distribution and data scale: `ln σ ~ N(p_mean, p_std²)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EdmSchedule {
    pub sigma_data: f64,
    pub p_mean: f64,
    pub p_std: f64,
}

impl Default for EdmSchedule {
    fn default() -> Self {
        Self {
            sigma_data: 0.5,
            p_mean: -1.2,
            p_std: 1.2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Preconditioning {
    pub c_skip: f64,
    pub c_out: f64,
    pub c_in: f64,
    pub c_noise: f64,
}

impl EdmSchedule {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_data > 0.0 && self.sigma_data.is_finite()) {
            return Err(Error::format("sigma_data", "must be positive"));
        }
        if !(self.p_std > 0.0 && self.p_std.is_finite()) {
            return Err(Error::format("p_std", "must be positive"));
        }
        if !self.p_mean.is_finite() {
            return Err(Error::format("p_mean", "must be finite"));
        }
        Ok(())
    }

    pub fn sample_sigma(&self, rng: &mut impl Rng) -> f64 {
        let n: f64 = rng.sample(StandardNormal);
        (self.p_mean + self.p_std * n).exp()
    }

    /// Default loss weight `(σ² + σ_d²) / (σ σ_d)²`.
    pub fn loss_weight(&self, sigma: f64) -> f64 {
        let sd = self.sigma_data;
        (sigma * sigma + sd * sd) / (sigma * sd).powi(2)
    }
}

/// Denoiser input/output scalings for noise level `σ`.
///
/// At `σ = 0` the limits are returned with `c_noise = -∞`.
pub fn edm_precondition(sigma: f64, sched: &EdmSchedule) -> Result<Preconditioning> {
    if !(sigma >= 0.0) {
        return Err(Error::invalid(format!("noise level {sigma} must be non-negative")));
    }
    let sd = sched.sigma_data;
    let s2 = sigma * sigma + sd * sd;
    if sigma.is_infinite() {
        return Ok(Preconditioning {
            c_skip: 0.0,
            c_out: sd,
            c_in: 0.0,
            c_noise: f64::INFINITY,
        });
    }
    Ok(Preconditioning {
        c_skip: sd * sd / s2,
        c_out: sigma * sd / s2.sqrt(),
        c_in: 1.0 / s2.sqrt(),
        c_noise: 0.25 * sigma.ln(),
    })
}

/// `z0 + n` with `n ~ N(0, σ²)` from a seeded generator.
pub fn add_noise(z0: &Tensor, sigma: f64, seed: u64) -> Result<Tensor> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    add_noise_with(z0, sigma, &mut rng)
}

pub fn add_noise_with(z0: &Tensor, sigma: f64, rng: &mut impl Rng) -> Result<Tensor> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::invalid(format!("noise level {sigma} must be finite and non-negative")));
    }
    if sigma == 0.0 {
        return Ok(z0.clone());
    }
    let mut z = z0.clone();
    for v in z.as_mut_slice() {
        let n: f64 = rng.sample(StandardNormal);
        *v += sigma * n;
    }
    Ok(z)
}

/// `λ · mean((ẑ0 − z0)²)`.
pub fn dsm_loss(pred: &Tensor, z0: &Tensor, weight: f64) -> Result<f64> {
    pred.expect_dims(z0, "dsm loss")?;
    let n = pred.as_slice().len() as f64;
    let se: f64 = pred
        .as_slice()
        .iter()
        .zip(z0.as_slice())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok(weight * se / n)
}

/// Gradient of [`dsm_loss`] with respect to `pred`.
pub fn dsm_loss_grad(pred: &Tensor, z0: &Tensor, weight: f64) -> Tensor {
    let n = pred.as_slice().len() as f64;
    pred.zip(z0, |a, b| 2.0 * weight * (a - b) / n)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    #[allow(clippy::approx_constant)]
    fn golden_coefficients() {
        let p = edm_precondition(0.5, &EdmSchedule::default()).unwrap();
        assert!((p.c_skip - 0.5).abs() < 1e-12);
        assert!((p.c_out - 0.353553).abs() < 1e-6);
        assert!((p.c_in - 1.414214).abs() < 1e-6);
        assert!((p.c_noise - 0.25 * 0.5f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn limits() {
        let s = EdmSchedule::default();
        let small = edm_precondition(1e-9, &s).unwrap();
        assert!((small.c_skip - 1.0).abs() < 1e-12 && small.c_out < 1e-8);
        let zero = edm_precondition(0.0, &s).unwrap();
        assert_eq!((zero.c_skip, zero.c_out), (1.0, 0.0));
        let big = edm_precondition(1e9, &s).unwrap();
        assert!(big.c_skip < 1e-12);
        assert_eq!(edm_precondition(f64::INFINITY, &s).unwrap().c_skip, 0.0);
        assert!(edm_precondition(-0.1, &s).is_err());
    }

    #[test]
    fn effective_weight_is_unit() {
        // λ c_out² = 1 for the default weighting
        let s = EdmSchedule::default();
        for sigma in [0.01, 0.3, 2.0, 40.0] {
            let p = edm_precondition(sigma, &s).unwrap();
            assert!((s.loss_weight(sigma) * p.c_out * p.c_out - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_sigma_noise_is_exact() {
        let z = Tensor::from_fn(2, 2, 2, 3, |i, y, x, c| (i + y + x + c) as f64);
        assert_eq!(add_noise(&z, 0.0, 4).unwrap(), z);
        assert_eq!(add_noise(&z, 0.3, 4).unwrap(), add_noise(&z, 0.3, 4).unwrap());
        assert_ne!(add_noise(&z, 0.3, 4).unwrap(), add_noise(&z, 0.3, 5).unwrap());
    }

    #[test]
    fn noise_std_monte_carlo() {
        let sigma = 0.7;
        let z = Tensor::zeros(1, 1000, 1000, 1);
        let n = add_noise(&z, sigma, 11).unwrap();
        let v = n.as_slice();
        let m = v.iter().sum::<f64>() / v.len() as f64;
        let sd = (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / v.len() as f64).sqrt();
        assert!((sd - sigma).abs() < 0.01 * sigma);
    }

    #[test]
    fn dsm_loss_examples() {
        let a = Tensor::from_fn(2, 2, 2, 3, |i, y, x, c| (i * 7 + y * 3 + x + c) as f64 * 0.1);
        assert_eq!(dsm_loss(&a, &a, 3.0).unwrap(), 0.0);
        let b = a.map(|v| v.sin());
        let l1 = dsm_loss(&a, &b, 1.5).unwrap();
        assert!((dsm_loss(&a, &b, 3.0).unwrap() - 2.0 * l1).abs() < 1e-12);
        let mut s = 0.0;
        for (p, q) in a.as_slice().iter().zip(b.as_slice()) {
            s += (p - q) * (p - q);
        }
        assert!((l1 - 1.5 * s / 24.0).abs() < 1e-12);
    }
}
