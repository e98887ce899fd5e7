use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Low-rank update `ΔW = A Bᵀ` with `A: d_out × r` and `B: d_in × r`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct LoraAdapter {
    pub d_out: usize,
    pub d_in: usize,
    pub rank: usize,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
}

impl LoraAdapter {
    pub fn new(d_out: usize, d_in: usize, rank: usize, a: Vec<f64>, b: Vec<f64>) -> Result<Self> {
        check_rank(d_out, d_in, rank)?;
        if a.len() != d_out * rank || b.len() != d_in * rank {
            return Err(Error::shape(format!(
                "adapter factors must be {d_out}x{rank} and {d_in}x{rank}"
            )));
        }
        Ok(Self {
            d_out,
            d_in,
            rank,
            a,
            b,
        })
    }

    pub fn delta(&self) -> Vec<f64> {
        low_rank_product(&self.a, &self.b, self.d_out, self.d_in, self.rank)
    }
}

pub fn check_rank(d_out: usize, d_in: usize, rank: usize) -> Result<()> {
    if rank == 0 || rank > d_out.min(d_in) {
        return Err(Error::invalid(format!(
            "adapter rank {rank} must be in 1..={} for a {d_out}x{d_in} map",
            d_out.min(d_in)
        )));
    }
    Ok(())
}

pub(crate) fn low_rank_product(a: &[f64], b: &[f64], d_out: usize, d_in: usize, rank: usize) -> Vec<f64> {
    let mut out = vec![0.0; d_out * d_in];
    for i in 0..d_out {
        for j in 0..d_in {
            out[i * d_in + j] = (0..rank).map(|k| a[i * rank + k] * b[j * rank + k]).sum();
        }
    }
    out
}

/// `W' = W + A Bᵀ` for a row-major `d_out × d_in` weight.
pub fn lora_fuse(w: &[f64], adapter: &LoraAdapter) -> Result<Vec<f64>> {
    if w.len() != adapter.d_out * adapter.d_in {
        return Err(Error::shape(format!(
            "weight has {} entries, adapter expects {}x{}",
            w.len(),
            adapter.d_out,
            adapter.d_in
        )));
    }
    Ok(w.iter().zip(adapter.delta()).map(|(a, b)| a + b).collect())
}

/// Gradients of the factors given the gradient of the fused weight:
/// `dA = dW' B`, `dB = dW'ᵀ A`.
pub(crate) fn factor_grads(
    d_fused: &[f64],
    a: &[f64],
    b: &[f64],
    d_out: usize,
    d_in: usize,
    rank: usize,
    da: &mut [f64],
    db: &mut [f64],
) {
    for i in 0..d_out {
        for j in 0..d_in {
            let g = d_fused[i * d_in + j];
            if g == 0.0 {
                continue;
            }
            for k in 0..rank {
                da[i * rank + k] += g * b[j * rank + k];
                db[j * rank + k] += g * a[i * rank + k];
            }
        }
    }
}

/// Numerical rank: singular values above `tol`.
pub fn numerical_rank(m: &[f64], rows: usize, cols: usize, tol: f64) -> usize {
    let mat = DMatrix::from_row_slice(rows, cols, m);
    mat.svd(false, false)
        .singular_values
        .iter()
        .filter(|&&s| s > tol)
        .count()
}
