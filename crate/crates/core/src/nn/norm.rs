//! Per-item, per-channel normalization over spatial positions with a learned
//! affine transform. No batch statistics are kept, so training and inference
//! behave identically.

use alloc::vec;
use alloc::vec::Vec;

use crate::real::Real;

pub const NORM_EPS: f64 = 1e-5;

/// Returns the output and the normalized activations `(x - mean) / std`
/// together with the per-plane inverse standard deviation.
pub fn forward<T: Real>(
    x: &[T],
    gamma: &[T],
    beta: &[T],
    n: usize,
    c: usize,
    hw: usize,
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let mut out = vec![T::zero(); x.len()];
    let mut xhat = vec![T::zero(); x.len()];
    let mut inv_std = vec![T::zero(); n * c];
    let count = T::lit(hw as f64);
    for b in 0..n {
        for ch in 0..c {
            let off = (b * c + ch) * hw;
            let plane = &x[off..off + hw];
            let mean = plane.iter().copied().sum::<T>() / count;
            let var = plane.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / count;
            let inv = T::one() / (var + T::lit(NORM_EPS)).sqrt();
            inv_std[b * c + ch] = inv;
            for p in 0..hw {
                let xh = (plane[p] - mean) * inv;
                xhat[off + p] = xh;
                out[off + p] = gamma[ch] * xh + beta[ch];
            }
        }
    }
    (out, xhat, inv_std)
}

/// Gradients `(input, gamma, beta)`.
pub fn backward<T: Real>(
    xhat: &[T],
    inv_std: &[T],
    gamma: &[T],
    grad: &[T],
    n: usize,
    c: usize,
    hw: usize,
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let mut gx = vec![T::zero(); xhat.len()];
    let mut gg = vec![T::zero(); c];
    let mut gbeta = vec![T::zero(); c];
    let count = T::lit(hw as f64);
    for b in 0..n {
        for ch in 0..c {
            let off = (b * c + ch) * hw;
            let mut sum_g = T::zero();
            let mut sum_gx = T::zero();
            for p in 0..hw {
                sum_g += grad[off + p];
                sum_gx += grad[off + p] * xhat[off + p];
            }
            gbeta[ch] += sum_g;
            gg[ch] += sum_gx;
            let scale = gamma[ch] * inv_std[b * c + ch];
            let mean_g = sum_g / count;
            let mean_gx = sum_gx / count;
            for p in 0..hw {
                gx[off + p] = scale * (grad[off + p] - mean_g - xhat[off + p] * mean_gx);
            }
        }
    }
    (gx, gg, gbeta)
}
