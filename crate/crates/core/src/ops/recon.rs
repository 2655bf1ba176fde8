//! View-synthesis objective: warp each frame toward the other and score it.

use alloc::vec::Vec;

use super::{ssim, ssim_loss, warp, warp_backward, LossConfig};
use crate::error::{shape_mismatch, Result};
use crate::real::Real;
use crate::tensor::Tensor;

/// `D(x_j, warp(x_i, f_ij))`, plus `D(x_i, warp(x_j, f_ji))` when
/// `cfg.symmetric`.
pub fn reconstruction_loss<T: Real>(
    x_i: &Tensor<T>,
    x_j: &Tensor<T>,
    f_ij: &Tensor<T>,
    f_ji: &Tensor<T>,
    cfg: &LossConfig,
) -> Result<T> {
    if x_i.shape() != x_j.shape() {
        return Err(shape_mismatch(x_i.shape(), x_j.shape()));
    }
    let forward = ssim_loss(&warp_backward(x_i, f_ij)?, x_j, cfg)?;
    if !cfg.symmetric {
        return Ok(forward);
    }
    Ok(forward + ssim_loss(&warp_backward(x_j, f_ji)?, x_i, cfg)?)
}

/// Gradients of [`reconstruction_loss`] with respect to
/// `(x_i, x_j, f_ij, f_ji)`. Inputs must already be validated.
pub(crate) fn reconstruction_grad<T: Real>(
    x_i: &Tensor<T>,
    x_j: &Tensor<T>,
    f_ij: &Tensor<T>,
    f_ji: &Tensor<T>,
    cfg: &LossConfig,
) -> [Vec<T>; 4] {
    let (ch, h, w) = x_i.dims3().expect("validated image");
    let (c1, c2, r) = (T::lit(cfg.c1), T::lit(cfg.c2), cfg.radius());
    let directions = |src: &Tensor<T>, dst: &Tensor<T>, flow: &Tensor<T>| {
        let warped = warp::forward(src.data(), flow.data(), 1, ch, h, w);
        let (g_warped, g_dst) = ssim::loss_backward(&warped, dst.data(), ch, h, w, r, c1, c2, T::one());
        let (g_src, g_flow) = warp::backward(src.data(), flow.data(), &g_warped, 1, ch, h, w);
        (g_src, g_dst, g_flow)
    };
    let (mut g_i, mut g_j, g_fij) = directions(x_i, x_j, f_ij);
    let g_fji = if cfg.symmetric {
        let (g_src, g_dst, g_flow) = directions(x_j, x_i, f_ji);
        g_j.iter_mut().zip(&g_src).for_each(|(a, &b)| *a += b);
        g_i.iter_mut().zip(&g_dst).for_each(|(a, &b)| *a += b);
        g_flow
    } else {
        alloc::vec![T::zero(); f_ji.len()]
    };
    [g_i, g_j, g_fij, g_fji]
}
