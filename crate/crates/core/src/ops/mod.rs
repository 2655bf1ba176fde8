//! The differentiable operators that bind masks and motion into segment flow
//! and score it by view synthesis.
//!
//! Each operator has a batched kernel (`forward`/`backward` in its submodule,
//! used by the [`Tape`](crate::tape::Tape)) and a validated single-item entry
//! point here. Tensor layouts:
//!
//! | value            | shape          |
//! |------------------|----------------|
//! | image            | `[3, h, w]`    |
//! | mask logits/probs| `[c, h, w]`    |
//! | motion features  | `[d, h, w]`    |
//! | segment vectors  | `[c, 2]` as `(dx, dy)` |
//! | segment flow     | `[2, h, w]`    |

pub mod compose;
pub mod gradcheck;
pub mod pool;
pub mod recon;
pub mod resize;
pub mod softmax;
pub mod ssim;
pub mod warp;

use alloc::format;

use crate::error::{invalid, shape_mismatch, Error, Result};
use crate::real::Real;
use crate::tensor::Tensor;

pub use gradcheck::{check_gradient, GradCheckReport, GradPoint, OpId};
pub use recon::reconstruction_loss;

/// Mask mass below which standalone pooling refuses to divide.
pub const MASK_MASS_EPS: f64 = 1e-8;

/// Photometric loss settings.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossConfig {
    pub ssim_window: usize,
    pub c1: f64,
    pub c2: f64,
    pub symmetric: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            ssim_window: 3,
            c1: 0.01 * 0.01,
            c2: 0.03 * 0.03,
            symmetric: true,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if self.ssim_window < 3 || self.ssim_window % 2 == 0 {
            return Err(Error::Config(format!(
                "ssim_window must be odd and >= 3, got {}",
                self.ssim_window
            )));
        }
        if !(self.c1 > 0.0 && self.c2 > 0.0) {
            return Err(Error::Config("ssim stabilizers c1, c2 must be positive".into()));
        }
        Ok(())
    }

    pub fn radius(&self) -> usize {
        self.ssim_window / 2
    }
}

fn require_finite<T: Real>(t: &Tensor<T>, what: &str) -> Result<()> {
    if t.all_finite() {
        Ok(())
    } else {
        Err(invalid(format!("{what} contains non-finite values")))
    }
}

/// Softmax of `[c, h, w]` logits across channels.
pub fn normalize_masks<T: Real>(logits: &Tensor<T>) -> Result<Tensor<T>> {
    let (c, h, w) = logits.dims3()?;
    require_finite(logits, "mask logits")?;
    Tensor::new(&[c, h, w], softmax::forward(logits.data(), 1, c, h * w))
}

/// Mask-weighted mean of features `[d, h, w]` under masks `[c, h, w]`,
/// giving `[c, d]`. Fails on any channel whose mass is at most
/// [`MASK_MASS_EPS`].
pub fn masked_pool<T: Real>(features: &Tensor<T>, masks: &Tensor<T>) -> Result<Tensor<T>> {
    let (d, h, w) = features.dims3()?;
    let (c, hm, wm) = masks.dims3()?;
    if (h, w) != (hm, wm) {
        return Err(shape_mismatch(&[c, h, w], masks.shape()));
    }
    let hw = h * w;
    for m in 0..c {
        let mass: T = masks.data()[m * hw..(m + 1) * hw].iter().copied().sum();
        if !(mass.to_f64() > MASK_MASS_EPS) {
            return Err(Error::DegenerateMask {
                channel: m,
                mass: mass.to_f64(),
            });
        }
    }
    let out = pool::forward(features.data(), masks.data(), 1, d, c, hw, T::zero());
    Tensor::new(&[c, d], out.pooled)
}

/// Segment flow `[2, h, w]` from vectors `[c, 2]` and masks `[c, h, w]`.
pub fn compose_segment_flow<T: Real>(vectors: &Tensor<T>, masks: &Tensor<T>) -> Result<Tensor<T>> {
    let (c, h, w) = masks.dims3()?;
    if vectors.shape() != [c, 2] {
        return Err(shape_mismatch(&[c, 2], vectors.shape()));
    }
    Tensor::new(&[2, h, w], compose::forward(vectors.data(), masks.data(), 1, c, h * w))
}

/// Samples `image` (`[ch, h, w]`) at `p + flow(p)` with bilinear
/// interpolation and clamp-to-edge addressing.
pub fn warp_backward<T: Real>(image: &Tensor<T>, flow: &Tensor<T>) -> Result<Tensor<T>> {
    let (ch, h, w) = image.dims3()?;
    if flow.shape() != [2, h, w] {
        return Err(shape_mismatch(&[2, h, w], flow.shape()));
    }
    Tensor::new(&[ch, h, w], warp::forward(image.data(), flow.data(), 1, ch, h, w))
}

/// Bilinearly upsamples a `[2, h, w]` flow to `[2, oh, ow]`, rescaling the
/// vectors to pixels of the new grid.
pub fn upsample_flow<T: Real>(flow: &Tensor<T>, oh: usize, ow: usize) -> Result<Tensor<T>> {
    let (c, h, w) = flow.dims3()?;
    if c != 2 {
        return Err(shape_mismatch(&[2, h, w], flow.shape()));
    }
    let hw = h * w;
    let mut out = resize::forward(&flow.data()[..hw], 1, h, w, oh, ow, T::lit(ow as f64 / w as f64));
    out.extend(resize::forward(&flow.data()[hw..], 1, h, w, oh, ow, T::lit(oh as f64 / h as f64)));
    Tensor::new(&[2, oh, ow], out)
}

/// Bilinear resize of a `[c, h, w]` tensor without value rescaling.
pub fn resize_bilinear<T: Real>(x: &Tensor<T>, oh: usize, ow: usize) -> Result<Tensor<T>> {
    let (c, h, w) = x.dims3()?;
    Tensor::new(&[c, oh, ow], resize::forward(x.data(), c, h, w, oh, ow, T::one()))
}

/// `mean((1 - SSIM(x_hat, x)) / 2)` over channels and pixels.
pub fn ssim_loss<T: Real>(x_hat: &Tensor<T>, x: &Tensor<T>, cfg: &LossConfig) -> Result<T> {
    cfg.validate()?;
    if x_hat.shape() != x.shape() {
        return Err(shape_mismatch(x.shape(), x_hat.shape()));
    }
    let (c, h, w) = x.dims3()?;
    if h <= cfg.radius() || w <= cfg.radius() {
        return Err(invalid(format!("image {h}x{w} smaller than the SSIM window")));
    }
    Ok(ssim::loss(
        x_hat.data(),
        x.data(),
        c,
        h,
        w,
        cfg.radius(),
        T::lit(cfg.c1),
        T::lit(cfg.c2),
    ))
}
