//! Separable bilinear resize with half-pixel centers and edge clamping.
//! Also used to carry flow to a finer grid, where values are rescaled.

use alloc::vec;
use alloc::vec::Vec;

use crate::real::Real;

#[derive(Clone, Copy, Debug)]
struct AxisTap<T> {
    i0: usize,
    i1: usize,
    frac: T,
}

fn axis_taps<T: Real>(src: usize, dst: usize) -> Vec<AxisTap<T>> {
    let ratio = src as f64 / dst as f64;
    (0..dst)
        .map(|o| {
            let pos = ((o as f64 + 0.5) * ratio - 0.5).clamp(0.0, (src - 1) as f64);
            let i0 = num_traits::Float::floor(pos) as usize;
            let i1 = (i0 + 1).min(src - 1);
            AxisTap {
                i0,
                i1,
                frac: T::lit(pos - i0 as f64),
            }
        })
        .collect()
}

/// Resizes `[planes, h, w]` to `[planes, oh, ow]` and multiplies by `scale`.
pub fn forward<T: Real>(
    x: &[T],
    planes: usize,
    h: usize,
    w: usize,
    oh: usize,
    ow: usize,
    scale: T,
) -> Vec<T> {
    let ty = axis_taps::<T>(h, oh);
    let tx = axis_taps::<T>(w, ow);
    let mut out = vec![T::zero(); planes * oh * ow];
    let mut rows = vec![T::zero(); h * ow];
    for pl in 0..planes {
        let src = &x[pl * h * w..(pl + 1) * h * w];
        for r in 0..h {
            for (o, t) in tx.iter().enumerate() {
                let a = src[r * w + t.i0];
                let b = src[r * w + t.i1];
                rows[r * ow + o] = a + t.frac * (b - a);
            }
        }
        let dst = &mut out[pl * oh * ow..(pl + 1) * oh * ow];
        for (o, t) in ty.iter().enumerate() {
            for c in 0..ow {
                let a = rows[t.i0 * ow + c];
                let b = rows[t.i1 * ow + c];
                dst[o * ow + c] = (a + t.frac * (b - a)) * scale;
            }
        }
    }
    out
}

/// Adjoint of [`forward`].
pub fn backward<T: Real>(
    grad: &[T],
    planes: usize,
    h: usize,
    w: usize,
    oh: usize,
    ow: usize,
    scale: T,
) -> Vec<T> {
    let ty = axis_taps::<T>(h, oh);
    let tx = axis_taps::<T>(w, ow);
    let mut gx = vec![T::zero(); planes * h * w];
    let mut rows = vec![T::zero(); h * ow];
    for pl in 0..planes {
        rows.iter_mut().for_each(|v| *v = T::zero());
        let g = &grad[pl * oh * ow..(pl + 1) * oh * ow];
        for (o, t) in ty.iter().enumerate() {
            for c in 0..ow {
                let v = g[o * ow + c] * scale;
                rows[t.i0 * ow + c] += v * (T::one() - t.frac);
                rows[t.i1 * ow + c] += v * t.frac;
            }
        }
        let dst = &mut gx[pl * h * w..(pl + 1) * h * w];
        for r in 0..h {
            for (o, t) in tx.iter().enumerate() {
                let v = rows[r * ow + o];
                dst[r * w + t.i0] += v * (T::one() - t.frac);
                dst[r * w + t.i1] += v * t.frac;
            }
        }
    }
    gx
}
