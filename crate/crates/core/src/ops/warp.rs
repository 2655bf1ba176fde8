//! Backward warping: bilinear sampling of the source at `p + F(p)` with
//! clamp-to-edge addressing.

use alloc::vec;
use alloc::vec::Vec;

use crate::real::Real;

#[derive(Clone, Copy)]
struct Tap<T> {
    x0: usize,
    x1: usize,
    y0: usize,
    y1: usize,
    fx: T,
    fy: T,
}

#[inline]
fn clamp_index(i: isize, len: usize) -> usize {
    i.clamp(0, len as isize - 1) as usize
}

#[inline]
fn tap<T: Real>(sx: T, sy: T, h: usize, w: usize) -> Tap<T> {
    let fx0 = sx.floor();
    let fy0 = sy.floor();
    // Saturating float->int conversion keeps huge offsets well-defined.
    let ix = fx0.to_f64() as isize;
    let iy = fy0.to_f64() as isize;
    Tap {
        x0: clamp_index(ix, w),
        x1: clamp_index(ix.saturating_add(1), w),
        y0: clamp_index(iy, h),
        y1: clamp_index(iy.saturating_add(1), h),
        fx: sx - fx0,
        fy: sy - fy0,
    }
}

/// `x` is `[n, ch, h, w]`, `flow` is `[n, 2, h, w]` holding `(dx, dy)`.
pub fn forward<T: Real>(x: &[T], flow: &[T], n: usize, ch: usize, h: usize, w: usize) -> Vec<T> {
    let hw = h * w;
    let mut out = vec![T::zero(); x.len()];
    for b in 0..n {
        let fb = &flow[b * 2 * hw..(b + 1) * 2 * hw];
        for yy in 0..h {
            for xx in 0..w {
                let p = yy * w + xx;
                let t = tap(T::lit(xx as f64) + fb[p], T::lit(yy as f64) + fb[hw + p], h, w);
                for k in 0..ch {
                    let plane = &x[(b * ch + k) * hw..(b * ch + k + 1) * hw];
                    let a = plane[t.y0 * w + t.x0];
                    let bb = plane[t.y0 * w + t.x1];
                    let c = plane[t.y1 * w + t.x0];
                    let d = plane[t.y1 * w + t.x1];
                    let top = a + t.fx * (bb - a);
                    let bot = c + t.fx * (d - c);
                    out[(b * ch + k) * hw + p] = top + t.fy * (bot - top);
                }
            }
        }
    }
    out
}

/// Gradients with respect to the source image and the flow.
pub fn backward<T: Real>(
    x: &[T],
    flow: &[T],
    grad: &[T],
    n: usize,
    ch: usize,
    h: usize,
    w: usize,
) -> (Vec<T>, Vec<T>) {
    let hw = h * w;
    let mut gx = vec![T::zero(); x.len()];
    let mut gf = vec![T::zero(); flow.len()];
    for b in 0..n {
        let fb = &flow[b * 2 * hw..(b + 1) * 2 * hw];
        for yy in 0..h {
            for xx in 0..w {
                let p = yy * w + xx;
                let t = tap(T::lit(xx as f64) + fb[p], T::lit(yy as f64) + fb[hw + p], h, w);
                let one = T::one();
                let w00 = (one - t.fx) * (one - t.fy);
                let w01 = t.fx * (one - t.fy);
                let w10 = (one - t.fx) * t.fy;
                let w11 = t.fx * t.fy;
                let mut gdx = T::zero();
                let mut gdy = T::zero();
                for k in 0..ch {
                    let off = (b * ch + k) * hw;
                    let g = grad[off + p];
                    let plane = &x[off..off + hw];
                    let a = plane[t.y0 * w + t.x0];
                    let bb = plane[t.y0 * w + t.x1];
                    let c = plane[t.y1 * w + t.x0];
                    let d = plane[t.y1 * w + t.x1];
                    gdx += g * ((one - t.fy) * (bb - a) + t.fy * (d - c));
                    let top = a + t.fx * (bb - a);
                    let bot = c + t.fx * (d - c);
                    gdy += g * (bot - top);
                    let gplane = &mut gx[off..off + hw];
                    gplane[t.y0 * w + t.x0] += g * w00;
                    gplane[t.y0 * w + t.x1] += g * w01;
                    gplane[t.y1 * w + t.x0] += g * w10;
                    gplane[t.y1 * w + t.x1] += g * w11;
                }
                gf[b * 2 * hw + p] = gdx;
                gf[b * 2 * hw + hw + p] = gdy;
            }
        }
    }
    (gx, gf)
}

/// True when the sample position of flow coordinate `idx` (in a `[2, h, w]`
/// flow) lies within `eps` of an integer, where the warp has a kink.
pub fn near_kink<T: Real>(flow: &[T], idx: usize, h: usize, w: usize, eps: T) -> bool {
    let hw = h * w;
    let p = idx % hw;
    let base = if idx / hw == 0 { p % w } else { p / w };
    let s = T::lit(base as f64) + flow[idx];
    (s - s.round()).abs() <= eps
}
