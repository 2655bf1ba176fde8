//! Local correlation volume between two feature maps.

use alloc::vec;
use alloc::vec::Vec;

use crate::real::Real;

/// Channel index of displacement `(dx, dy)` for a window of `radius`.
pub fn displacement_channel(dx: isize, dy: isize, radius: usize) -> usize {
    let side = 2 * radius as isize + 1;
    ((dy + radius as isize) * side + dx + radius as isize) as usize
}

/// `out[k, p] = <a(p), b(p + delta_k)> / d`, zero outside the frame.
/// Inputs are `[n, d, h, w]`, output is `[n, (2r+1)^2, h, w]`.
pub fn forward<T: Real>(a: &[T], b: &[T], n: usize, d: usize, h: usize, w: usize, radius: usize) -> Vec<T> {
    let side = 2 * radius + 1;
    let hw = h * w;
    let norm = T::one() / T::lit(d as f64);
    let r = radius as isize;
    let mut out = vec![T::zero(); n * side * side * hw];
    for bi in 0..n {
        let fa = &a[bi * d * hw..(bi + 1) * d * hw];
        let fb = &b[bi * d * hw..(bi + 1) * d * hw];
        for dy in -r..=r {
            for dx in -r..=r {
                let k = displacement_channel(dx, dy, radius);
                let dst = &mut out[(bi * side * side + k) * hw..(bi * side * side + k + 1) * hw];
                let (y_lo, y_hi) = ((-dy).max(0) as usize, (h as isize - dy.max(0)).max(0) as usize);
                let (x_lo, x_hi) = ((-dx).max(0) as usize, (w as isize - dx.max(0)).max(0) as usize);
                for ch in 0..d {
                    let pa = &fa[ch * hw..(ch + 1) * hw];
                    let pb = &fb[ch * hw..(ch + 1) * hw];
                    for y in y_lo..y_hi {
                        let yb = (y as isize + dy) as usize;
                        for x in x_lo..x_hi {
                            let xb = (x as isize + dx) as usize;
                            dst[y * w + x] += pa[y * w + x] * pb[yb * w + xb];
                        }
                    }
                }
                for v in dst.iter_mut() {
                    *v *= norm;
                }
            }
        }
    }
    out
}

/// Gradients with respect to both feature maps.
#[allow(clippy::too_many_arguments)]
pub fn backward<T: Real>(
    a: &[T],
    b: &[T],
    grad: &[T],
    n: usize,
    d: usize,
    h: usize,
    w: usize,
    radius: usize,
) -> (Vec<T>, Vec<T>) {
    let side = 2 * radius + 1;
    let hw = h * w;
    let norm = T::one() / T::lit(d as f64);
    let r = radius as isize;
    let mut ga = vec![T::zero(); a.len()];
    let mut gb = vec![T::zero(); b.len()];
    for bi in 0..n {
        let off = bi * d * hw;
        for dy in -r..=r {
            for dx in -r..=r {
                let k = displacement_channel(dx, dy, radius);
                let g = &grad[(bi * side * side + k) * hw..(bi * side * side + k + 1) * hw];
                let (y_lo, y_hi) = ((-dy).max(0) as usize, (h as isize - dy.max(0)).max(0) as usize);
                let (x_lo, x_hi) = ((-dx).max(0) as usize, (w as isize - dx.max(0)).max(0) as usize);
                for ch in 0..d {
                    let base = off + ch * hw;
                    for y in y_lo..y_hi {
                        let yb = (y as isize + dy) as usize;
                        for x in x_lo..x_hi {
                            let xb = (x as isize + dx) as usize;
                            let gv = g[y * w + x] * norm;
                            ga[base + y * w + x] += gv * b[base + yb * w + xb];
                            gb[base + yb * w + xb] += gv * a[base + y * w + x];
                        }
                    }
                }
            }
        }
    }
    (ga, gb)
}
