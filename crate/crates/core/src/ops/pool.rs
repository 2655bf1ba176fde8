//! Mask-weighted spatial pooling of motion features, one vector per segment.

use alloc::vec;
use alloc::vec::Vec;

use crate::real::Real;

/// Pooled features `[n, c, d]` and per-segment denominators `[n, c]`.
pub struct Pooled<T> {
    pub pooled: Vec<T>,
    pub denom: Vec<T>,
}

/// `pooled[m] = sum_p V(p) S_m(p) / (sum_p S_m(p) + eps_add)`.
///
/// `v` is `[n, d, hw]`, `s` is `[n, c, hw]`.
pub fn forward<T: Real>(
    v: &[T],
    s: &[T],
    n: usize,
    d: usize,
    c: usize,
    hw: usize,
    eps_add: T,
) -> Pooled<T> {
    let mut pooled = vec![T::zero(); n * c * d];
    let mut denom = vec![T::zero(); n * c];
    for b in 0..n {
        let sb = &s[b * c * hw..(b + 1) * c * hw];
        let vb = &v[b * d * hw..(b + 1) * d * hw];
        let out = &mut pooled[b * c * d..(b + 1) * c * d];
        // [c, hw] x [hw, d]
        T::gemm(
            c,
            hw,
            d,
            T::one(),
            sb,
            (hw as isize, 1),
            vb,
            (1, hw as isize),
            T::zero(),
            out,
            (d as isize, 1),
        );
        for m in 0..c {
            let mass: T = sb[m * hw..(m + 1) * hw].iter().copied().sum::<T>() + eps_add;
            denom[b * c + m] = mass;
            for k in 0..d {
                out[m * d + k] /= mass;
            }
        }
    }
    Pooled { pooled, denom }
}

/// Gradients with respect to `v` and `s`.
#[allow(clippy::too_many_arguments)]
pub fn backward<T: Real>(
    v: &[T],
    s: &[T],
    fwd: &Pooled<T>,
    grad: &[T],
    n: usize,
    d: usize,
    c: usize,
    hw: usize,
) -> (Vec<T>, Vec<T>) {
    let mut gv = vec![T::zero(); v.len()];
    let mut gs = vec![T::zero(); s.len()];
    let mut scaled = vec![T::zero(); c * d];
    for b in 0..n {
        let mut row_dot = vec![T::zero(); c];
        for m in 0..c {
            let inv = T::one() / fwd.denom[b * c + m];
            for k in 0..d {
                let g = grad[b * c * d + m * d + k] * inv;
                scaled[m * d + k] = g;
                row_dot[m] += g * fwd.pooled[b * c * d + m * d + k];
            }
        }
        let sb = &s[b * c * hw..(b + 1) * c * hw];
        let vb = &v[b * d * hw..(b + 1) * d * hw];
        // gV[d, hw] = scaled^T [d, c] x S [c, hw]
        T::gemm(
            d,
            c,
            hw,
            T::one(),
            &scaled,
            (1, d as isize),
            sb,
            (hw as isize, 1),
            T::zero(),
            &mut gv[b * d * hw..(b + 1) * d * hw],
            (hw as isize, 1),
        );
        // gS[c, hw] = scaled [c, d] x V [d, hw] - row_dot
        let gsb = &mut gs[b * c * hw..(b + 1) * c * hw];
        T::gemm(
            c,
            d,
            hw,
            T::one(),
            &scaled,
            (d as isize, 1),
            vb,
            (hw as isize, 1),
            T::zero(),
            gsb,
            (hw as isize, 1),
        );
        for m in 0..c {
            for g in &mut gsb[m * hw..(m + 1) * hw] {
                *g -= row_dot[m];
            }
        }
    }
    (gv, gs)
}
