//! Segment flow: per-segment 2-vectors broadcast over their soft masks.

use alloc::vec;
use alloc::vec::Vec;

use crate::real::Real;

/// `flow[a, p] = sum_m vectors[m, a] * S_m(p)`; `vectors` is `[n, c, 2]`,
/// `s` is `[n, c, hw]`, output is `[n, 2, hw]`.
pub fn forward<T: Real>(vectors: &[T], s: &[T], n: usize, c: usize, hw: usize) -> Vec<T> {
    let mut out = vec![T::zero(); n * 2 * hw];
    for b in 0..n {
        T::gemm(
            2,
            c,
            hw,
            T::one(),
            &vectors[b * c * 2..(b + 1) * c * 2],
            (1, 2),
            &s[b * c * hw..(b + 1) * c * hw],
            (hw as isize, 1),
            T::zero(),
            &mut out[b * 2 * hw..(b + 1) * 2 * hw],
            (hw as isize, 1),
        );
    }
    out
}

/// Gradients with respect to `vectors` and `s`.
pub fn backward<T: Real>(
    vectors: &[T],
    s: &[T],
    grad: &[T],
    n: usize,
    c: usize,
    hw: usize,
) -> (Vec<T>, Vec<T>) {
    let mut gvec = vec![T::zero(); vectors.len()];
    let mut gs = vec![T::zero(); s.len()];
    for b in 0..n {
        let gb = &grad[b * 2 * hw..(b + 1) * 2 * hw];
        // [c, hw] x [hw, 2]
        T::gemm(
            c,
            hw,
            2,
            T::one(),
            &s[b * c * hw..(b + 1) * c * hw],
            (hw as isize, 1),
            gb,
            (1, hw as isize),
            T::zero(),
            &mut gvec[b * c * 2..(b + 1) * c * 2],
            (2, 1),
        );
        // [c, 2] x [2, hw]
        T::gemm(
            c,
            2,
            hw,
            T::one(),
            &vectors[b * c * 2..(b + 1) * c * 2],
            (2, 1),
            gb,
            (hw as isize, 1),
            T::zero(),
            &mut gs[b * c * hw..(b + 1) * c * hw],
            (hw as isize, 1),
        );
    }
    (gvec, gs)
}
