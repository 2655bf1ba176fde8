//! Channel-axis softmax turning mask logits into a soft partition of unity.

use alloc::vec;
use alloc::vec::Vec;

use crate::real::Real;

/// Softmax over `c` channels of `n` items with `hw` pixels each.
pub fn forward<T: Real>(logits: &[T], n: usize, c: usize, hw: usize) -> Vec<T> {
    let mut out = vec![T::zero(); logits.len()];
    for b in 0..n {
        let base = b * c * hw;
        for p in 0..hw {
            let mut max = T::neg_infinity();
            for m in 0..c {
                max = max.max(logits[base + m * hw + p]);
            }
            let mut sum = T::zero();
            for m in 0..c {
                let e = (logits[base + m * hw + p] - max).exp();
                out[base + m * hw + p] = e;
                sum += e;
            }
            let inv = T::one() / sum;
            for m in 0..c {
                out[base + m * hw + p] *= inv;
            }
        }
    }
    out
}

/// Vector-Jacobian product given the forward output `probs`.
pub fn backward<T: Real>(probs: &[T], grad: &[T], n: usize, c: usize, hw: usize) -> Vec<T> {
    let mut out = vec![T::zero(); probs.len()];
    for b in 0..n {
        let base = b * c * hw;
        for p in 0..hw {
            let mut dot = T::zero();
            for m in 0..c {
                let i = base + m * hw + p;
                dot += grad[i] * probs[i];
            }
            for m in 0..c {
                let i = base + m * hw + p;
                out[i] = probs[i] * (grad[i] - dot);
            }
        }
    }
    out
}
