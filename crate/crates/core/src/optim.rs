//! Adam with L2 weight decay folded into the gradient.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{invalid, Result};
use crate::pathways::Param;
use crate::real::Real;

#[derive(Clone, Debug, PartialEq)]
pub struct Adam<T> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub step: u64,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Real> Adam<T> {
    pub fn new(params: &[Param<T>], lr: f64, weight_decay: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            step: 0,
            m: params.iter().map(|p| vec![T::zero(); p.value.len()]).collect(),
            v: params.iter().map(|p| vec![T::zero(); p.value.len()]).collect(),
        }
    }

    /// One update. `grads[i]` is the gradient of `params[i]`.
    pub fn update(&mut self, params: &mut [Param<T>], grads: &[Vec<T>]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != params.len() {
            return Err(invalid("optimizer state does not match the parameter list"));
        }
        self.step += 1;
        let (b1, b2) = (T::lit(self.beta1), T::lit(self.beta2));
        let bc1 = 1.0 - num_traits::Float::powi(self.beta1, self.step as i32);
        let bc2 = 1.0 - num_traits::Float::powi(self.beta2, self.step as i32);
        let step_size = T::lit(self.lr / bc1);
        let bc2_sqrt = T::lit(num_traits::Float::sqrt(bc2));
        let (eps, wd) = (T::lit(self.eps), T::lit(self.weight_decay));
        let one = T::one();
        for (i, p) in params.iter_mut().enumerate() {
            let g = &grads[i];
            if g.len() != p.value.len() {
                return Err(invalid("gradient length does not match its parameter"));
            }
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (k, w) in p.value.data_mut().iter_mut().enumerate() {
                let gk = g[k] + wd * *w;
                m[k] = b1 * m[k] + (one - b1) * gk;
                v[k] = b2 * v[k] + (one - b2) * gk * gk;
                let denom = v[k].sqrt() / bc2_sqrt + eps;
                *w -= step_size * m[k] / denom;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn param(v: f64) -> Param<f64> {
        Param {
            name: "x".into(),
            value: Tensor::new(&[1], vec![v]).unwrap(),
        }
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut p = vec![param(1.0)];
        let mut adam = Adam::new(&p, 0.1, 0.0);
        adam.update(&mut p, &[vec![3.0]]).unwrap();
        assert!((p[0].value.data()[0] - 0.9).abs() < 1e-7);
    }

    #[test]
    fn zero_learning_rate_freezes_parameters() {
        let mut p = vec![param(1.5)];
        let mut adam = Adam::new(&p, 0.0, 1e-6);
        adam.update(&mut p, &[vec![2.0]]).unwrap();
        assert_eq!(p[0].value.data()[0], 1.5);
    }

    #[test]
    fn minimizes_a_quadratic() {
        let mut p = vec![param(4.0)];
        let mut adam = Adam::new(&p, 0.05, 0.0);
        for _ in 0..2000 {
            let x = p[0].value.data()[0];
            adam.update(&mut p, &[vec![2.0 * (x - 1.0)]]).unwrap();
        }
        assert!((p[0].value.data()[0] - 1.0).abs() < 1e-3);
    }
}
