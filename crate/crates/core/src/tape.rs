//! Reverse-mode automatic differentiation over [`Tensor`]s.
//!
//! A [`Tape`] records every operation eagerly. Each node keeps its value and,
//! when any input requires a gradient, a closure mapping the output gradient
//! to gradients of its inputs. [`Tape::backward`] walks the nodes in reverse
//! insertion order, which is a valid topological order by construction.

use alloc::boxed::Box;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{invalid, shape_mismatch, Result};
use crate::nn::{conv, correlation, norm};
use crate::ops::{compose, pool, resize, softmax, ssim, warp};
use crate::real::Real;
use crate::tensor::Tensor;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Everything a backward closure can look at.
pub struct BackwardArgs<'a, T> {
    pub grad: &'a [T],
    pub inputs: &'a [&'a Tensor<T>],
    pub output: &'a Tensor<T>,
    pub needs: &'a [bool],
}

type BackwardFn<T> = Box<dyn Fn(&BackwardArgs<'_, T>) -> Vec<Option<Vec<T>>>>;

struct Node<T> {
    value: Tensor<T>,
    parents: Vec<usize>,
    backward: Option<BackwardFn<T>>,
    needs_grad: bool,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, var: Var) -> Option<&[T]> {
        self.grads.get(var.0).and_then(|g| g.as_deref())
    }

    pub fn take(&mut self, var: Var) -> Option<Vec<T>> {
        self.grads.get_mut(var.0).and_then(Option::take)
    }
}

#[derive(Default)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Leaf whose gradient is wanted (parameters, or inputs under test).
    pub fn variable(&mut self, value: Tensor<T>) -> Var {
        self.push_leaf(value, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push_leaf(value, false)
    }

    fn push_leaf(&mut self, value: Tensor<T>, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            parents: Vec::new(),
            backward: None,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, var: Var) -> &Tensor<T> {
        &self.nodes[var.0].value
    }

    pub fn shape(&self, var: Var) -> &[usize] {
        self.nodes[var.0].value.shape()
    }

    fn push(&mut self, value: Tensor<T>, parents: &[Var], backward: BackwardFn<T>) -> Var {
        let needs_grad = parents.iter().any(|p| self.nodes[p.0].needs_grad);
        self.nodes.push(Node {
            value,
            parents: parents.iter().map(|p| p.0).collect(),
            backward: needs_grad.then_some(backward),
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Back-propagates from a scalar `root` with seed gradient one.
    pub fn backward(&self, root: Var) -> Result<Gradients<T>> {
        if self.nodes[root.0].value.len() != 1 {
            return Err(invalid("backward root must be a scalar"));
        }
        self.backward_with(root, vec![T::one()])
    }

    /// Back-propagates a given output gradient from `root`.
    pub fn backward_with(&self, root: Var, seed: Vec<T>) -> Result<Gradients<T>> {
        if seed.len() != self.nodes[root.0].value.len() {
            return Err(invalid("seed gradient does not match root size"));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(seed);
        for i in (0..=root.0).rev() {
            let node = &self.nodes[i];
            let Some(backward) = node.backward.as_ref() else {
                continue;
            };
            let Some(grad) = grads[i].take() else {
                continue;
            };
            let inputs: Vec<&Tensor<T>> = node.parents.iter().map(|&p| &self.nodes[p].value).collect();
            let needs: Vec<bool> = node.parents.iter().map(|&p| self.nodes[p].needs_grad).collect();
            let contributions = backward(&BackwardArgs {
                grad: &grad,
                inputs: &inputs,
                output: &node.value,
                needs: &needs,
            });
            for (&p, contrib) in node.parents.iter().zip(contributions) {
                let Some(contrib) = contrib else { continue };
                if !self.nodes[p].needs_grad {
                    continue;
                }
                match &mut grads[p] {
                    Some(acc) => acc.iter_mut().zip(&contrib).for_each(|(a, &c)| *a += c),
                    slot @ None => *slot = Some(contrib),
                }
            }
        }
        Ok(Gradients { grads })
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| v.max(T::zero()));
        self.push(
            value,
            &[x],
            Box::new(|a| {
                let g = a
                    .grad
                    .iter()
                    .zip(a.output.data())
                    .map(|(&g, &y)| if y > T::zero() { g } else { T::zero() })
                    .collect();
                vec![Some(g)]
            }),
        )
    }

    pub fn add(&mut self, x: Var, y: Var) -> Result<Var> {
        if self.shape(x) != self.shape(y) {
            return Err(shape_mismatch(self.shape(x), self.shape(y)));
        }
        let data = self
            .value(x)
            .data()
            .iter()
            .zip(self.value(y).data())
            .map(|(&a, &b)| a + b)
            .collect();
        let value = Tensor::new(self.shape(x), data)?;
        Ok(self.push(
            value,
            &[x, y],
            Box::new(|a| vec![Some(a.grad.to_vec()), Some(a.grad.to_vec())]),
        ))
    }

    pub fn scale(&mut self, x: Var, factor: T) -> Var {
        let value = self.value(x).map(|v| v * factor);
        self.push(
            value,
            &[x],
            Box::new(move |a| vec![Some(a.grad.iter().map(|&g| g * factor).collect())]),
        )
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).clone().reshape(shape)?;
        Ok(self.push(value, &[x], Box::new(|a| vec![Some(a.grad.to_vec())])))
    }

    /// Gathers items along the leading axis.
    pub fn select_batch(&mut self, x: Var, indices: &[usize]) -> Result<Var> {
        let src = self.value(x);
        let n = src.shape()[0];
        if let Some(&bad) = indices.iter().find(|&&i| i >= n) {
            return Err(invalid(alloc::format!("batch index {bad} out of range {n}")));
        }
        let inner = src.len() / n.max(1);
        let mut data = Vec::with_capacity(inner * indices.len());
        for &i in indices {
            data.extend_from_slice(&src.data()[i * inner..(i + 1) * inner]);
        }
        let mut shape = src.shape().to_vec();
        shape[0] = indices.len();
        let value = Tensor::new(&shape, data)?;
        let indices = indices.to_vec();
        Ok(self.push(
            value,
            &[x],
            Box::new(move |a| {
                let mut g = vec![T::zero(); a.inputs[0].len()];
                for (j, &i) in indices.iter().enumerate() {
                    for q in 0..inner {
                        g[i * inner + q] += a.grad[j * inner + q];
                    }
                }
                vec![Some(g)]
            }),
        ))
    }

    /// Concatenates `[n, c_i, h, w]` tensors along the channel axis.
    pub fn concat_channels(&mut self, xs: &[Var]) -> Result<Var> {
        let first = self.value(xs[0]).dims4()?;
        let mut channels = Vec::with_capacity(xs.len());
        for &x in xs {
            let (n, c, h, w) = self.value(x).dims4()?;
            if (n, h, w) != (first.0, first.2, first.3) {
                return Err(shape_mismatch(&[first.0, 0, first.2, first.3], self.shape(x)));
            }
            channels.push(c);
        }
        let (n, _, h, w) = first;
        let hw = h * w;
        let total: usize = channels.iter().sum();
        let mut data = vec![T::zero(); n * total * hw];
        for b in 0..n {
            let mut at = 0;
            for (&x, &c) in xs.iter().zip(&channels) {
                let src = &self.value(x).data()[b * c * hw..(b + 1) * c * hw];
                data[(b * total + at) * hw..(b * total + at + c) * hw].copy_from_slice(src);
                at += c;
            }
        }
        let value = Tensor::new(&[n, total, h, w], data)?;
        Ok(self.push(
            value,
            xs,
            Box::new(move |a| {
                let mut out = Vec::with_capacity(channels.len());
                let mut at = 0;
                for (i, &c) in channels.iter().enumerate() {
                    if !a.needs[i] {
                        out.push(None);
                        at += c;
                        continue;
                    }
                    let mut g = vec![T::zero(); n * c * hw];
                    for b in 0..n {
                        g[b * c * hw..(b + 1) * c * hw]
                            .copy_from_slice(&a.grad[(b * total + at) * hw..(b * total + at + c) * hw]);
                    }
                    out.push(Some(g));
                    at += c;
                }
                out
            }),
        ))
    }

    /// `x: [n, cin, h, w]`, `weight: [cout, cin, k, k]`, `bias: [cout]`.
    pub fn conv2d(&mut self, x: Var, weight: Var, bias: Var, stride: usize, pad: usize) -> Result<Var> {
        let (n, cin, h, w) = self.value(x).dims4()?;
        let ws = self.shape(weight).to_vec();
        let [cout, wcin, k, k2] = ws[..] else {
            return Err(invalid("conv weight must be 4-d"));
        };
        if wcin != cin || k != k2 || self.shape(bias) != [cout] {
            return Err(shape_mismatch(&[cout, cin, k, k], &ws));
        }
        if h + 2 * pad < k || w + 2 * pad < k || stride == 0 {
            return Err(invalid("convolution window does not fit the input"));
        }
        let geom = conv::ConvGeom {
            n,
            cin,
            h,
            w,
            cout,
            k,
            stride,
            pad,
        };
        let (out, cols) = conv::forward(
            self.value(x).data(),
            self.value(weight).data(),
            self.value(bias).data(),
            &geom,
        );
        let value = Tensor::new(&[n, cout, geom.out_h(), geom.out_w()], out)?;
        Ok(self.push(
            value,
            &[x, weight, bias],
            Box::new(move |a| {
                let (gx, gw, gb) = conv::backward(&cols, a.inputs[1].data(), a.grad, &geom, a.needs[0]);
                vec![gx, Some(gw), Some(gb)]
            }),
        ))
    }

    /// `x: [rows, in]`, `weight: [out, in]`, `bias: [out]` → `[rows, out]`.
    pub fn linear(&mut self, x: Var, weight: Var, bias: Var) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(weight).to_vec();
        let (&[rows, fin], &[fout, win]) = (xs.as_slice(), ws.as_slice()) else {
            return Err(invalid("linear expects 2-d input and weight"));
        };
        if win != fin || self.shape(bias) != [fout] {
            return Err(shape_mismatch(&[fout, fin], &ws));
        }
        let mut out = vec![T::zero(); rows * fout];
        for r in 0..rows {
            out[r * fout..(r + 1) * fout].copy_from_slice(self.value(bias).data());
        }
        T::gemm(
            rows,
            fin,
            fout,
            T::one(),
            self.value(x).data(),
            (fin as isize, 1),
            self.value(weight).data(),
            (1, fin as isize),
            T::one(),
            &mut out,
            (fout as isize, 1),
        );
        let value = Tensor::new(&[rows, fout], out)?;
        Ok(self.push(
            value,
            &[x, weight, bias],
            Box::new(move |a| {
                let xin = a.inputs[0].data();
                let wv = a.inputs[1].data();
                let gx = a.needs[0].then(|| {
                    let mut gx = vec![T::zero(); rows * fin];
                    T::gemm(
                        rows,
                        fout,
                        fin,
                        T::one(),
                        a.grad,
                        (fout as isize, 1),
                        wv,
                        (fin as isize, 1),
                        T::zero(),
                        &mut gx,
                        (fin as isize, 1),
                    );
                    gx
                });
                let mut gw = vec![T::zero(); fout * fin];
                T::gemm(
                    fout,
                    rows,
                    fin,
                    T::one(),
                    a.grad,
                    (1, fout as isize),
                    xin,
                    (fin as isize, 1),
                    T::zero(),
                    &mut gw,
                    (fin as isize, 1),
                );
                let mut gb = vec![T::zero(); fout];
                for r in 0..rows {
                    for o in 0..fout {
                        gb[o] += a.grad[r * fout + o];
                    }
                }
                vec![gx, Some(gw), Some(gb)]
            }),
        ))
    }

    /// Per-item channel normalization with affine `gamma`, `beta` (`[c]`).
    pub fn channel_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        let (n, c, h, w) = self.value(x).dims4()?;
        if self.shape(gamma) != [c] || self.shape(beta) != [c] {
            return Err(shape_mismatch(&[c], self.shape(gamma)));
        }
        let hw = h * w;
        let (out, xhat, inv_std) = norm::forward(
            self.value(x).data(),
            self.value(gamma).data(),
            self.value(beta).data(),
            n,
            c,
            hw,
        );
        let value = Tensor::new(&[n, c, h, w], out)?;
        Ok(self.push(
            value,
            &[x, gamma, beta],
            Box::new(move |a| {
                let (gx, gg, gb) = norm::backward(&xhat, &inv_std, a.inputs[1].data(), a.grad, n, c, hw);
                vec![Some(gx), Some(gg), Some(gb)]
            }),
        ))
    }

    /// Correlation volume of `[n, d, h, w]` features over a square window.
    pub fn correlation(&mut self, fa: Var, fb: Var, radius: usize) -> Result<Var> {
        let (n, d, h, w) = self.value(fa).dims4()?;
        if self.shape(fa) != self.shape(fb) {
            return Err(shape_mismatch(self.shape(fa), self.shape(fb)));
        }
        let side = 2 * radius + 1;
        let out = correlation::forward(self.value(fa).data(), self.value(fb).data(), n, d, h, w, radius);
        let value = Tensor::new(&[n, side * side, h, w], out)?;
        Ok(self.push(
            value,
            &[fa, fb],
            Box::new(move |a| {
                let (ga, gb) =
                    correlation::backward(a.inputs[0].data(), a.inputs[1].data(), a.grad, n, d, h, w, radius);
                vec![Some(ga), Some(gb)]
            }),
        ))
    }

    /// Softmax across the channel axis of `[n, c, h, w]`.
    pub fn softmax_channels(&mut self, x: Var) -> Result<Var> {
        let (n, c, h, w) = self.value(x).dims4()?;
        let hw = h * w;
        let out = softmax::forward(self.value(x).data(), n, c, hw);
        let value = Tensor::new(&[n, c, h, w], out)?;
        Ok(self.push(
            value,
            &[x],
            Box::new(move |a| vec![Some(softmax::backward(a.output.data(), a.grad, n, c, hw))]),
        ))
    }

    /// Mask-weighted pooling: `v: [n, d, h, w]`, `s: [n, c, h, w]` → `[n, c, d]`.
    pub fn masked_pool(&mut self, v: Var, s: Var, eps_add: T) -> Result<Var> {
        let (n, d, h, w) = self.value(v).dims4()?;
        let (ns, c, hs, ws) = self.value(s).dims4()?;
        if (n, h, w) != (ns, hs, ws) {
            return Err(shape_mismatch(self.shape(v), self.shape(s)));
        }
        let hw = h * w;
        let fwd = pool::forward(self.value(v).data(), self.value(s).data(), n, d, c, hw, eps_add);
        let value = Tensor::new(&[n, c, d], fwd.pooled.clone())?;
        Ok(self.push(
            value,
            &[v, s],
            Box::new(move |a| {
                let (gv, gs) = pool::backward(a.inputs[0].data(), a.inputs[1].data(), &fwd, a.grad, n, d, c, hw);
                vec![Some(gv), Some(gs)]
            }),
        ))
    }

    /// Segment flow from `vectors: [n, c, 2]` and masks `s: [n, c, h, w]`.
    pub fn compose_flow(&mut self, vectors: Var, s: Var) -> Result<Var> {
        let (n, c, h, w) = self.value(s).dims4()?;
        if self.shape(vectors) != [n, c, 2] {
            return Err(shape_mismatch(&[n, c, 2], self.shape(vectors)));
        }
        let hw = h * w;
        let out = compose::forward(self.value(vectors).data(), self.value(s).data(), n, c, hw);
        let value = Tensor::new(&[n, 2, h, w], out)?;
        Ok(self.push(
            value,
            &[vectors, s],
            Box::new(move |a| {
                let (gv, gs) = compose::backward(a.inputs[0].data(), a.inputs[1].data(), a.grad, n, c, hw);
                vec![Some(gv), Some(gs)]
            }),
        ))
    }

    /// Bilinear resize of `[n, c, h, w]` to `[n, c, oh, ow]`. Flow fields
    /// (`c == 2`, `rescale_flow`) also have their components multiplied by
    /// the per-axis resolution ratio.
    pub fn resize(&mut self, x: Var, oh: usize, ow: usize, rescale_flow: bool) -> Result<Var> {
        let (n, c, h, w) = self.value(x).dims4()?;
        if rescale_flow && c != 2 {
            return Err(invalid("flow rescaling needs a 2-channel field"));
        }
        let scales: Vec<T> = (0..c)
            .map(|ch| match (rescale_flow, ch) {
                (false, _) => T::one(),
                (true, 0) => T::lit(ow as f64 / w as f64),
                (true, _) => T::lit(oh as f64 / h as f64),
            })
            .collect();
        let mut out = Vec::with_capacity(n * c * oh * ow);
        for b in 0..n {
            for (ch, &s) in scales.iter().enumerate() {
                let off = (b * c + ch) * h * w;
                out.extend(resize::forward(&self.value(x).data()[off..off + h * w], 1, h, w, oh, ow, s));
            }
        }
        let value = Tensor::new(&[n, c, oh, ow], out)?;
        Ok(self.push(
            value,
            &[x],
            Box::new(move |a| {
                let mut g = Vec::with_capacity(n * c * h * w);
                for b in 0..n {
                    for (ch, &s) in scales.iter().enumerate() {
                        let off = (b * c + ch) * oh * ow;
                        g.extend(resize::backward(&a.grad[off..off + oh * ow], 1, h, w, oh, ow, s));
                    }
                }
                vec![Some(g)]
            }),
        ))
    }

    /// Backward warp of `x: [n, ch, h, w]` by `flow: [n, 2, h, w]`.
    pub fn warp(&mut self, x: Var, flow: Var) -> Result<Var> {
        let (n, ch, h, w) = self.value(x).dims4()?;
        if self.shape(flow) != [n, 2, h, w] {
            return Err(shape_mismatch(&[n, 2, h, w], self.shape(flow)));
        }
        let out = warp::forward(self.value(x).data(), self.value(flow).data(), n, ch, h, w);
        let value = Tensor::new(&[n, ch, h, w], out)?;
        Ok(self.push(
            value,
            &[x, flow],
            Box::new(move |a| {
                let (gx, gf) = warp::backward(a.inputs[0].data(), a.inputs[1].data(), a.grad, n, ch, h, w);
                vec![a.needs[0].then_some(gx), Some(gf)]
            }),
        ))
    }

    /// Scalar `mean((1 - SSIM(a, b)) / 2)` over all items, channels and pixels.
    pub fn ssim_loss(&mut self, a: Var, b: Var, radius: usize, c1: T, c2: T) -> Result<Var> {
        let (n, c, h, w) = self.value(a).dims4()?;
        if self.shape(a) != self.shape(b) {
            return Err(shape_mismatch(self.shape(a), self.shape(b)));
        }
        if h <= radius || w <= radius {
            return Err(invalid("image smaller than the SSIM window"));
        }
        let l = ssim::loss(self.value(a).data(), self.value(b).data(), n * c, h, w, radius, c1, c2);
        let value = Tensor::new(&[1], vec![l])?;
        Ok(self.push(
            value,
            &[a, b],
            Box::new(move |args| {
                let (ga, gb) = ssim::loss_backward(
                    args.inputs[0].data(),
                    args.inputs[1].data(),
                    n * c,
                    h,
                    w,
                    radius,
                    c1,
                    c2,
                    args.grad[0],
                );
                vec![Some(ga), args.needs[1].then_some(gb)]
            }),
        ))
    }
}
