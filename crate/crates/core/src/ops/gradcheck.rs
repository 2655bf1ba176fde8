//! Finite-difference verification of the analytic operator gradients.

use alloc::vec;
use alloc::vec::Vec;

use super::{
    compose, masked_pool, normalize_masks, pool, recon, softmax, ssim, warp, LossConfig,
};
use crate::error::{invalid, shape_mismatch, Result};
use crate::tensor::Tensor;

/// Operators covered by [`check_gradient`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OpId {
    NormalizeMasks,
    MaskedPool,
    ComposeSegmentFlow,
    WarpBackward,
    SsimLoss,
    ReconstructionLoss,
}

impl OpId {
    pub const ALL: [OpId; 6] = [
        OpId::NormalizeMasks,
        OpId::MaskedPool,
        OpId::ComposeSegmentFlow,
        OpId::WarpBackward,
        OpId::SsimLoss,
        OpId::ReconstructionLoss,
    ];

    pub fn arity(self) -> usize {
        match self {
            OpId::NormalizeMasks => 1,
            OpId::ReconstructionLoss => 4,
            _ => 2,
        }
    }
}

/// Inputs at which to check an operator, in the order of its signature:
///
/// - `NormalizeMasks`: logits `[c, h, w]`
/// - `MaskedPool`: features `[d, h, w]`, masks `[c, h, w]`
/// - `ComposeSegmentFlow`: vectors `[c, 2]`, masks `[c, h, w]`
/// - `WarpBackward`: image `[ch, h, w]`, flow `[2, h, w]`
/// - `SsimLoss`: `x_hat`, `x`
/// - `ReconstructionLoss`: `x_i`, `x_j`, `f_ij`, `f_ji`
#[derive(Clone, Debug)]
pub struct GradPoint {
    pub inputs: Vec<Tensor<f64>>,
    pub loss: LossConfig,
}

impl GradPoint {
    pub fn new(inputs: Vec<Tensor<f64>>) -> Self {
        Self {
            inputs,
            loss: LossConfig::default(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    pub checked: usize,
    /// Coordinates sitting on a kink of the operator (exact integer sample
    /// positions for warping), reported instead of compared.
    pub skipped: usize,
}

/// Fixed projection weights turning a tensor output into a scalar.
fn projection(len: usize) -> Vec<f64> {
    (0..len)
        .map(|i| num_traits::Float::sin(0.7 + 1.37 * i as f64) + 0.25)
        .collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn eval(op: OpId, inputs: &[Tensor<f64>], cfg: &LossConfig, weights: &[f64]) -> Result<f64> {
    Ok(match op {
        OpId::NormalizeMasks => dot(normalize_masks(&inputs[0])?.data(), weights),
        OpId::MaskedPool => dot(masked_pool(&inputs[0], &inputs[1])?.data(), weights),
        OpId::ComposeSegmentFlow => {
            dot(super::compose_segment_flow(&inputs[0], &inputs[1])?.data(), weights)
        }
        OpId::WarpBackward => dot(super::warp_backward(&inputs[0], &inputs[1])?.data(), weights),
        OpId::SsimLoss => super::ssim_loss(&inputs[0], &inputs[1], cfg)?,
        OpId::ReconstructionLoss => {
            recon::reconstruction_loss(&inputs[0], &inputs[1], &inputs[2], &inputs[3], cfg)?
        }
    })
}

fn output_len(op: OpId, inputs: &[Tensor<f64>], cfg: &LossConfig) -> Result<usize> {
    Ok(match op {
        OpId::NormalizeMasks => inputs[0].len(),
        OpId::MaskedPool => inputs[1].shape()[0] * inputs[0].shape()[0],
        OpId::ComposeSegmentFlow => super::compose_segment_flow(&inputs[0], &inputs[1])?.len(),
        OpId::WarpBackward => inputs[0].len(),
        OpId::SsimLoss | OpId::ReconstructionLoss => {
            cfg.validate()?;
            1
        }
    })
}

fn analytic(op: OpId, inputs: &[Tensor<f64>], cfg: &LossConfig, weights: &[f64]) -> Result<Vec<Vec<f64>>> {
    Ok(match op {
        OpId::NormalizeMasks => {
            let (c, h, w) = inputs[0].dims3()?;
            let probs = normalize_masks(&inputs[0])?;
            vec![softmax::backward(probs.data(), weights, 1, c, h * w)]
        }
        OpId::MaskedPool => {
            let (d, h, w) = inputs[0].dims3()?;
            let c = inputs[1].shape()[0];
            let fwd = pool::forward(inputs[0].data(), inputs[1].data(), 1, d, c, h * w, 0.0);
            let (gv, gs) = pool::backward(inputs[0].data(), inputs[1].data(), &fwd, weights, 1, d, c, h * w);
            vec![gv, gs]
        }
        OpId::ComposeSegmentFlow => {
            let (c, h, w) = inputs[1].dims3()?;
            let (gv, gs) = compose::backward(inputs[0].data(), inputs[1].data(), weights, 1, c, h * w);
            vec![gv, gs]
        }
        OpId::WarpBackward => {
            let (ch, h, w) = inputs[0].dims3()?;
            let (gx, gf) = warp::backward(inputs[0].data(), inputs[1].data(), weights, 1, ch, h, w);
            vec![gx, gf]
        }
        OpId::SsimLoss => {
            let (c, h, w) = inputs[0].dims3()?;
            let (ga, gb) = ssim::loss_backward(
                inputs[0].data(),
                inputs[1].data(),
                c,
                h,
                w,
                cfg.radius(),
                cfg.c1,
                cfg.c2,
                1.0,
            );
            vec![ga, gb]
        }
        OpId::ReconstructionLoss => {
            recon::reconstruction_grad(&inputs[0], &inputs[1], &inputs[2], &inputs[3], cfg).to_vec()
        }
    })
}

/// Whether coordinate `k` of input `slot` sits on a kink for `op`.
fn on_kink(op: OpId, inputs: &[Tensor<f64>], slot: usize, k: usize, eps: f64) -> bool {
    let flow_slot = match op {
        OpId::WarpBackward => slot == 1,
        OpId::ReconstructionLoss => slot >= 2,
        _ => false,
    };
    if !flow_slot {
        return false;
    }
    let shape = inputs[slot].shape();
    warp::near_kink(inputs[slot].data(), k, shape[1], shape[2], 2.0 * eps)
}

/// Compares analytic gradients of `op` at `point` against central finite
/// differences with step `eps`, returning the largest relative error
/// `|g_a - g_n| / max(1, |g_a|, |g_n|)` over all input coordinates.
pub fn check_gradient(op: OpId, point: &GradPoint, eps: f64) -> Result<GradCheckReport> {
    if point.inputs.len() != op.arity() {
        return Err(invalid(alloc::format!(
            "{op:?} takes {} inputs, got {}",
            op.arity(),
            point.inputs.len()
        )));
    }
    if !(eps > 0.0 && eps <= 1e-2) {
        return Err(invalid("finite-difference step must lie in (0, 1e-2]"));
    }
    if let Some(bad) = point.inputs.iter().find(|t| !t.all_finite()) {
        return Err(invalid(alloc::format!("non-finite input point of shape {:?}", bad.shape())));
    }
    if op == OpId::ReconstructionLoss || op == OpId::SsimLoss {
        if point.inputs[0].shape() != point.inputs[1].shape() {
            return Err(shape_mismatch(point.inputs[0].shape(), point.inputs[1].shape()));
        }
    }
    let cfg = &point.loss;
    let weights = projection(output_len(op, &point.inputs, cfg)?);
    // Evaluating once validates shapes before any differencing.
    eval(op, &point.inputs, cfg, &weights)?;
    let grads = analytic(op, &point.inputs, cfg, &weights)?;

    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        checked: 0,
        skipped: 0,
    };
    let mut probe = point.inputs.clone();
    for slot in 0..probe.len() {
        for k in 0..probe[slot].len() {
            if on_kink(op, &point.inputs, slot, k, eps) {
                report.skipped += 1;
                continue;
            }
            let orig = probe[slot].data()[k];
            probe[slot].data_mut()[k] = orig + eps;
            let plus = eval(op, &probe, cfg, &weights)?;
            probe[slot].data_mut()[k] = orig - eps;
            let minus = eval(op, &probe, cfg, &weights)?;
            probe[slot].data_mut()[k] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            let exact = grads[slot][k];
            let rel = (exact - numeric).abs() / 1f64.max(exact.abs()).max(numeric.abs());
            report.max_relative_error = report.max_relative_error.max(rel);
            report.checked += 1;
        }
    }
    Ok(report)
}
