//! Appearance pathway, motion pathway and per-segment flow readout.
//!
//! Appearance: four 3x3 conv blocks (three with stride 2) followed by two
//! conv + channel-norm + ReLU blocks and a 3x3 conv to `c` mask logits, so
//! masks live at 1/8 of the input resolution.
//!
//! Motion: a shared three-block stride-8 encoder applied to both frames, a
//! correlation volume of radius `r`, and a densely connected conv stack whose
//! last two outputs are concatenated into the `d_v`-channel feature map.
//! The stack input is `[correlation, source features, 2 zero channels]`.
//!
//! Readout: a two-layer perceptron applied to each pooled segment feature.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{invalid, shape_mismatch, Error, Result};
use crate::nn::correlation;
use crate::ops;
use crate::real::Real;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Architecture hyper-parameters.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ModelConfig {
    /// Number of segments `c`.
    pub segments: usize,
    pub appearance_channels: [usize; 4],
    pub head_channels: usize,
    pub motion_encoder_channels: [usize; 3],
    pub corr_radius: usize,
    pub flow_stack: [usize; 5],
    pub readout_hidden: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            segments: 5,
            appearance_channels: [32, 64, 128, 128],
            head_channels: 64,
            motion_encoder_channels: [16, 32, 32],
            corr_radius: 4,
            flow_stack: [128, 128, 96, 64, 32],
            readout_hidden: 64,
        }
    }
}

impl ModelConfig {
    /// Motion feature dimension `d_v`.
    pub fn motion_dim(&self) -> usize {
        self.flow_stack[3] + self.flow_stack[4]
    }

    pub fn correlation_channels(&self) -> usize {
        let side = 2 * self.corr_radius + 1;
        side * side
    }

    /// Channel count entering the dense flow stack.
    pub fn stack_input_channels(&self) -> usize {
        self.correlation_channels() + self.motion_encoder_channels[2] + 2
    }

    pub fn validate(&self) -> Result<()> {
        let widths = self
            .appearance_channels
            .iter()
            .chain(&self.motion_encoder_channels)
            .chain(&self.flow_stack);
        if self.segments == 0 || self.head_channels == 0 || self.readout_hidden == 0 {
            return Err(Error::Config("segment count and layer widths must be positive".into()));
        }
        if widths.copied().any(|w| w == 0) || self.corr_radius == 0 {
            return Err(Error::Config("layer widths and correlation radius must be positive".into()));
        }
        Ok(())
    }

    /// `key=value` lines describing the architecture.
    pub fn to_kv(&self) -> String {
        let join = |v: &[usize]| {
            v.iter()
                .map(|x| format!("{x}"))
                .collect::<Vec<_>>()
                .join(",")
        };
        format!(
            "segments={}\nappearance_channels={}\nhead_channels={}\nmotion_encoder_channels={}\ncorr_radius={}\nflow_stack={}\nreadout_hidden={}\n",
            self.segments,
            join(&self.appearance_channels),
            self.head_channels,
            join(&self.motion_encoder_channels),
            self.corr_radius,
            join(&self.flow_stack),
            self.readout_hidden,
        )
    }

    pub fn from_kv(text: &str) -> Result<Self> {
        fn list<const N: usize>(v: &str) -> Result<[usize; N]> {
            let items: Vec<usize> = v
                .split(',')
                .map(|s| s.trim().parse::<usize>())
                .collect::<core::result::Result<_, _>>()
                .map_err(|_| Error::Config(format!("bad list {v:?}")))?;
            items
                .try_into()
                .map_err(|_| Error::Config(format!("expected {N} entries in {v:?}")))
        }
        let num = |v: &str| {
            v.trim()
                .parse::<usize>()
                .map_err(|_| Error::Config(format!("bad integer {v:?}")))
        };
        let mut cfg = Self::default();
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("expected key=value, got {line:?}")))?;
            match key.trim() {
                "segments" => cfg.segments = num(value)?,
                "appearance_channels" => cfg.appearance_channels = list(value)?,
                "head_channels" => cfg.head_channels = num(value)?,
                "motion_encoder_channels" => cfg.motion_encoder_channels = list(value)?,
                "corr_radius" => cfg.corr_radius = num(value)?,
                "flow_stack" => cfg.flow_stack = list(value)?,
                "readout_hidden" => cfg.readout_hidden = num(value)?,
                other => return Err(Error::Config(format!("unknown model key {other:?}"))),
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// A named parameter array.
#[derive(Clone, Debug, PartialEq)]
pub struct Param<T> {
    pub name: String,
    pub value: Tensor<T>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct ConvLayer {
    weight: usize,
    bias: usize,
    stride: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct NormLayer {
    gamma: usize,
    beta: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct LinearLayer {
    weight: usize,
    bias: usize,
}

/// Single-image segmentation network.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AppearanceNet {
    encoder: [ConvLayer; 4],
    head: [(ConvLayer, NormLayer); 2],
    out: ConvLayer,
}

/// Dual-frame motion feature network.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MotionNet {
    encoder: [ConvLayer; 3],
    stack: [ConvLayer; 5],
    radius: usize,
}

/// Two-layer perceptron from pooled motion features to a flow 2-vector.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FlowReadoutHead {
    hidden: LinearLayer,
    out: LinearLayer,
}

enum Init {
    He,
    Zero,
    One,
}

struct Builder<T> {
    params: Vec<Param<T>>,
    rng: ChaCha8Rng,
}

impl<T: Real> Builder<T> {
    fn add(&mut self, name: String, shape: &[usize], init: Init) -> usize {
        let value = match init {
            Init::Zero => Tensor::zeros(shape),
            Init::One => Tensor::full(shape, T::one()),
            Init::He => {
                let fan_in: usize = shape[1..].iter().product();
                let normal = Normal::new(0.0, num_traits::Float::sqrt(2.0 / fan_in as f64)).expect("finite std");
                Tensor::from_fn(shape, |_| T::lit(normal.sample(&mut self.rng)))
            }
        };
        self.params.push(Param { name, value });
        self.params.len() - 1
    }

    fn conv(&mut self, name: &str, cin: usize, cout: usize, stride: usize) -> ConvLayer {
        ConvLayer {
            weight: self.add(format!("{name}.weight"), &[cout, cin, 3, 3], Init::He),
            bias: self.add(format!("{name}.bias"), &[cout], Init::Zero),
            stride,
        }
    }

    fn norm(&mut self, name: &str, c: usize) -> NormLayer {
        NormLayer {
            gamma: self.add(format!("{name}.gamma"), &[c], Init::One),
            beta: self.add(format!("{name}.beta"), &[c], Init::Zero),
        }
    }

    fn linear(&mut self, name: &str, fin: usize, fout: usize, zero: bool) -> LinearLayer {
        LinearLayer {
            weight: self.add(
                format!("{name}.weight"),
                &[fout, fin],
                if zero { Init::Zero } else { Init::He },
            ),
            bias: self.add(format!("{name}.bias"), &[fout], Init::Zero),
        }
    }
}

/// All learnable parameters plus the layer layout that indexes them.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelState<T = f32> {
    pub config: ModelConfig,
    pub params: Vec<Param<T>>,
    pub appearance: AppearanceNet,
    pub motion: MotionNet,
    pub readout: FlowReadoutHead,
    /// Mask channel chosen as "the object", once selected.
    pub object_channel: Option<usize>,
}

impl<T: Real> ModelState<T> {
    /// Fresh parameters: He-normal convolutions, unit/zero norm affines,
    /// zero biases and a zero final readout layer (so initial flow is zero).
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut b = Builder {
            params: Vec::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
        };
        let ac = config.appearance_channels;
        let appearance = AppearanceNet {
            encoder: [
                b.conv("appearance.enc0", 3, ac[0], 2),
                b.conv("appearance.enc1", ac[0], ac[1], 2),
                b.conv("appearance.enc2", ac[1], ac[2], 2),
                b.conv("appearance.enc3", ac[2], ac[3], 1),
            ],
            head: [
                (
                    b.conv("appearance.head0", ac[3], config.head_channels, 1),
                    b.norm("appearance.head0.norm", config.head_channels),
                ),
                (
                    b.conv("appearance.head1", config.head_channels, config.head_channels, 1),
                    b.norm("appearance.head1.norm", config.head_channels),
                ),
            ],
            out: b.conv("appearance.out", config.head_channels, config.segments, 1),
        };
        let mc = config.motion_encoder_channels;
        let fs = config.flow_stack;
        let motion = MotionNet {
            encoder: [
                b.conv("motion.enc0", 3, mc[0], 2),
                b.conv("motion.enc1", mc[0], mc[1], 2),
                b.conv("motion.enc2", mc[1], mc[2], 2),
            ],
            stack: [
                b.conv("motion.stack0", config.stack_input_channels(), fs[0], 1),
                b.conv("motion.stack1", fs[0], fs[1], 1),
                b.conv("motion.stack2", fs[0] + fs[1], fs[2], 1),
                b.conv("motion.stack3", fs[1] + fs[2], fs[3], 1),
                b.conv("motion.stack4", fs[2] + fs[3], fs[4], 1),
            ],
            radius: config.corr_radius,
        };
        let readout = FlowReadoutHead {
            hidden: b.linear("readout.hidden", config.motion_dim(), config.readout_hidden, false),
            out: b.linear("readout.out", config.readout_hidden, 2, true),
        };
        Ok(Self {
            config: config.clone(),
            params: b.params,
            appearance,
            motion,
            readout,
            object_channel: None,
        })
    }

    pub fn parameter_count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Rebuilds a state from named arrays; names and shapes must match the
    /// layout implied by `config`.
    pub fn from_params(config: &ModelConfig, params: Vec<Param<T>>) -> Result<Self> {
        let mut state = Self::init(config, 0)?;
        if params.len() != state.params.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} parameter arrays, found {}",
                state.params.len(),
                params.len()
            )));
        }
        for (slot, p) in state.params.iter_mut().zip(params) {
            if slot.name != p.name || slot.value.shape() != p.value.shape() {
                return Err(Error::Checkpoint(format!(
                    "parameter {:?} {:?} does not match expected {:?} {:?}",
                    p.name,
                    p.value.shape(),
                    slot.name,
                    slot.value.shape()
                )));
            }
            *slot = p;
        }
        Ok(state)
    }

    /// Puts every parameter on `tape`, as variables when `trainable`.
    pub fn bind(&self, tape: &mut Tape<T>, trainable: bool) -> Bound {
        let vars = self
            .params
            .iter()
            .map(|p| {
                if trainable {
                    tape.variable(p.value.clone())
                } else {
                    tape.constant(p.value.clone())
                }
            })
            .collect();
        Bound { vars }
    }
}

/// Tape handles of a [`ModelState`]'s parameters, in parameter order.
pub struct Bound {
    pub vars: Vec<Var>,
}

impl Bound {
    fn conv<T: Real>(&self, tape: &mut Tape<T>, x: Var, layer: &ConvLayer) -> Result<Var> {
        tape.conv2d(x, self.vars[layer.weight], self.vars[layer.bias], layer.stride, 1)
    }

    fn conv_relu<T: Real>(&self, tape: &mut Tape<T>, x: Var, layer: &ConvLayer) -> Result<Var> {
        let y = self.conv(tape, x, layer)?;
        Ok(tape.relu(y))
    }
}

fn check_frames(shape: &[usize]) -> Result<()> {
    match *shape {
        [_, 3, h, w] if h > 0 && w > 0 && h % 8 == 0 && w % 8 == 0 => Ok(()),
        [_, 3, h, w] => Err(invalid(format!(
            "frame size {h}x{w} must be positive and divisible by 8"
        ))),
        _ => Err(invalid(format!("expected [n, 3, h, w] frames, got {shape:?}"))),
    }
}

/// Mask logits `[n, c, h/8, w/8]` for frames `[n, 3, h, w]`.
pub fn appearance_logits<T: Real>(
    state: &ModelState<T>,
    bound: &Bound,
    tape: &mut Tape<T>,
    frames: Var,
) -> Result<Var> {
    check_frames(tape.shape(frames))?;
    let net = &state.appearance;
    let mut x = frames;
    for layer in &net.encoder {
        x = bound.conv_relu(tape, x, layer)?;
    }
    for (conv, norm) in &net.head {
        let y = bound.conv(tape, x, conv)?;
        let y = tape.channel_norm(y, bound.vars[norm.gamma], bound.vars[norm.beta])?;
        x = tape.relu(y);
    }
    bound.conv(tape, x, &net.out)
}

/// Shared motion encoder features `[n, e, h/8, w/8]`.
pub fn motion_encode<T: Real>(
    state: &ModelState<T>,
    bound: &Bound,
    tape: &mut Tape<T>,
    frames: Var,
) -> Result<Var> {
    check_frames(tape.shape(frames))?;
    let mut x = frames;
    for layer in &state.motion.encoder {
        x = bound.conv_relu(tape, x, layer)?;
    }
    Ok(x)
}

/// Motion features `[n, d_v, h/8, w/8]` from encoded source and target.
pub fn motion_features<T: Real>(
    state: &ModelState<T>,
    bound: &Bound,
    tape: &mut Tape<T>,
    source: Var,
    target: Var,
) -> Result<Var> {
    let net = &state.motion;
    let (n, _, h, w) = tape.value(source).dims4()?;
    let corr = tape.correlation(source, target, net.radius)?;
    let corr = tape.relu(corr);
    let pad = tape.constant(Tensor::zeros(&[n, 2, h, w]));
    let x = tape.concat_channels(&[corr, source, pad])?;
    let a = bound.conv_relu(tape, x, &net.stack[0])?;
    let b = bound.conv_relu(tape, a, &net.stack[1])?;
    let ab = tape.concat_channels(&[a, b])?;
    let c = bound.conv_relu(tape, ab, &net.stack[2])?;
    let bc = tape.concat_channels(&[b, c])?;
    let d = bound.conv_relu(tape, bc, &net.stack[3])?;
    let cd = tape.concat_channels(&[c, d])?;
    let e = bound.conv_relu(tape, cd, &net.stack[4])?;
    tape.concat_channels(&[d, e])
}

/// Flow vectors `[n, c, 2]` from pooled features `[n, c, d_v]`.
pub fn readout<T: Real>(state: &ModelState<T>, bound: &Bound, tape: &mut Tape<T>, pooled: Var) -> Result<Var> {
    let (n, c, d) = match *tape.shape(pooled) {
        [n, c, d] => (n, c, d),
        ref s => return Err(invalid(format!("expected [n, c, d] pooled features, got {s:?}"))),
    };
    let head = &state.readout;
    let rows = tape.reshape(pooled, &[n * c, d])?;
    let hidden = tape.linear(rows, bound.vars[head.hidden.weight], bound.vars[head.hidden.bias])?;
    let hidden = tape.relu(hidden);
    let out = tape.linear(hidden, bound.vars[head.out.weight], bound.vars[head.out.bias])?;
    tape.reshape(out, &[n, c, 2])
}

/// Tape handles of one forward pass over a batch of frame pairs.
pub struct ForwardVars {
    pub masks: Var,
    pub vectors: Var,
    pub flow: Var,
}

/// Pooling denominator stabilizer used inside the training graph.
pub const POOL_EPS: f64 = 1e-8;

/// Full forward pass from source frames to target frames; masks come from
/// the source frames only.
pub fn forward_on_tape<T: Real>(
    state: &ModelState<T>,
    bound: &Bound,
    tape: &mut Tape<T>,
    source: Var,
    target: Var,
) -> Result<ForwardVars> {
    if tape.shape(source) != tape.shape(target) {
        return Err(shape_mismatch(tape.shape(source), tape.shape(target)));
    }
    let logits = appearance_logits(state, bound, tape, source)?;
    let masks = tape.softmax_channels(logits)?;
    let enc_s = motion_encode(state, bound, tape, source)?;
    let enc_t = motion_encode(state, bound, tape, target)?;
    let feats = motion_features(state, bound, tape, enc_s, enc_t)?;
    forward_tail(state, bound, tape, masks, feats)
}

/// Pooling, readout and composition given masks and motion features.
pub fn forward_tail<T: Real>(
    state: &ModelState<T>,
    bound: &Bound,
    tape: &mut Tape<T>,
    masks: Var,
    feats: Var,
) -> Result<ForwardVars> {
    let pooled = tape.masked_pool(feats, masks, T::lit(POOL_EPS))?;
    let vectors = readout(state, bound, tape, pooled)?;
    let flow = tape.compose_flow(vectors, masks)?;
    Ok(ForwardVars { masks, vectors, flow })
}

fn batch1<T: Real>(image: &Tensor<T>) -> Result<Tensor<T>> {
    image.dims3()?;
    Ok(image.clone().unsqueeze0())
}

/// Mask logits `[c, h/8, w/8]` for one `[3, h, w]` frame.
pub fn appearance_forward<T: Real>(state: &ModelState<T>, image: &Tensor<T>) -> Result<Tensor<T>> {
    let mut tape = Tape::new();
    let bound = state.bind(&mut tape, false);
    let x = tape.constant(batch1(image)?);
    let logits = appearance_logits(state, &bound, &mut tape, x)?;
    Ok(tape.value(logits).index0(0))
}

/// Motion features `[d_v, h/8, w/8]` for an ordered frame pair.
pub fn motion_forward<T: Real>(state: &ModelState<T>, x_i: &Tensor<T>, x_j: &Tensor<T>) -> Result<Tensor<T>> {
    if x_i.shape() != x_j.shape() {
        return Err(shape_mismatch(x_i.shape(), x_j.shape()));
    }
    let mut tape = Tape::new();
    let bound = state.bind(&mut tape, false);
    let a = tape.constant(batch1(x_i)?);
    let b = tape.constant(batch1(x_j)?);
    let ea = motion_encode(state, &bound, &mut tape, a)?;
    let eb = motion_encode(state, &bound, &mut tape, b)?;
    let v = motion_features(state, &bound, &mut tape, ea, eb)?;
    Ok(tape.value(v).index0(0))
}

/// Correlation of `[d, h, w]` feature maps over a `(2r+1)^2` window.
pub fn correlation_volume<T: Real>(feat_i: &Tensor<T>, feat_j: &Tensor<T>, radius: usize) -> Result<Tensor<T>> {
    let (d, h, w) = feat_i.dims3()?;
    if feat_i.shape() != feat_j.shape() {
        return Err(shape_mismatch(feat_i.shape(), feat_j.shape()));
    }
    if radius == 0 {
        return Err(invalid("correlation radius must be at least 1"));
    }
    let side = 2 * radius + 1;
    Tensor::new(
        &[side * side, h, w],
        correlation::forward(feat_i.data(), feat_j.data(), 1, d, h, w, radius),
    )
}

/// Per-segment flow vectors `[c, 2]` from pooled features `[c, d_v]`.
pub fn readout_flow<T: Real>(state: &ModelState<T>, pooled: &Tensor<T>) -> Result<Tensor<T>> {
    if pooled.ndim() != 2 || pooled.shape()[1] != state.config.motion_dim() {
        return Err(shape_mismatch(&[0, state.config.motion_dim()], pooled.shape()));
    }
    if !pooled.all_finite() {
        return Err(invalid("pooled features contain non-finite values"));
    }
    let mut tape = Tape::new();
    let bound = state.bind(&mut tape, false);
    let p = tape.constant(pooled.clone().unsqueeze0());
    let v = readout(state, &bound, &mut tape, p)?;
    Ok(tape.value(v).index0(0))
}

/// Outputs of [`model_forward`] for one pair.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelOutput<T> {
    /// `[c, h/8, w/8]`, soft masks of the source frame.
    pub masks: Tensor<T>,
    /// `[c, 2]` per-segment flow in mask-grid pixels.
    pub vectors: Tensor<T>,
    /// `[2, h/8, w/8]` segment flow.
    pub flow: Tensor<T>,
}

/// Masks, segment vectors and segment flow from `x_i` toward `x_j`.
pub fn model_forward<T: Real>(state: &ModelState<T>, x_i: &Tensor<T>, x_j: &Tensor<T>) -> Result<ModelOutput<T>> {
    let mut out = model_forward_batch(state, &Tensor::stack(&[x_i])?, &Tensor::stack(&[x_j])?)?;
    Ok(out.swap_remove(0))
}

/// Batched [`model_forward`] over `[n, 3, h, w]` sources and targets.
pub fn model_forward_batch<T: Real>(
    state: &ModelState<T>,
    sources: &Tensor<T>,
    targets: &Tensor<T>,
) -> Result<Vec<ModelOutput<T>>> {
    let mut tape = Tape::new();
    let bound = state.bind(&mut tape, false);
    let s = tape.constant(sources.clone());
    let t = tape.constant(targets.clone());
    let fv = forward_on_tape(state, &bound, &mut tape, s, t)?;
    let n = sources.shape()[0];
    Ok((0..n)
        .map(|i| ModelOutput {
            masks: tape.value(fv.masks).index0(i),
            vectors: tape.value(fv.vectors).index0(i),
            flow: tape.value(fv.flow).index0(i),
        })
        .collect())
}

/// Soft masks `[c, h/8, w/8]` for one frame.
pub fn masks_for<T: Real>(state: &ModelState<T>, image: &Tensor<T>) -> Result<Tensor<T>> {
    ops::normalize_masks(&appearance_forward(state, image)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_matches_reference_stack_sizes() {
        let cfg = ModelConfig::default();
        assert_eq!(cfg.stack_input_channels(), 115);
        assert_eq!(cfg.motion_dim(), 96);
        assert_eq!(ModelConfig::from_kv(&cfg.to_kv()).unwrap(), cfg);
    }

    #[test]
    fn parameter_budget() {
        let state = ModelState::<f32>::init(&ModelConfig::default(), 0).unwrap();
        assert!(state.parameter_count() < 5_000_000, "{}", state.parameter_count());
    }

    #[test]
    fn rejects_indivisible_frames() {
        let state = ModelState::<f32>::init(&ModelConfig::default(), 0).unwrap();
        let img = Tensor::full(&[3, 60, 64], 0.5f32);
        assert!(matches!(appearance_forward(&state, &img), Err(Error::InvalidInput(_))));
    }
}
