//! Self-supervised training: symmetric view-synthesis loss, Adam updates,
//! batch assembly and the seeded training loop.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{augment, sample_pair, sample_pair_in, AugmentConfig, FramePair, VideoDataset};
use crate::error::{invalid, Error, Result};
use crate::ops::LossConfig;
use crate::optim::Adam;
use crate::pathways::{self, ModelConfig, ModelState};
use crate::tape::Tape;
use crate::tensor::Tensor;

/// Fewest segments accepted without `allow_few_segments`; below this,
/// training is known to become unstable.
pub const MIN_STABLE_SEGMENTS: usize = 4;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub batch_pairs: usize,
    pub iterations: usize,
    pub crop_size: usize,
    /// Short edge frames are resized to before cropping.
    pub resize_short: usize,
    pub hflip_prob: f64,
    pub seed: u64,
    /// Segment count `c`.
    pub segments: usize,
    pub symmetric: bool,
    /// Permit `segments < MIN_STABLE_SEGMENTS`.
    pub allow_few_segments: bool,
    pub ssim_window: usize,
    pub ssim_c1: f64,
    pub ssim_c2: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let loss = LossConfig::default();
        Self {
            learning_rate: 1e-4,
            weight_decay: 1e-6,
            batch_pairs: 16,
            iterations: 5000,
            crop_size: 64,
            resize_short: 72,
            hflip_prob: 0.5,
            seed: 0,
            segments: 5,
            symmetric: true,
            allow_few_segments: false,
            ssim_window: loss.ssim_window,
            ssim_c1: loss.c1,
            ssim_c2: loss.c2,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return fail(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return fail(format!("weight_decay must be non-negative, got {}", self.weight_decay));
        }
        if self.batch_pairs == 0 {
            return fail("batch_pairs must be at least 1".into());
        }
        if self.crop_size == 0 || self.crop_size % 8 != 0 {
            return fail(format!("crop_size must be a positive multiple of 8, got {}", self.crop_size));
        }
        if self.resize_short < self.crop_size {
            return fail(format!(
                "resize_short {} is smaller than crop_size {}",
                self.resize_short, self.crop_size
            ));
        }
        if !(0.0..=1.0).contains(&self.hflip_prob) {
            return fail(format!("hflip_prob must lie in [0, 1], got {}", self.hflip_prob));
        }
        if self.segments < MIN_STABLE_SEGMENTS && !self.allow_few_segments {
            return fail(format!(
                "segments = {} is below {MIN_STABLE_SEGMENTS}, where training becomes unstable; \
                 set allow_few_segments to run it anyway",
                self.segments
            ));
        }
        self.loss().validate()?;
        self.model().validate()
    }

    pub fn loss(&self) -> LossConfig {
        LossConfig {
            ssim_window: self.ssim_window,
            c1: self.ssim_c1,
            c2: self.ssim_c2,
            symmetric: self.symmetric,
        }
    }

    pub fn model(&self) -> ModelConfig {
        ModelConfig {
            segments: self.segments,
            ..ModelConfig::default()
        }
    }

    pub fn augmentation(&self) -> AugmentConfig {
        AugmentConfig {
            resize_short: self.resize_short,
            crop_size: self.crop_size,
            hflip_prob: self.hflip_prob,
        }
    }
}

/// Steps between periodic checkpoints.
pub fn checkpoint_interval(iterations: usize) -> usize {
    (iterations / 20).max(100)
}

/// Source and target stacks for a batch: `[X_i; X_j]` and `[X_j; X_i]`
/// when symmetric, otherwise `[X_i]` and `[X_j]`.
fn stacks(batch: &[FramePair], symmetric: bool) -> Result<(Tensor<f32>, Tensor<f32>)> {
    let firsts: Vec<&Tensor<f32>> = batch.iter().map(|p| &p.first).collect();
    let seconds: Vec<&Tensor<f32>> = batch.iter().map(|p| &p.second).collect();
    if symmetric {
        let src: Vec<_> = firsts.iter().chain(&seconds).copied().collect();
        let tgt: Vec<_> = seconds.iter().chain(&firsts).copied().collect();
        Ok((Tensor::stack(&src)?, Tensor::stack(&tgt)?))
    } else {
        Ok((Tensor::stack(&firsts)?, Tensor::stack(&seconds)?))
    }
}

/// Batch loss and, when `with_grads`, the gradient of every parameter.
fn evaluate_batch(
    state: &ModelState<f32>,
    batch: &[FramePair],
    loss: &LossConfig,
    with_grads: bool,
) -> Result<(f64, Option<Vec<Vec<f32>>>)> {
    if batch.is_empty() {
        return Err(invalid("training batch is empty"));
    }
    loss.validate()?;
    let n = batch.len();
    let (src, tgt) = stacks(batch, loss.symmetric)?;
    let (_, _, h, w) = src.dims4()?;
    let mut tape = Tape::new();
    let bound = state.bind(&mut tape, with_grads);
    let src = tape.constant(src);
    let tgt = tape.constant(tgt);
    let logits = pathways::appearance_logits(state, &bound, &mut tape, src)?;
    let masks = tape.softmax_channels(logits)?;
    let enc_src = pathways::motion_encode(state, &bound, &mut tape, src)?;
    let enc_tgt = if loss.symmetric {
        // The targets are the sources with halves swapped.
        let order: Vec<usize> = (n..2 * n).chain(0..n).collect();
        tape.select_batch(enc_src, &order)?
    } else {
        pathways::motion_encode(state, &bound, &mut tape, tgt)?
    };
    let feats = pathways::motion_features(state, &bound, &mut tape, enc_src, enc_tgt)?;
    let fv = pathways::forward_tail(state, &bound, &mut tape, masks, feats)?;
    let flow = tape.resize(fv.flow, h, w, true)?;
    let warped = tape.warp(src, flow)?;
    let mean = tape.ssim_loss(warped, tgt, loss.radius(), loss.c1 as f32, loss.c2 as f32)?;
    // The mean over 2n directed items times 2 is the per-pair sum of both
    // directions averaged over the batch.
    let total = if loss.symmetric { tape.scale(mean, 2.0) } else { mean };
    let value = f64::from(tape.value(total).data()[0]);
    if !with_grads {
        return Ok((value, None));
    }
    if !value.is_finite() {
        return Ok((value, None));
    }
    let mut grads = tape.backward(total)?;
    let grads = bound
        .vars
        .iter()
        .map(|&v| grads.take(v).ok_or_else(|| invalid("parameter received no gradient")))
        .collect::<Result<Vec<_>>>()?;
    Ok((value, Some(grads)))
}

/// Symmetric reconstruction loss of `batch` under `state`, without updating.
pub fn batch_loss(state: &ModelState<f32>, batch: &[FramePair], loss: &LossConfig) -> Result<f64> {
    Ok(evaluate_batch(state, batch, loss, false)?.0)
}

/// Loss and parameter gradients, in parameter order.
pub fn loss_and_gradients(
    state: &ModelState<f32>,
    batch: &[FramePair],
    loss: &LossConfig,
) -> Result<(f64, Vec<Vec<f32>>)> {
    let (value, grads) = evaluate_batch(state, batch, loss, true)?;
    grads
        .map(|g| (value, g))
        .ok_or_else(|| Error::NonFiniteLoss {
            step: 0,
            loss: value,
            detail: "loss is not finite".into(),
        })
}

fn describe(batch: &[FramePair]) -> String {
    let items: Vec<String> = batch.iter().map(|p| format!("{}:{}", p.video, p.t)).collect();
    format!("batch pairs (video:t) [{}]", items.join(", "))
}

/// One optimisation step on `batch`; returns the loss before the update.
/// A non-finite loss or gradient leaves the parameters untouched.
pub fn train_step(
    state: &mut ModelState<f32>,
    optimizer: &mut Adam<f32>,
    batch: &[FramePair],
    loss: &LossConfig,
    step: usize,
) -> Result<f64> {
    let (value, grads) = evaluate_batch(state, batch, loss, true)?;
    let grads = match grads {
        Some(g) if value.is_finite() => g,
        _ => {
            return Err(Error::NonFiniteLoss {
                step,
                loss: value,
                detail: describe(batch),
            })
        }
    };
    if let Some((i, _)) = grads
        .iter()
        .enumerate()
        .find(|(_, g)| g.iter().any(|v| !v.is_finite()))
    {
        return Err(Error::NonFiniteLoss {
            step,
            loss: value,
            detail: format!("non-finite gradient for {}; {}", state.params[i].name, describe(batch)),
        });
    }
    optimizer.update(&mut state.params, &grads)?;
    Ok(value)
}

/// Receives progress from [`Trainer::run`].
pub trait TrainObserver {
    fn on_step(&mut self, _step: usize, _loss: f64) -> Result<()> {
        Ok(())
    }
    fn on_checkpoint(&mut self, _step: usize, _state: &ModelState<f32>) -> Result<()> {
        Ok(())
    }
    /// Called with the error of an aborted step before it is returned.
    fn on_abort(&mut self, _step: usize, _error: &Error) {}
}

impl TrainObserver for () {}

/// Where a trainer draws its pairs from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PairSource {
    /// Uniform video, then uniform adjacent pair.
    AnyVideo,
    /// Adjacent pairs of one video only.
    Video(usize),
}

/// Model, optimizer and sampling state of a training run.
#[derive(Clone, Debug)]
pub struct Trainer {
    pub config: TrainConfig,
    pub state: ModelState<f32>,
    pub optimizer: Adam<f32>,
    /// Steps completed.
    pub step: usize,
    rng: ChaCha8Rng,
}

impl Trainer {
    /// Fresh model initialised from `config.seed`.
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let state = ModelState::init(&config.model(), config.seed)?;
        Self::from_state(state, config)
    }

    /// Continues from `state` with a fresh optimizer.
    pub fn from_state(state: ModelState<f32>, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        if state.config.segments != config.segments {
            return Err(Error::Config(format!(
                "model has {} segments, config asks for {}",
                state.config.segments, config.segments
            )));
        }
        let optimizer = Adam::new(&state.params, config.learning_rate, config.weight_decay);
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        // Keep sampling independent of the stream used for initialisation.
        rng.set_stream(1);
        Ok(Self {
            config,
            state,
            optimizer,
            step: 0,
            rng,
        })
    }

    /// Draws and augments one batch.
    pub fn next_batch(&mut self, dataset: &VideoDataset, source: PairSource) -> Result<Vec<FramePair>> {
        let aug = self.config.augmentation();
        (0..self.config.batch_pairs)
            .map(|_| {
                let pair = match source {
                    PairSource::AnyVideo => sample_pair(dataset, &mut self.rng)?,
                    PairSource::Video(v) => sample_pair_in(dataset, v, &mut self.rng)?,
                };
                augment(&pair, &aug, &mut self.rng)
            })
            .collect()
    }

    /// One step on a freshly drawn batch.
    pub fn step_on(&mut self, dataset: &VideoDataset, source: PairSource) -> Result<f64> {
        let batch = self.next_batch(dataset, source)?;
        self.step_batch(&batch)
    }

    /// One step on a given batch.
    pub fn step_batch(&mut self, batch: &[FramePair]) -> Result<f64> {
        let loss = train_step(
            &mut self.state,
            &mut self.optimizer,
            batch,
            &self.config.loss(),
            self.step + 1,
        )?;
        self.step += 1;
        Ok(loss)
    }

    /// Runs until `config.iterations` steps are done, checkpointing every
    /// [`checkpoint_interval`] steps and at the end.
    pub fn run(
        &mut self,
        dataset: &VideoDataset,
        source: PairSource,
        observer: &mut dyn TrainObserver,
    ) -> Result<()> {
        if dataset.is_empty() {
            return Err(invalid("training dataset is empty"));
        }
        let total = self.config.iterations;
        let every = checkpoint_interval(total);
        while self.step < total {
            let step = self.step + 1;
            let loss = match self.step_on(dataset, source) {
                Ok(l) => l,
                Err(e) => {
                    observer.on_abort(step, &e);
                    return Err(e);
                }
            };
            observer.on_step(step, loss)?;
            if step % every == 0 && step != total {
                observer.on_checkpoint(step, &self.state)?;
            }
        }
        observer.on_checkpoint(self.step, &self.state)
    }
}

/// Trains a fresh model on `dataset` for `config.iterations` steps.
pub fn train(dataset: &VideoDataset, config: &TrainConfig, observer: &mut dyn TrainObserver) -> Result<ModelState<f32>> {
    let mut trainer = Trainer::new(config.clone())?;
    trainer.run(dataset, PairSource::AnyVideo, observer)?;
    Ok(trainer.state)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_guards() {
        assert!(TrainConfig::default().validate().is_ok());
        let bad = [
            TrainConfig { learning_rate: 0.0, ..Default::default() },
            TrainConfig { crop_size: 60, resize_short: 64, ..Default::default() },
            TrainConfig { hflip_prob: 1.5, ..Default::default() },
            TrainConfig { segments: 3, ..Default::default() },
            TrainConfig { batch_pairs: 0, ..Default::default() },
        ];
        for cfg in bad {
            assert!(matches!(cfg.validate(), Err(Error::Config(_))), "{cfg:?}");
        }
        let forced = TrainConfig { segments: 3, allow_few_segments: true, ..Default::default() };
        assert!(forced.validate().is_ok());
    }

    #[test]
    fn checkpoint_cadence() {
        assert_eq!(checkpoint_interval(0), 100);
        assert_eq!(checkpoint_interval(5000), 250);
    }
}
