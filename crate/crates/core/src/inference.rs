//! Zero-shot segmentation, object-channel selection, per-video test-time
//! adaptation, evaluation reports and flow visualisation.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::fmt::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{Image, Video, VideoDataset};
use crate::error::{invalid, Error, Result};
use crate::metrics::{self, SaliencyMap, BETA_SQ, F_BETA_THRESHOLDS, JACCARD_THRESHOLD};
use crate::ops;
use crate::pathways::{self, ModelOutput, ModelState};
use crate::tensor::Tensor;
use crate::training::{PairSource, TrainConfig, Trainer};

#[cfg(not(feature = "std"))]
use num_traits::Float;

/// Fewest frame pairs averaged when selecting the object channel.
pub const MIN_SELECTION_PAIRS: usize = 32;

/// Per-channel mean segment speed `‖F_m‖`, weighted by mask mass.
pub fn motion_scores(outputs: &[ModelOutput<f32>]) -> Result<Vec<f64>> {
    let first = outputs.first().ok_or_else(|| invalid("no model outputs to score"))?;
    let c = first.vectors.shape()[0];
    let (mut num, mut den) = (vec![0.0f64; c], vec![0.0f64; c]);
    for out in outputs {
        let (oc, h, w) = out.masks.dims3()?;
        if oc != c {
            return Err(invalid("outputs disagree on the segment count"));
        }
        for m in 0..c {
            let mass: f64 = out.masks.data()[m * h * w..(m + 1) * h * w]
                .iter()
                .map(|&v| f64::from(v))
                .sum();
            let v = &out.vectors.data()[2 * m..2 * m + 2];
            let speed = f64::from(v[0]).hypot(f64::from(v[1]));
            num[m] += mass * speed;
            den[m] += mass;
        }
    }
    Ok(num
        .iter()
        .zip(&den)
        .map(|(&n, &d)| if d > 0.0 { n / d } else { 0.0 })
        .collect())
}

/// Index of the largest score; the lowest index wins ties.
pub fn argmax_lowest(scores: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &s) in scores.iter().enumerate() {
        match best {
            Some(b) if !(s > scores[b]) => {}
            _ if s.is_nan() => {}
            _ => best = Some(i),
        }
    }
    best
}

/// Picks the channel with the largest mass-weighted mean segment motion
/// over `pairs` (at least [`MIN_SELECTION_PAIRS`]) adjacent pairs drawn
/// with `seed` from `videos`.
pub fn select_object_channel(state: &ModelState<f32>, videos: &VideoDataset, pairs: usize, seed: u64) -> Result<usize> {
    if videos.videos.iter().all(|v| v.frames.len() < 2) {
        return Err(invalid("channel selection needs a video with at least 2 frames"));
    }
    let pairs = pairs.max(MIN_SELECTION_PAIRS);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let usable: Vec<&Video> = videos.videos.iter().filter(|v| v.frames.len() >= 2).collect();
    let mut outputs = Vec::with_capacity(pairs);
    const CHUNK: usize = 8;
    let mut remaining = pairs;
    while remaining > 0 {
        let k = remaining.min(CHUNK);
        let mut src = Vec::with_capacity(k);
        let mut tgt = Vec::with_capacity(k);
        for _ in 0..k {
            let v = usable[rng.gen_range(0..usable.len())];
            let t = rng.gen_range(0..v.frames.len() - 1);
            src.push(&v.frames[t]);
            tgt.push(&v.frames[t + 1]);
        }
        let (src, tgt) = (Tensor::stack(&src)?, Tensor::stack(&tgt)?);
        outputs.extend(pathways::model_forward_batch(state, &src, &tgt)?);
        remaining -= k;
    }
    let scores = motion_scores(&outputs)?;
    argmax_lowest(&scores).ok_or_else(|| invalid("motion scores are all NaN"))
}

/// Soft mask of `channel`, bilinearly upsampled to the frame size.
pub fn infer_saliency(state: &ModelState<f32>, image: &Image, channel: usize) -> Result<SaliencyMap> {
    let c = state.config.segments;
    if channel >= c {
        return Err(invalid(format!("channel {channel} out of range for {c} segments")));
    }
    let (_, h, w) = image.dims3()?;
    let masks = pathways::masks_for(state, image)?;
    let (_, mh, mw) = masks.dims3()?;
    let one = Tensor::new(&[1, mh, mw], masks.data()[channel * mh * mw..(channel + 1) * mh * mw].to_vec())?;
    let up = ops::resize_bilinear(&one, h, w)?;
    SaliencyMap::new(h, w, up.data().iter().map(|&v| f64::from(v).clamp(0.0, 1.0)).collect())
}

/// `config` with scale augmentation turned off for `video`: no resize, and
/// the largest multiple-of-8 square crop that fits. Predictions are made at
/// the video's own scale, so adapting at any other scale mis-calibrates the
/// mask extent.
pub fn native_scale(config: &TrainConfig, video: &Video) -> Result<TrainConfig> {
    let (h, w) = video.size();
    let short = h.min(w);
    let crop = short / 8 * 8;
    if crop == 0 {
        return Err(invalid(format!("video {} is smaller than 8 pixels", video.id)));
    }
    Ok(TrainConfig { resize_short: short, crop_size: crop, ..config.clone() })
}

/// Fine-tunes a copy of `state` on pairs from `video` alone for
/// `iterations` steps at the video's native scale (see [`native_scale`]);
/// `state` itself is left untouched.
pub fn test_time_adapt(
    state: &ModelState<f32>,
    video: &Video,
    iterations: usize,
    config: &TrainConfig,
) -> Result<ModelState<f32>> {
    if video.frames.len() < 2 {
        return Err(invalid(format!("video {} has fewer than 2 frames", video.id)));
    }
    if iterations == 0 {
        return Ok(state.clone());
    }
    let dataset = VideoDataset::new(vec![video.clone()])?;
    let config = TrainConfig {
        iterations,
        segments: state.config.segments,
        ..native_scale(config, video)?
    };
    let mut trainer = Trainer::from_state(state.clone(), config)?;
    for _ in 0..iterations {
        trainer.step_on(&dataset, PairSource::Video(0))?;
    }
    Ok(trainer.state)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EvalMode {
    /// Frozen model, one frame at a time.
    PerImage,
    /// Test-time adaptation on each video before predicting it.
    PerVideo,
}

impl EvalMode {
    pub fn name(self) -> &'static str {
        match self {
            EvalMode::PerImage => "per-image",
            EvalMode::PerVideo => "per-video",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "per-image" | "per_image" => Ok(EvalMode::PerImage),
            "per-video" | "per_video" => Ok(EvalMode::PerVideo),
            _ => Err(invalid(format!("unknown evaluation mode {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalOptions {
    pub mode: EvalMode,
    /// Overrides the state's stored object channel.
    pub channel: Option<usize>,
    pub adapt_iterations: usize,
    /// Recipe for adaptation; its seed is offset by the video index.
    pub adapt: TrainConfig,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            mode: EvalMode::PerImage,
            channel: None,
            adapt_iterations: 100,
            adapt: TrainConfig {
                batch_pairs: 2,
                ..TrainConfig::default()
            },
        }
    }
}

/// Scores of one video, averaged over its frames.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalItem {
    pub id: String,
    pub jaccard: f64,
    /// NaN when no frame has a non-empty ground truth.
    pub f_beta: f64,
    pub mae: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub mode: EvalMode,
    pub channel: usize,
    pub items: Vec<EvalItem>,
    pub mean_jaccard: f64,
    pub mean_f_beta: f64,
    pub mean_mae: f64,
    /// Settings that produced the report, as `key=value` pairs.
    pub config: Vec<(String, String)>,
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (mut s, mut n) = (0.0, 0usize);
    for v in values.filter(|v| !v.is_nan()) {
        s += v;
        n += 1;
    }
    if n == 0 {
        f64::NAN
    } else {
        s / n as f64
    }
}

impl EvalReport {
    pub fn from_items(mode: EvalMode, channel: usize, items: Vec<EvalItem>, config: Vec<(String, String)>) -> Self {
        Self {
            mode,
            channel,
            mean_jaccard: mean(items.iter().map(|i| i.jaccard)),
            mean_f_beta: mean(items.iter().map(|i| i.f_beta)),
            mean_mae: mean(items.iter().map(|i| i.mae)),
            items,
            config,
        }
    }

    /// `item,jaccard,f_beta,mae` rows plus a final `mean` row.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("item,jaccard,f_beta,mae\n");
        for i in &self.items {
            let _ = writeln!(s, "{},{},{},{}", i.id, i.jaccard, i.f_beta, i.mae);
        }
        let _ = writeln!(s, "mean,{},{},{}", self.mean_jaccard, self.mean_f_beta, self.mean_mae);
        s
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "mode: {}", self.mode.name());
        let _ = writeln!(s, "object channel: {}", self.channel);
        let _ = writeln!(s, "items: {}", self.items.len());
        let _ = writeln!(s, "mean jaccard: {:.4}", self.mean_jaccard);
        let _ = writeln!(s, "mean f_beta: {:.4}", self.mean_f_beta);
        let _ = writeln!(s, "mean mae: {:.4}", self.mean_mae);
        for (k, v) in &self.config {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }
}

/// Frame-averaged scores of one video under `state`.
pub fn score_video(state: &ModelState<f32>, video: &Video, channel: usize) -> Result<EvalItem> {
    let gts = video.ground_truth()?;
    let (mut j, mut f, mut e) = (Vec::new(), Vec::new(), Vec::new());
    for (frame, gt) in video.frames.iter().zip(gts) {
        let sal = infer_saliency(state, frame, channel)?;
        j.push(metrics::jaccard(&sal.binarize(JACCARD_THRESHOLD), gt)?);
        match metrics::f_beta(&sal, gt, BETA_SQ) {
            Ok(v) => f.push(v),
            Err(Error::UndefinedMetric(_)) => {}
            Err(err) => return Err(err),
        }
        e.push(metrics::mae(&sal, gt)?);
    }
    Ok(EvalItem {
        id: video.id.clone(),
        jaccard: mean(j.into_iter()),
        f_beta: mean(f.into_iter()),
        mae: mean(e.into_iter()),
    })
}

/// Scores every video of `dataset`; per-video mode adapts a fresh copy of
/// `state` to each video first.
pub fn evaluate(state: &ModelState<f32>, dataset: &VideoDataset, options: &EvalOptions) -> Result<EvalReport> {
    if dataset.is_empty() {
        return Err(invalid("evaluation dataset is empty"));
    }
    if let Some(v) = dataset.videos.iter().find(|v| v.gt_masks.is_none()) {
        return Err(Error::MissingGroundTruth(format!(
            "video {} has no masks; evaluation needs ground truth",
            v.id
        )));
    }
    let channel = options
        .channel
        .or(state.object_channel)
        .ok_or_else(|| invalid("no object channel: select one or pass it explicitly"))?;
    if channel >= state.config.segments {
        return Err(invalid(format!("channel {channel} out of range")));
    }
    let mut items = Vec::with_capacity(dataset.len());
    for (i, video) in dataset.videos.iter().enumerate() {
        let item = match options.mode {
            EvalMode::PerImage => score_video(state, video, channel)?,
            EvalMode::PerVideo => {
                let cfg = TrainConfig {
                    seed: options.adapt.seed.wrapping_add(i as u64),
                    ..options.adapt.clone()
                };
                let adapted = test_time_adapt(state, video, options.adapt_iterations, &cfg)?;
                score_video(&adapted, video, channel)?
            }
        };
        items.push(item);
    }
    let mut config = vec![
        ("mode".to_string(), options.mode.name().to_string()),
        ("channel".to_string(), channel.to_string()),
        ("segments".to_string(), state.config.segments.to_string()),
        ("jaccard_threshold".to_string(), JACCARD_THRESHOLD.to_string()),
        ("f_beta".to_string(), format!("max over {F_BETA_THRESHOLDS} thresholds k/255, beta^2={BETA_SQ}")),
        ("mae".to_string(), "mean absolute error".to_string()),
    ];
    if options.mode == EvalMode::PerVideo {
        let a = &options.adapt;
        config.extend([
            ("adapt_iterations".to_string(), options.adapt_iterations.to_string()),
            ("adapt_batch_pairs".to_string(), a.batch_pairs.to_string()),
            ("adapt_learning_rate".to_string(), a.learning_rate.to_string()),
            ("adapt_weight_decay".to_string(), a.weight_decay.to_string()),
            ("adapt_seed".to_string(), a.seed.to_string()),
            ("adapt_scale".to_string(), "native".to_string()),
            ("adapt_hflip_prob".to_string(), a.hflip_prob.to_string()),
        ]);
    }
    Ok(EvalReport::from_items(options.mode, channel, items, config))
}

/// Mean per-image Jaccard of every channel, for checking channel selection.
pub fn channel_jaccards(state: &ModelState<f32>, dataset: &VideoDataset) -> Result<Vec<f64>> {
    (0..state.config.segments)
        .map(|m| {
            let items = dataset
                .videos
                .iter()
                .map(|v| score_video(state, v, m).map(|i| i.jaccard))
                .collect::<Result<Vec<_>>>()?;
            Ok(mean(items.into_iter()))
        })
        .collect()
}

fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [f64; 3] {
    let h6 = (h - num_traits::Float::floor(h)) * 6.0;
    let sector = h6.floor();
    let f = h6 - sector;
    let (p, q, t) = (v * (1.0 - s), v * (1.0 - s * f), v * (1.0 - s * (1.0 - f)));
    match sector as u32 % 6 {
        0 => [v, t, p],
        1 => [q, v, p],
        2 => [p, v, t],
        3 => [p, q, v],
        4 => [t, p, v],
        _ => [v, p, q],
    }
}

/// Colour-wheel rendering of a `[2, h, w]` flow: hue encodes direction,
/// saturation the magnitude relative to the largest in the field. Zero flow
/// is white.
pub fn visualize_flow(flow: &Tensor<f32>) -> Result<Image> {
    let (c, h, w) = flow.dims3()?;
    if c != 2 {
        return Err(invalid("flow must have 2 channels"));
    }
    if !flow.all_finite() {
        return Err(invalid("flow contains non-finite values"));
    }
    let hw = h * w;
    let (fx, fy) = flow.data().split_at(hw);
    let mag: Vec<f64> = fx.iter().zip(fy).map(|(&x, &y)| f64::from(x).hypot(f64::from(y))).collect();
    let max = mag.iter().copied().fold(0.0, f64::max);
    let mut out = vec![0.0f32; 3 * hw];
    for p in 0..hw {
        let (hue, sat) = if max > 0.0 {
            let angle = f64::from(fy[p]).atan2(f64::from(fx[p]));
            (angle / (2.0 * core::f64::consts::PI), mag[p] / max)
        } else {
            (0.0, 0.0)
        };
        let rgb = hsv_to_rgb(hue, sat, 1.0);
        for k in 0..3 {
            out[k * hw + p] = rgb[k] as f32;
        }
    }
    Tensor::new(&[3, h, w], out)
}

/// Distinct colour per segment index.
pub fn segment_color(m: usize) -> [f64; 3] {
    hsv_to_rgb(m as f64 * 0.618_033_988_75, 0.85, 1.0)
}

/// Blends `image` with the colour of each pixel's most likely segment.
/// `masks` is `[c, h', w']` and is upsampled to the image size.
pub fn overlay_segments(image: &Image, masks: &Tensor<f32>, alpha: f32) -> Result<Image> {
    let (_, h, w) = image.dims3()?;
    let (c, _, _) = masks.dims3()?;
    let up = ops::resize_bilinear(masks, h, w)?;
    let hw = h * w;
    let mut out = image.clone();
    for p in 0..hw {
        let best = (0..c)
            .max_by(|&a, &b| up.data()[a * hw + p].total_cmp(&up.data()[b * hw + p]).then(b.cmp(&a)))
            .unwrap_or(0);
        let col = segment_color(best);
        for k in 0..3 {
            let v = &mut out.data_mut()[k * hw + p];
            *v = (1.0 - alpha) * *v + alpha * col[k] as f32;
        }
    }
    Ok(out)
}
