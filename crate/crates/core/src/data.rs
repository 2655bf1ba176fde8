//! Videos, frame pairs, pair sampling and geometric augmentation.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng;

use crate::error::{invalid, Error, Result};
use crate::ops;
use crate::tensor::Tensor;

/// RGB frame `[3, h, w]` with values in `[0, 1]`.
pub type Image = Tensor<f32>;

/// Checks the frame layout and value range.
pub fn validate_image(image: &Image) -> Result<(usize, usize)> {
    let (c, h, w) = image.dims3()?;
    if c != 3 {
        return Err(invalid(format!("expected 3 channels, got {c}")));
    }
    if let Some(v) = image.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(invalid(format!("pixel value {v} outside [0, 1]")));
    }
    Ok((h, w))
}

/// Binary segmentation mask.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct BinaryMask {
    height: usize,
    width: usize,
    data: Vec<bool>,
}

impl BinaryMask {
    pub fn new(height: usize, width: usize, data: Vec<bool>) -> Result<Self> {
        if data.len() != height * width {
            return Err(invalid(format!(
                "mask {height}x{width} needs {} entries, got {}",
                height * width,
                data.len()
            )));
        }
        Ok(Self { height, width, data })
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let data = (0..height * width).map(|i| f(i / width, i % width)).collect();
        Self { height, width, data }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    pub fn get(&self, y: usize, x: usize) -> bool {
        self.data[y * self.width + x]
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    /// Mean `(x, y)` of set pixels, `None` when empty.
    pub fn centroid(&self) -> Option<(f64, f64)> {
        let n = self.count();
        if n == 0 {
            return None;
        }
        let (mut sx, mut sy) = (0.0, 0.0);
        for (i, _) in self.data.iter().enumerate().filter(|(_, &b)| b) {
            sx += (i % self.width) as f64;
            sy += (i / self.width) as f64;
        }
        Some((sx / n as f64, sy / n as f64))
    }
}

/// One video: ordered frames and optional per-frame ground truth.
#[derive(Clone, Debug, PartialEq)]
pub struct Video {
    pub id: String,
    pub frames: Vec<Image>,
    pub gt_masks: Option<Vec<BinaryMask>>,
    /// Free-form `key=value` metadata (seeds, velocities, ...).
    pub meta: Vec<(String, String)>,
}

impl Video {
    pub fn validate(&self) -> Result<()> {
        if self.frames.len() < 2 {
            return Err(invalid(format!("video {} has fewer than 2 frames", self.id)));
        }
        let dims = validate_image(&self.frames[0])?;
        for (t, f) in self.frames.iter().enumerate() {
            if validate_image(f)? != dims {
                return Err(invalid(format!("video {} frame {t} changes size", self.id)));
            }
        }
        if let Some(masks) = &self.gt_masks {
            if masks.len() != self.frames.len() {
                return Err(invalid(format!("video {} has {} masks for {} frames", self.id, masks.len(), self.frames.len())));
            }
            if masks.iter().any(|m| (m.height, m.width) != dims) {
                return Err(invalid(format!("video {} mask size differs from frames", self.id)));
            }
        }
        Ok(())
    }

    pub fn size(&self) -> (usize, usize) {
        let s = self.frames[0].shape();
        (s[1], s[2])
    }

    pub fn meta_value(&self, key: &str) -> Option<&str> {
        self.meta.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn ground_truth(&self) -> Result<&[BinaryMask]> {
        self.gt_masks
            .as_deref()
            .ok_or_else(|| Error::MissingGroundTruth(format!("video {} has no masks", self.id)))
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct VideoDataset {
    pub videos: Vec<Video>,
}

impl VideoDataset {
    pub fn new(videos: Vec<Video>) -> Result<Self> {
        for v in &videos {
            v.validate()?;
        }
        Ok(Self { videos })
    }

    pub fn len(&self) -> usize {
        self.videos.len()
    }

    pub fn is_empty(&self) -> bool {
        self.videos.is_empty()
    }

    pub fn has_ground_truth(&self) -> bool {
        !self.videos.is_empty() && self.videos.iter().all(|v| v.gt_masks.is_some())
    }

    /// Splits off videos whose index satisfies `held_out`.
    pub fn split_by(self, held_out: impl Fn(usize) -> bool) -> (VideoDataset, VideoDataset) {
        let (mut train, mut eval) = (Vec::new(), Vec::new());
        for (i, v) in self.videos.into_iter().enumerate() {
            if held_out(i) {
                eval.push(v)
            } else {
                train.push(v)
            }
        }
        (VideoDataset { videos: train }, VideoDataset { videos: eval })
    }
}

/// Two frames of one video, `first` at time `t` and `second` at `t + 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct FramePair {
    pub video: usize,
    pub t: usize,
    pub first: Image,
    pub second: Image,
}

/// Picks a video uniformly, then an adjacent pair `(t, t + 1)` uniformly.
pub fn sample_pair<R: Rng + ?Sized>(dataset: &VideoDataset, rng: &mut R) -> Result<FramePair> {
    if dataset.is_empty() {
        return Err(invalid("cannot sample from an empty dataset"));
    }
    let video = rng.gen_range(0..dataset.len());
    sample_pair_in(dataset, video, rng)
}

/// Adjacent pair drawn uniformly from one video.
pub fn sample_pair_in<R: Rng + ?Sized>(dataset: &VideoDataset, video: usize, rng: &mut R) -> Result<FramePair> {
    let v = dataset
        .videos
        .get(video)
        .ok_or_else(|| invalid(format!("video index {video} out of range")))?;
    if v.frames.len() < 2 {
        return Err(invalid(format!("video {} has fewer than 2 frames", v.id)));
    }
    let t = rng.gen_range(0..v.frames.len() - 1);
    Ok(FramePair {
        video,
        t,
        first: v.frames[t].clone(),
        second: v.frames[t + 1].clone(),
    })
}

/// Geometric augmentation settings.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AugmentConfig {
    /// Short edge after resizing; equal to the source short edge means no
    /// resampling.
    pub resize_short: usize,
    pub crop_size: usize,
    pub hflip_prob: f64,
}

fn hflip(image: &Image) -> Image {
    let (c, h, w) = image.dims3().expect("image");
    Tensor::from_fn(&[c, h, w], |i| {
        let x = i % w;
        image.data()[i - x + (w - 1 - x)]
    })
}

fn crop(image: &Image, top: usize, left: usize, size: usize) -> Image {
    let (c, h, w) = image.dims3().expect("image");
    debug_assert!(top + size <= h && left + size <= w);
    Tensor::from_fn(&[c, size, size], |i| {
        let ch = i / (size * size);
        let y = (i / size) % size;
        let x = i % size;
        image.data()[(ch * h + top + y) * w + left + x]
    })
}

/// Horizontal mirror of both frames.
pub fn flip_pair(pair: &FramePair) -> FramePair {
    FramePair {
        first: hflip(&pair.first),
        second: hflip(&pair.second),
        ..pair.clone()
    }
}

/// Resize (short edge), random square crop and random horizontal flip, with
/// the same transform applied to both frames.
pub fn augment<R: Rng + ?Sized>(pair: &FramePair, cfg: &AugmentConfig, rng: &mut R) -> Result<FramePair> {
    let (h, w) = validate_image(&pair.first)?;
    if validate_image(&pair.second)? != (h, w) {
        return Err(invalid("frames of a pair differ in size"));
    }
    if cfg.resize_short < cfg.crop_size {
        return Err(invalid(format!(
            "resize target {} smaller than crop {}",
            cfg.resize_short, cfg.crop_size
        )));
    }
    if !(0.0..=1.0).contains(&cfg.hflip_prob) {
        return Err(invalid("flip probability must lie in [0, 1]"));
    }
    let short = h.min(w);
    let (first, second) = if short == cfg.resize_short {
        (pair.first.clone(), pair.second.clone())
    } else {
        let (oh, ow) = if h <= w {
            (cfg.resize_short, (w * cfg.resize_short + h / 2) / h)
        } else {
            ((h * cfg.resize_short + w / 2) / w, cfg.resize_short)
        };
        let clamp01 = |t: Image| t.map(|v| v.clamp(0.0, 1.0));
        (
            clamp01(ops::resize_bilinear(&pair.first, oh, ow)?),
            clamp01(ops::resize_bilinear(&pair.second, oh, ow)?),
        )
    };
    let (_, rh, rw) = first.dims3()?;
    if rh < cfg.crop_size || rw < cfg.crop_size {
        return Err(invalid(format!(
            "frame {rh}x{rw} smaller than crop {}",
            cfg.crop_size
        )));
    }
    let top = rng.gen_range(0..=rh - cfg.crop_size);
    let left = rng.gen_range(0..=rw - cfg.crop_size);
    let flip = rng.gen_bool(cfg.hflip_prob);
    let mut out = FramePair {
        first: crop(&first, top, left, cfg.crop_size),
        second: crop(&second, top, left, cfg.crop_size),
        ..pair.clone()
    };
    if flip {
        out = flip_pair(&out);
    }
    Ok(out)
}
