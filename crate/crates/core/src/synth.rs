//! Moving-sprite videos with exact ground-truth masks.
//!
//! A textured sprite translates over a textured background that itself
//! drifts (camera motion). The sprite bounces off the frame margins so it
//! is always fully visible. Edges are anti-aliased with a one-pixel ramp of
//! the signed distance; the ground-truth mask is the set of pixels whose
//! coverage is at least one half.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::f64::consts::PI;

#[cfg(not(feature = "std"))]
use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{BinaryMask, Video, VideoDataset};
use crate::error::{invalid, Result};
use crate::tensor::Tensor;

/// Minimum speed of the sprite relative to the background, px/frame.
pub const MIN_RELATIVE_SPEED: f64 = 0.5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum SpriteShape {
    Disk,
    Square,
    Blob,
}

impl SpriteShape {
    pub const ALL: [SpriteShape; 3] = [SpriteShape::Disk, SpriteShape::Square, SpriteShape::Blob];

    pub fn name(self) -> &'static str {
        match self {
            SpriteShape::Disk => "disk",
            SpriteShape::Square => "square",
            SpriteShape::Blob => "blob",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| invalid(format!("unknown sprite shape {s:?}")))
    }
}

/// One fully specified scene.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneSpec {
    pub frame_size: usize,
    pub num_frames: usize,
    pub sprite_shape: SpriteShape,
    /// Sprite diameter as a fraction of the frame side.
    pub sprite_scale: f64,
    pub sprite_texture: u64,
    pub background_texture: u64,
    /// Initial sprite velocity `(dx, dy)` in px/frame; components flip on
    /// bounces.
    pub object_velocity: [f64; 2],
    /// Background translation `(dx, dy)` in px/frame.
    pub camera_drift: [f64; 2],
    /// Drives the start position and blob outline.
    pub seed: u64,
}

impl SceneSpec {
    pub fn radius(&self) -> f64 {
        0.5 * self.sprite_scale * self.frame_size as f64
    }

    pub fn validate(&self) -> Result<()> {
        if self.frame_size < 8 || self.num_frames < 2 {
            return Err(invalid("scene needs frame_size >= 8 and at least 2 frames"));
        }
        if !(self.sprite_scale > 0.0 && self.sprite_scale < 1.0) {
            return Err(invalid(format!("sprite_scale {} outside (0, 1)", self.sprite_scale)));
        }
        if self.object_velocity.iter().chain(&self.camera_drift).any(|v| !v.is_finite()) {
            return Err(invalid("velocities must be finite"));
        }
        let extent = self.extent();
        let free = self.frame_size as f64 - 1.0 - 2.0 * (extent + 1.0);
        if free < 0.0 {
            return Err(invalid(format!(
                "sprite of extent {extent:.1} px does not fit a {} px frame",
                self.frame_size
            )));
        }
        if self.object_velocity.iter().any(|v| v.abs() > free.max(0.0)) {
            return Err(invalid("sprite speed exceeds the room it has to bounce in"));
        }
        if self.is_static() {
            return Ok(());
        }
        // Bounces flip velocity components, so the separation must hold for
        // every sign pattern.
        for sx in [-1.0, 1.0] {
            for sy in [-1.0, 1.0] {
                let dx = sx * self.object_velocity[0] - self.camera_drift[0];
                let dy = sy * self.object_velocity[1] - self.camera_drift[1];
                if dx.hypot(dy) < MIN_RELATIVE_SPEED {
                    return Err(invalid(format!(
                        "object velocity {:?} is within {MIN_RELATIVE_SPEED} px/frame of camera drift {:?}",
                        self.object_velocity, self.camera_drift
                    )));
                }
            }
        }
        Ok(())
    }

    /// No object motion and no camera motion: a still control scene, the
    /// one exception to the relative-motion requirement.
    pub fn is_static(&self) -> bool {
        self.object_velocity == [0.0, 0.0] && self.camera_drift == [0.0, 0.0]
    }

    /// Half-extent of the sprite along either axis.
    fn extent(&self) -> f64 {
        match self.sprite_shape {
            SpriteShape::Blob => self.radius() * (1.0 + BLOB_AMPLITUDE.iter().sum::<f64>()),
            _ => self.radius(),
        }
    }
}

const BLOB_AMPLITUDE: [f64; 2] = [0.18, 0.1];

/// Generator output: frames plus per-frame truth.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledVideo {
    pub frames: Vec<Tensor<f32>>,
    pub gt_masks: Vec<BinaryMask>,
    /// Sprite centre per frame.
    pub object_positions: Vec<[f64; 2]>,
    /// Sprite displacement from frame `t` to `t + 1` (`num_frames - 1`
    /// entries).
    pub object_velocities: Vec<[f64; 2]>,
    pub camera_velocities: Vec<[f64; 2]>,
}

impl LabeledVideo {
    pub fn into_video(self, id: impl Into<String>, spec: &SceneSpec) -> Video {
        let fmt2 = |v: [f64; 2]| format!("{},{}", v[0], v[1]);
        let meta = [
            ("seed", spec.seed.to_string()),
            ("frame_size", spec.frame_size.to_string()),
            ("num_frames", spec.num_frames.to_string()),
            ("sprite_shape", spec.sprite_shape.name().to_string()),
            ("sprite_scale", spec.sprite_scale.to_string()),
            ("sprite_texture", spec.sprite_texture.to_string()),
            ("background_texture", spec.background_texture.to_string()),
            ("object_velocity", fmt2(spec.object_velocity)),
            ("camera_drift", fmt2(spec.camera_drift)),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect();
        Video {
            id: id.into(),
            frames: self.frames,
            gt_masks: Some(self.gt_masks),
            meta,
        }
    }
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn lattice(seed: u64, ix: i64, iy: i64) -> f64 {
    let h = splitmix(seed ^ splitmix(ix as u64 ^ splitmix(iy as u64)));
    (h >> 11) as f64 / (1u64 << 53) as f64
}

/// Smoothly interpolated lattice noise in `[0, 1)` with the given cell size.
fn value_noise(seed: u64, x: f64, y: f64, cell: f64) -> f64 {
    let (u, v) = (x / cell, y / cell);
    let (fx, fy) = (u.floor(), v.floor());
    let (tx, ty) = (u - fx, v - fy);
    let (sx, sy) = (tx * tx * (3.0 - 2.0 * tx), ty * ty * (3.0 - 2.0 * ty));
    let (ix, iy) = (fx as i64, fy as i64);
    let a = lattice(seed, ix, iy);
    let b = lattice(seed, ix + 1, iy);
    let c = lattice(seed, ix, iy + 1);
    let d = lattice(seed, ix + 1, iy + 1);
    let top = a + (b - a) * sx;
    let bottom = c + (d - c) * sx;
    top + (bottom - top) * sy
}

/// Procedural colour texture: a base colour modulated by two octaves of
/// per-channel value noise.
#[derive(Clone, Copy, Debug)]
struct Texture {
    seed: u64,
    base: [f64; 3],
    amplitude: f64,
    cell: f64,
}

impl Texture {
    fn background(id: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(splitmix(id ^ 0xB6));
        let grey = rng.gen_range(0.35..0.65);
        let base = core::array::from_fn(|_| grey + rng.gen_range(-0.08..0.08));
        Self {
            seed: id,
            base,
            amplitude: 0.5,
            cell: rng.gen_range(4.0..8.0),
        }
    }

    fn sprite(id: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(splitmix(id ^ 0x5B));
        let hue: f64 = rng.gen_range(0.0..1.0);
        let base = core::array::from_fn(|k| {
            let phase = 2.0 * PI * (hue + k as f64 / 3.0);
            0.5 + 0.35 * phase.cos()
        });
        Self {
            seed: id,
            base,
            amplitude: 0.45,
            cell: rng.gen_range(3.0..5.0),
        }
    }

    fn sample(&self, channel: usize, x: f64, y: f64) -> f64 {
        let s = self.seed.wrapping_mul(3).wrapping_add(channel as u64);
        let n = 0.65 * value_noise(s, x, y, self.cell) + 0.35 * value_noise(s ^ 0xA5A5, x, y, 0.5 * self.cell);
        (self.base[channel] + self.amplitude * (n - 0.5)).clamp(0.0, 1.0)
    }
}

#[derive(Clone, Copy, Debug)]
struct Outline {
    shape: SpriteShape,
    radius: f64,
    phase: [f64; 2],
}

impl Outline {
    /// Signed distance (negative inside) from offset `(dx, dy)` to the
    /// boundary; approximate for the blob.
    fn signed_distance(&self, dx: f64, dy: f64) -> f64 {
        match self.shape {
            SpriteShape::Disk => dx.hypot(dy) - self.radius,
            SpriteShape::Square => {
                let (qx, qy) = (dx.abs() - self.radius, dy.abs() - self.radius);
                let outside = qx.max(0.0).hypot(qy.max(0.0));
                outside + qx.max(qy).min(0.0)
            }
            SpriteShape::Blob => {
                let theta = dy.atan2(dx);
                let r = self.radius
                    * (1.0
                        + BLOB_AMPLITUDE[0] * (2.0 * theta + self.phase[0]).cos()
                        + BLOB_AMPLITUDE[1] * (3.0 * theta + self.phase[1]).cos());
                dx.hypot(dy) - r
            }
        }
    }
}

/// One-dimensional bounce inside `[lo, hi]`.
fn bounce(p: f64, v: f64, lo: f64, hi: f64) -> (f64, f64) {
    let mut p = p + v;
    let mut v = v;
    if p > hi {
        p = 2.0 * hi - p;
        v = -v;
    } else if p < lo {
        p = 2.0 * lo - p;
        v = -v;
    }
    (p, v)
}

/// Renders a scene. Deterministic in `spec`.
pub fn generate_video(spec: &SceneSpec) -> Result<LabeledVideo> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let size = spec.frame_size;
    let lo = spec.extent() + 1.0;
    let hi = size as f64 - 1.0 - lo;
    let mut pos = [rng.gen_range(lo..=hi), rng.gen_range(lo..=hi)];
    let outline = Outline {
        shape: spec.sprite_shape,
        radius: spec.radius(),
        phase: [rng.gen_range(0.0..2.0 * PI), rng.gen_range(0.0..2.0 * PI)],
    };
    let bg = Texture::background(spec.background_texture);
    let fg = Texture::sprite(spec.sprite_texture);

    let mut vel = spec.object_velocity;
    let n = spec.num_frames;
    let mut out = LabeledVideo {
        frames: Vec::with_capacity(n),
        gt_masks: Vec::with_capacity(n),
        object_positions: Vec::with_capacity(n),
        object_velocities: Vec::with_capacity(n - 1),
        camera_velocities: Vec::with_capacity(n - 1),
    };
    let hw = size * size;
    for t in 0..n {
        let cam = [spec.camera_drift[0] * t as f64, spec.camera_drift[1] * t as f64];
        let mut frame = Vec::with_capacity(3 * hw);
        let mut alpha = Vec::with_capacity(hw);
        for y in 0..size {
            for x in 0..size {
                let (dx, dy) = (x as f64 - pos[0], y as f64 - pos[1]);
                alpha.push((0.5 - outline.signed_distance(dx, dy)).clamp(0.0, 1.0));
            }
        }
        for ch in 0..3 {
            for (i, &a) in alpha.iter().enumerate() {
                let (x, y) = ((i % size) as f64, (i / size) as f64);
                // The background moves by `cam`, so its content at pixel p
                // is the texture at p - cam.
                let b = bg.sample(ch, x - cam[0], y - cam[1]);
                let v = if a > 0.0 {
                    a * fg.sample(ch, x - pos[0], y - pos[1]) + (1.0 - a) * b
                } else {
                    b
                };
                frame.push(v as f32);
            }
        }
        out.frames.push(Tensor::new(&[3, size, size], frame)?);
        out.gt_masks.push(BinaryMask::new(size, size, alpha.iter().map(|&a| a >= 0.5).collect())?);
        out.object_positions.push(pos);
        if t + 1 < n {
            let (px, vx) = bounce(pos[0], vel[0], lo, hi);
            let (py, vy) = bounce(pos[1], vel[1], lo, hi);
            out.object_velocities.push([px - pos[0], py - pos[1]]);
            out.camera_velocities.push(spec.camera_drift);
            pos = [px, py];
            vel = [vx, vy];
        }
    }
    Ok(out)
}

/// Ranges from which [`build_corpus`] draws scenes.
#[derive(Clone, Debug, PartialEq)]
pub struct SpecRanges {
    pub frame_size: usize,
    pub num_frames: usize,
    pub shapes: Vec<SpriteShape>,
    pub sprite_scale: (f64, f64),
    pub object_speed: (f64, f64),
    pub camera_drift: (f64, f64),
    /// Share of videos with a drifting camera.
    pub drift_fraction: f64,
}

impl Default for SpecRanges {
    fn default() -> Self {
        Self {
            frame_size: 64,
            num_frames: 24,
            shapes: SpriteShape::ALL.to_vec(),
            sprite_scale: (0.3, 0.5),
            object_speed: (1.5, 3.0),
            camera_drift: (0.0, 1.0),
            drift_fraction: 0.5,
        }
    }
}

impl SpecRanges {
    pub fn validate(&self) -> Result<()> {
        let ordered = |(a, b): (f64, f64)| a.is_finite() && b.is_finite() && 0.0 <= a && a <= b;
        if self.shapes.is_empty() {
            return Err(invalid("no sprite shapes to draw from"));
        }
        if !ordered(self.sprite_scale) || !ordered(self.object_speed) || !ordered(self.camera_drift) {
            return Err(invalid("ranges must be finite, non-negative and ordered"));
        }
        if !(0.0..=1.0).contains(&self.drift_fraction) {
            return Err(invalid("drift_fraction must lie in [0, 1]"));
        }
        Ok(())
    }

    fn draw(&self, rng: &mut ChaCha8Rng) -> SceneSpec {
        let uniform = |rng: &mut ChaCha8Rng, (a, b): (f64, f64)| if a < b { rng.gen_range(a..b) } else { a };
        let shape = self.shapes[rng.gen_range(0..self.shapes.len())];
        let scale = uniform(rng, self.sprite_scale);
        let speed = uniform(rng, self.object_speed);
        let heading = rng.gen_range(0.0..2.0 * PI);
        let drifting = rng.gen_bool(self.drift_fraction);
        let drift = uniform(rng, self.camera_drift);
        let drift_heading = rng.gen_range(0.0..2.0 * PI);
        let drift = if drifting { drift } else { 0.0 };
        SceneSpec {
            frame_size: self.frame_size,
            num_frames: self.num_frames,
            sprite_shape: shape,
            sprite_scale: scale,
            sprite_texture: rng.gen(),
            background_texture: rng.gen(),
            object_velocity: [speed * heading.cos(), speed * heading.sin()],
            camera_drift: [drift * drift_heading.cos(), drift * drift_heading.sin()],
            seed: rng.gen(),
        }
    }
}

/// Scene of video `index` in the corpus seeded by `seed`. Scenes that
/// violate the scene invariants are redrawn.
pub fn corpus_spec(ranges: &SpecRanges, seed: u64, index: usize) -> Result<SceneSpec> {
    ranges.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(splitmix(seed ^ splitmix(index as u64)));
    let mut last = None;
    for _ in 0..64 {
        let spec = ranges.draw(&mut rng);
        match spec.validate() {
            Ok(()) => return Ok(spec),
            Err(e) => last = Some(e),
        }
    }
    Err(last.unwrap_or_else(|| invalid("could not draw a valid scene")))
}

/// Video id used for corpus entry `index`.
pub fn video_id(index: usize) -> String {
    format!("v{index:05}")
}

/// Generates `n_videos` scenes with ground truth.
pub fn build_corpus(n_videos: usize, ranges: &SpecRanges, seed: u64) -> Result<VideoDataset> {
    if n_videos == 0 {
        return Err(invalid("corpus needs at least one video"));
    }
    let mut videos = Vec::with_capacity(n_videos);
    for i in 0..n_videos {
        let spec = corpus_spec(ranges, seed, i)?;
        videos.push(generate_video(&spec)?.into_video(video_id(i), &spec));
    }
    VideoDataset::new(videos)
}

/// How a corpus is divided into training and held-out videos.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    /// Even indices train, odd indices are held out.
    Parity,
    /// The last `n` videos are held out.
    HoldOutLast(usize),
}

/// Returns `(train, held_out)`.
pub fn split_corpus(dataset: VideoDataset, split: Split) -> (VideoDataset, VideoDataset) {
    let n = dataset.len();
    match split {
        Split::Parity => dataset.split_by(|i| i % 2 == 1),
        Split::HoldOutLast(k) => dataset.split_by(move |i| i + k.min(n) >= n),
    }
}
