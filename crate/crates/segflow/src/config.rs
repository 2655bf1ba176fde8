//! Run configuration: built-in defaults, a plain-text `key=value` file and
//! command-line overrides, merged in that order of increasing precedence.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use segflow_core::inference::{EvalMode, EvalOptions};
use segflow_core::data::VideoDataset;
use segflow_core::synth::{split_corpus, SpecRanges, SpriteShape, Split};
use segflow_core::training::TrainConfig;

use crate::error::{CliError, Result};
use crate::io;

/// Pairs sampled when picking the object channel after training.
pub const DEFAULT_SELECT_PAIRS: usize = 64;

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub out: PathBuf,
    pub data: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub seed: u64,
    pub deterministic: bool,
    pub videos: usize,
    pub ranges: SpecRanges,
    pub train: TrainConfig,
    /// `None` uses every video for both training and evaluation.
    pub split: Option<Split>,
    pub eval_mode: EvalMode,
    pub adapt_iterations: usize,
    pub adapt_batch_pairs: usize,
    pub channel: Option<usize>,
    pub select_pairs: usize,
    pub video: Option<String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            out: PathBuf::from("run"),
            data: None,
            checkpoint: None,
            seed: 0,
            deterministic: false,
            videos: 200,
            ranges: SpecRanges::default(),
            train: TrainConfig::default(),
            split: Some(Split::Parity),
            eval_mode: EvalMode::PerImage,
            adapt_iterations: 100,
            adapt_batch_pairs: 2,
            channel: None,
            select_pairs: DEFAULT_SELECT_PAIRS,
            video: None,
        }
    }
}

fn num<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| CliError::Usage(format!("{key}: cannot parse {v:?}")))
}

fn pair(key: &str, v: &str) -> Result<(f64, f64)> {
    let (a, b) = v
        .split_once(',')
        .ok_or_else(|| CliError::Usage(format!("{key}: expected min,max, got {v:?}")))?;
    Ok((num(key, a.trim())?, num(key, b.trim())?))
}

fn flag(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(CliError::Usage(format!("{key}: expected true or false, got {v:?}"))),
    }
}

fn opt<T>(v: &str, f: impl FnOnce(&str) -> Result<T>) -> Result<Option<T>> {
    if v.is_empty() {
        Ok(None)
    } else {
        f(v).map(Some)
    }
}

fn split_name(s: Option<Split>) -> String {
    match s {
        None => "all".into(),
        Some(Split::Parity) => "parity".into(),
        Some(Split::HoldOutLast(n)) => format!("last:{n}"),
    }
}

fn parse_split(v: &str) -> Result<Option<Split>> {
    match v {
        "all" => return Ok(None),
        "parity" => return Ok(Some(Split::Parity)),
        _ => {}
    }
    match v.strip_prefix("last:") {
        Some(n) => Ok(Some(Split::HoldOutLast(num("split", n)?))),
        None => Err(CliError::Usage(format!("split: expected all, parity or last:N, got {v:?}"))),
    }
}

fn show<T: ToString>(v: &Option<T>) -> String {
    v.as_ref().map(ToString::to_string).unwrap_or_default()
}

impl RunConfig {
    pub const KEYS: [&'static str; 33] = [
        "out",
        "data",
        "checkpoint",
        "seed",
        "deterministic",
        "videos",
        "frame_size",
        "num_frames",
        "shapes",
        "sprite_scale",
        "object_speed",
        "camera_drift",
        "drift_fraction",
        "learning_rate",
        "weight_decay",
        "batch_pairs",
        "iterations",
        "crop_size",
        "resize_short",
        "hflip_prob",
        "segments",
        "symmetric",
        "allow_few_segments",
        "ssim_window",
        "ssim_c1",
        "ssim_c2",
        "split",
        "mode",
        "adapt_iterations",
        "adapt_batch_pairs",
        "channel",
        "select_pairs",
        "video",
    ];

    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let r = &mut self.ranges;
        let t = &mut self.train;
        match key {
            "out" => self.out = PathBuf::from(v),
            "data" => self.data = opt(v, |s| Ok(PathBuf::from(s)))?,
            "checkpoint" => self.checkpoint = opt(v, |s| Ok(PathBuf::from(s)))?,
            "seed" => self.seed = num(key, v)?,
            "deterministic" => self.deterministic = flag(key, v)?,
            "videos" => self.videos = num(key, v)?,
            "frame_size" => r.frame_size = num(key, v)?,
            "num_frames" => r.num_frames = num(key, v)?,
            "shapes" => {
                r.shapes = v
                    .split(',')
                    .map(|s| SpriteShape::parse(s.trim()))
                    .collect::<segflow_core::Result<_>>()
                    .map_err(|e| CliError::Usage(format!("shapes: {e}")))?
            }
            "sprite_scale" => r.sprite_scale = pair(key, v)?,
            "object_speed" => r.object_speed = pair(key, v)?,
            "camera_drift" => r.camera_drift = pair(key, v)?,
            "drift_fraction" => r.drift_fraction = num(key, v)?,
            "learning_rate" => t.learning_rate = num(key, v)?,
            "weight_decay" => t.weight_decay = num(key, v)?,
            "batch_pairs" => t.batch_pairs = num(key, v)?,
            "iterations" => t.iterations = num(key, v)?,
            "crop_size" => t.crop_size = num(key, v)?,
            "resize_short" => t.resize_short = num(key, v)?,
            "hflip_prob" => t.hflip_prob = num(key, v)?,
            "segments" => t.segments = num(key, v)?,
            "symmetric" => t.symmetric = flag(key, v)?,
            "allow_few_segments" => t.allow_few_segments = flag(key, v)?,
            "ssim_window" => t.ssim_window = num(key, v)?,
            "ssim_c1" => t.ssim_c1 = num(key, v)?,
            "ssim_c2" => t.ssim_c2 = num(key, v)?,
            "split" => self.split = parse_split(v)?,
            "mode" => {
                self.eval_mode = EvalMode::parse(v).map_err(|e| CliError::Usage(format!("mode: {e}")))?
            }
            "adapt_iterations" => self.adapt_iterations = num(key, v)?,
            "adapt_batch_pairs" => self.adapt_batch_pairs = num(key, v)?,
            "channel" => self.channel = opt(v, |s| num(key, s))?,
            "select_pairs" => self.select_pairs = num(key, v)?,
            "video" => self.video = opt(v, |s| Ok(s.to_string()))?,
            _ => return Err(CliError::Usage(format!("unknown config key {key:?}"))),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<String> {
        let r = &self.ranges;
        let t = &self.train;
        let p = |(a, b): (f64, f64)| format!("{a},{b}");
        Some(match key {
            "out" => self.out.display().to_string(),
            "data" => show(&self.data.as_ref().map(|d| d.display())),
            "checkpoint" => show(&self.checkpoint.as_ref().map(|d| d.display())),
            "seed" => self.seed.to_string(),
            "deterministic" => self.deterministic.to_string(),
            "videos" => self.videos.to_string(),
            "frame_size" => r.frame_size.to_string(),
            "num_frames" => r.num_frames.to_string(),
            "shapes" => r.shapes.iter().map(|s| s.name()).collect::<Vec<_>>().join(","),
            "sprite_scale" => p(r.sprite_scale),
            "object_speed" => p(r.object_speed),
            "camera_drift" => p(r.camera_drift),
            "drift_fraction" => r.drift_fraction.to_string(),
            "learning_rate" => t.learning_rate.to_string(),
            "weight_decay" => t.weight_decay.to_string(),
            "batch_pairs" => t.batch_pairs.to_string(),
            "iterations" => t.iterations.to_string(),
            "crop_size" => t.crop_size.to_string(),
            "resize_short" => t.resize_short.to_string(),
            "hflip_prob" => t.hflip_prob.to_string(),
            "segments" => t.segments.to_string(),
            "symmetric" => t.symmetric.to_string(),
            "allow_few_segments" => t.allow_few_segments.to_string(),
            "ssim_window" => t.ssim_window.to_string(),
            "ssim_c1" => t.ssim_c1.to_string(),
            "ssim_c2" => t.ssim_c2.to_string(),
            "split" => split_name(self.split),
            "mode" => self.eval_mode.name().to_string(),
            "adapt_iterations" => self.adapt_iterations.to_string(),
            "adapt_batch_pairs" => self.adapt_batch_pairs.to_string(),
            "channel" => show(&self.channel),
            "select_pairs" => self.select_pairs.to_string(),
            "video" => show(&self.video),
            _ => return None,
        })
    }

    /// Every key with its resolved value, one `key=value` per line.
    pub fn to_kv(&self) -> String {
        Self::KEYS
            .iter()
            .map(|k| format!("{k}={}\n", self.get(k).unwrap_or_default()))
            .collect()
    }

    /// Training recipe with the run seed applied.
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig { seed: self.seed, ..self.train.clone() }
    }

    /// `(training, evaluation)` parts of a dataset under the configured split.
    pub fn split_dataset(&self, dataset: VideoDataset) -> Result<(VideoDataset, VideoDataset)> {
        let (train, held) = match self.split {
            None => (dataset.clone(), dataset),
            Some(s) => split_corpus(dataset, s),
        };
        if train.is_empty() || held.is_empty() {
            return Err(CliError::Usage(format!(
                "split {} leaves an empty training or evaluation set",
                split_name(self.split)
            )));
        }
        Ok((train, held))
    }

    pub fn eval_options(&self) -> EvalOptions {
        EvalOptions {
            mode: self.eval_mode,
            channel: self.channel,
            adapt_iterations: self.adapt_iterations,
            adapt: TrainConfig { batch_pairs: self.adapt_batch_pairs, ..self.train_config() },
        }
    }
}

/// A value given both in the file and on the command line.
#[derive(Clone, Debug, PartialEq)]
pub struct Override {
    pub key: String,
    pub file_value: String,
    pub flag_value: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Resolved {
    pub config: RunConfig,
    pub overrides: Vec<Override>,
}

impl Resolved {
    /// The resolved configuration plus a comment line per override.
    pub fn echo(&self) -> String {
        let mut s: String = self
            .overrides
            .iter()
            .map(|o| format!("# {}: flag value {:?} overrides file value {:?}\n", o.key, o.flag_value, o.file_value))
            .collect();
        s.push_str(&self.config.to_kv());
        s
    }
}

/// Rejects a key given twice with different values in one source.
fn dedup(entries: Vec<(String, String)>, source: &str) -> Result<Vec<(String, String)>> {
    let mut out: Vec<(String, String)> = Vec::new();
    for (k, v) in entries {
        match out.iter().find(|(ok, _)| *ok == k) {
            Some((_, ov)) if *ov != v => {
                return Err(CliError::Usage(format!(
                    "conflicting values for {k} in {source}: {ov:?} and {v:?}"
                )))
            }
            Some(_) => {}
            None => out.push((k, v)),
        }
    }
    Ok(out)
}

/// Merges defaults, an optional config file and flag overrides.
///
/// Keys repeated with different values inside the file or inside the flags
/// are errors. A flag replacing a different file value wins but is reported
/// in [`Resolved::overrides`].
pub fn resolve(file: Option<&Path>, flags: Vec<(String, String)>) -> Result<Resolved> {
    let file_entries = match file {
        Some(path) => dedup(io::parse_kv_lines(path, &io::read_text(path)?)?, &path.display().to_string())?,
        None => Vec::new(),
    };
    let flags = dedup(flags, "command-line flags")?;
    let mut config = RunConfig::default();
    for (k, v) in &file_entries {
        config.set(k, v).map_err(|e| match (e, file) {
            (CliError::Usage(m), Some(p)) => CliError::Usage(format!("{}: {m}", p.display())),
            (e, _) => e,
        })?;
    }
    let mut overrides = Vec::new();
    for (k, v) in &flags {
        if let Some((_, fv)) = file_entries.iter().find(|(fk, _)| fk == k) {
            if fv != v {
                overrides.push(Override { key: k.clone(), file_value: fv.clone(), flag_value: v.clone() });
            }
        }
        config.set(k, v)?;
    }
    Ok(Resolved { config, overrides })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_key_round_trips() {
        let c = RunConfig::default();
        let mut d = RunConfig::default();
        for line in c.to_kv().lines() {
            let (k, v) = line.split_once('=').unwrap();
            d.set(k, v).unwrap();
        }
        assert_eq!(c, d);
    }

    #[test]
    fn keys_are_complete() {
        for k in RunConfig::KEYS {
            assert!(RunConfig::default().get(k).is_some(), "{k}");
        }
    }

    #[test]
    fn flags_conflicting_among_themselves_are_refused() {
        let flags = vec![("seed".into(), "1".into()), ("seed".into(), "2".into())];
        assert!(matches!(resolve(None, flags), Err(CliError::Usage(_))));
    }

    #[test]
    fn split_parses() {
        assert_eq!(parse_split("last:40").unwrap(), Some(Split::HoldOutLast(40)));
        assert_eq!(parse_split("all").unwrap(), None);
        assert!(parse_split("odd").is_err());
    }
}
