//! Subcommands. Each resolves its configuration, writes it to the output
//! directory and only then touches anything else.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use segflow_core::inference;
use segflow_core::pathways::{self, ModelState};
use segflow_core::synth;
use segflow_core::training::{TrainObserver, Trainer, PairSource};
use segflow_core::Error as CoreError;

use crate::config::{self, Resolved, RunConfig};
use crate::error::{CliError, Result};
use crate::io;

pub const CONFIG_ECHO: &str = "config.txt";
pub const LOSS_LOG: &str = "loss.csv";
pub const FINAL_CHECKPOINT: &str = "model.ckpt";

#[derive(Parser, Debug)]
#[command(name = "segflow", version, about = "Segment-flow object segmentation from unlabeled video")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// Plain-text key=value configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Run directory; every artifact goes here.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Single-threaded numerics (bitwise reproducible runs).
    #[arg(long)]
    pub deterministic: bool,
    /// Any configuration key, e.g. `--set hflip_prob=0`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic moving-sprite corpus.
    Gen {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        videos: Option<usize>,
        #[arg(long)]
        frame_size: Option<usize>,
        #[arg(long)]
        num_frames: Option<usize>,
    },
    /// Train from scratch on a dataset directory.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        iters: Option<usize>,
        /// Number of segments.
        #[arg(long = "c")]
        segments: Option<usize>,
        /// Permit fewer than four segments.
        #[arg(long)]
        allow_few_segments: bool,
        #[arg(long)]
        batch: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        wd: Option<f64>,
        /// all, parity or last:N.
        #[arg(long)]
        split: Option<String>,
    },
    /// Adapt a checkpoint to one video.
    Adapt {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
        /// Video id inside the dataset.
        #[arg(long)]
        video: Option<String>,
        #[arg(long)]
        iters: Option<usize>,
    },
    /// Write a saliency PNG per input image.
    Infer {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        channel: Option<usize>,
        #[arg(required = true)]
        images: Vec<PathBuf>,
    },
    /// Score a checkpoint against ground-truth masks.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
        /// per-image or per-video.
        #[arg(long)]
        mode: Option<String>,
        #[arg(long)]
        channel: Option<usize>,
        #[arg(long)]
        adapt_iters: Option<usize>,
        #[arg(long)]
        split: Option<String>,
    },
    /// Segment overlay and flow wheel for a frame pair.
    Viz {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        first: PathBuf,
        second: PathBuf,
    },
}

fn push<T: ToString>(flags: &mut Vec<(String, String)>, key: &str, v: &Option<T>) {
    if let Some(v) = v {
        flags.push((key.to_string(), v.to_string()));
    }
}

fn push_path(flags: &mut Vec<(String, String)>, key: &str, v: &Option<PathBuf>) {
    push(flags, key, &v.as_ref().map(|p| p.display().to_string()));
}

impl Common {
    fn flags(&self) -> Result<Vec<(String, String)>> {
        let mut f = Vec::new();
        for s in &self.set {
            let (k, v) = s
                .split_once('=')
                .ok_or_else(|| CliError::Usage(format!("--set expects KEY=VALUE, got {s:?}")))?;
            f.push((k.trim().to_string(), v.trim().to_string()));
        }
        push_path(&mut f, "out", &self.out);
        push(&mut f, "seed", &self.seed);
        if self.deterministic {
            f.push(("deterministic".into(), "true".into()));
        }
        Ok(f)
    }
}

impl Command {
    fn common(&self) -> &Common {
        match self {
            Command::Gen { common, .. }
            | Command::Train { common, .. }
            | Command::Adapt { common, .. }
            | Command::Infer { common, .. }
            | Command::Eval { common, .. }
            | Command::Viz { common, .. } => common,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Command::Gen { .. } => "gen",
            Command::Train { .. } => "train",
            Command::Adapt { .. } => "adapt",
            Command::Infer { .. } => "infer",
            Command::Eval { .. } => "eval",
            Command::Viz { .. } => "viz",
        }
    }

    /// Command-line values as configuration keys.
    pub fn flags(&self) -> Result<Vec<(String, String)>> {
        let mut f = self.common().flags()?;
        match self {
            Command::Gen { videos, frame_size, num_frames, .. } => {
                push(&mut f, "videos", videos);
                push(&mut f, "frame_size", frame_size);
                push(&mut f, "num_frames", num_frames);
            }
            Command::Train { data, iters, segments, allow_few_segments, batch, lr, wd, split, .. } => {
                push_path(&mut f, "data", data);
                push(&mut f, "iterations", iters);
                push(&mut f, "segments", segments);
                if *allow_few_segments {
                    f.push(("allow_few_segments".into(), "true".into()));
                }
                push(&mut f, "batch_pairs", batch);
                push(&mut f, "learning_rate", lr);
                push(&mut f, "weight_decay", wd);
                push(&mut f, "split", split);
            }
            Command::Adapt { checkpoint, data, video, iters, .. } => {
                push_path(&mut f, "checkpoint", checkpoint);
                push_path(&mut f, "data", data);
                push(&mut f, "video", video);
                push(&mut f, "adapt_iterations", iters);
            }
            Command::Infer { checkpoint, channel, .. } => {
                push_path(&mut f, "checkpoint", checkpoint);
                push(&mut f, "channel", channel);
            }
            Command::Eval { checkpoint, data, mode, channel, adapt_iters, split, .. } => {
                push_path(&mut f, "checkpoint", checkpoint);
                push_path(&mut f, "data", data);
                push(&mut f, "mode", mode);
                push(&mut f, "channel", channel);
                push(&mut f, "adapt_iterations", adapt_iters);
                push(&mut f, "split", split);
            }
            Command::Viz { checkpoint, .. } => push_path(&mut f, "checkpoint", checkpoint),
        }
        Ok(f)
    }
}

/// Core validation failures are usage errors at this layer.
fn usage(e: CoreError) -> CliError {
    CliError::Usage(e.to_string())
}

/// Creates the run directory and writes the resolved configuration.
fn echo(resolved: &Resolved) -> Result<()> {
    for o in &resolved.overrides {
        eprintln!("note: {}: flag value {:?} overrides config file value {:?}", o.key, o.flag_value, o.file_value);
    }
    io::create_dir(&resolved.config.out)?;
    io::write_text(&resolved.config.out.join(CONFIG_ECHO), &resolved.echo())
}

fn require<'a>(v: &'a Option<PathBuf>, key: &str) -> Result<&'a Path> {
    v.as_deref().ok_or_else(|| CliError::Usage(format!("missing --{key}")))
}

fn load_checkpoint(cfg: &RunConfig) -> Result<ModelState<f32>> {
    let path = require(&cfg.checkpoint, "checkpoint")?;
    if !path.is_file() {
        return Err(CliError::Usage(format!("checkpoint {} does not exist", path.display())));
    }
    io::read_checkpoint(path, None)
}

fn load_data(cfg: &RunConfig) -> Result<segflow_core::data::VideoDataset> {
    let path = require(&cfg.data, "data")?;
    if !path.is_dir() {
        return Err(CliError::Usage(format!("dataset {} does not exist", path.display())));
    }
    io::read_dataset(path)
}

/// Parses, resolves and runs one invocation, returning the exit code.
pub fn run(cli: Cli) -> u8 {
    let name = cli.command.name();
    match execute(&cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("segflow {name}: error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                eprintln!("  caused by: {s}");
                source = s.source();
            }
            e.exit_code()
        }
    }
}

pub fn execute(command: &Command) -> Result<()> {
    let resolved = config::resolve(command.common().config.as_deref(), command.flags()?)?;
    match command {
        Command::Gen { .. } => cmd_gen(&resolved),
        Command::Train { .. } => cmd_train(&resolved),
        Command::Adapt { .. } => cmd_adapt(&resolved),
        Command::Infer { images, .. } => cmd_infer(&resolved, images),
        Command::Eval { .. } => cmd_eval(&resolved),
        Command::Viz { first, second, .. } => cmd_viz(&resolved, first, second),
    }
}

pub fn cmd_gen(resolved: &Resolved) -> Result<()> {
    let cfg = &resolved.config;
    if cfg.videos == 0 {
        return Err(CliError::Usage("--videos must be at least 1".into()));
    }
    cfg.ranges.validate().map_err(usage)?;
    echo(resolved)?;
    let ds = synth::build_corpus(cfg.videos, &cfg.ranges, cfg.seed)?;
    io::write_dataset(&cfg.out, &ds)?;
    let drifting = ds
        .videos
        .iter()
        .filter(|v| v.meta_value("camera_drift").is_some_and(|d| d != "0,0"))
        .count();
    println!(
        "wrote {} videos ({}x{}, {} frames, {} with camera drift) to {}",
        ds.len(),
        cfg.ranges.frame_size,
        cfg.ranges.frame_size,
        cfg.ranges.num_frames,
        drifting,
        cfg.out.join("videos").display()
    );
    Ok(())
}

/// Streams the loss log and checkpoints of a training run.
struct RunLog {
    dir: PathBuf,
    losses: BufWriter<File>,
    path: PathBuf,
}

impl RunLog {
    fn create(dir: &Path) -> Result<Self> {
        let path = dir.join(LOSS_LOG);
        let file = File::create(&path).map_err(CliError::io(&path))?;
        let mut losses = BufWriter::new(file);
        writeln!(losses, "step,loss").map_err(CliError::io(&path))?;
        io::create_dir(&dir.join("checkpoints"))?;
        Ok(Self { dir: dir.to_path_buf(), losses, path })
    }

    fn io_error(&self, e: std::io::Error) -> CoreError {
        CoreError::InvalidInput(format!("{}: {e}", self.path.display()))
    }

    fn finish(mut self) -> Result<()> {
        self.losses.flush().map_err(CliError::io(&self.path))
    }
}

pub fn checkpoint_name(step: usize) -> String {
    format!("step_{step:06}.ckpt")
}

impl TrainObserver for RunLog {
    fn on_step(&mut self, step: usize, loss: f64) -> segflow_core::Result<()> {
        writeln!(self.losses, "{step},{loss}").map_err(|e| self.io_error(e))
    }

    fn on_checkpoint(&mut self, step: usize, state: &ModelState<f32>) -> segflow_core::Result<()> {
        let path = self.dir.join("checkpoints").join(checkpoint_name(step));
        io::write_checkpoint(&path, state).map_err(|e| CoreError::Checkpoint(e.to_string()))
    }

    fn on_abort(&mut self, step: usize, error: &CoreError) {
        // A comment keeps the log parseable while recording the abort.
        let _ = writeln!(self.losses, "# step {step} aborted: {error}");
        let _ = self.losses.flush();
    }
}

pub fn cmd_train(resolved: &Resolved) -> Result<()> {
    let cfg = &resolved.config;
    let train_cfg = cfg.train_config();
    train_cfg.validate().map_err(usage)?;
    let data = load_data(cfg)?;
    let (train_set, _) = cfg.split_dataset(data)?;
    echo(resolved)?;
    let mut log = RunLog::create(&cfg.out)?;
    let mut trainer = Trainer::new(train_cfg)?;
    let result = trainer.run(&train_set, PairSource::AnyVideo, &mut log);
    log.finish()?;
    result?;
    let mut state = trainer.state;
    let channel = inference::select_object_channel(&state, &train_set, cfg.select_pairs, cfg.seed)?;
    state.object_channel = Some(channel);
    io::write_checkpoint(&cfg.out.join(FINAL_CHECKPOINT), &state)?;
    println!(
        "trained {} iterations on {} videos; object channel {channel}; checkpoint {}",
        cfg.train.iterations,
        train_set.len(),
        cfg.out.join(FINAL_CHECKPOINT).display()
    );
    Ok(())
}

pub fn cmd_adapt(resolved: &Resolved) -> Result<()> {
    let cfg = &resolved.config;
    let id = cfg.video.as_deref().ok_or_else(|| CliError::Usage("missing --video".into()))?;
    let adapt = cfg.eval_options().adapt;
    adapt.validate().map_err(usage)?;
    let state = load_checkpoint(cfg)?;
    let data = load_data(cfg)?;
    let video = data
        .videos
        .iter()
        .find(|v| v.id == id)
        .ok_or_else(|| CliError::Usage(format!("no video {id:?} in the dataset")))?;
    echo(resolved)?;
    let adapted = inference::test_time_adapt(&state, video, cfg.adapt_iterations, &adapt)?;
    let path = cfg.out.join(format!("adapted_{id}.ckpt"));
    io::write_checkpoint(&path, &adapted)?;
    println!("adapted to {id} for {} iterations: {}", cfg.adapt_iterations, path.display());
    Ok(())
}

fn channel_of(cfg: &RunConfig, state: &ModelState<f32>) -> Result<usize> {
    cfg.channel
        .or(state.object_channel)
        .ok_or_else(|| CliError::Usage("checkpoint has no object channel; pass --channel".into()))
}

pub fn cmd_infer(resolved: &Resolved, images: &[PathBuf]) -> Result<()> {
    let cfg = &resolved.config;
    let state = load_checkpoint(cfg)?;
    let channel = channel_of(cfg, &state)?;
    if channel >= state.config.segments {
        return Err(CliError::Usage(format!("channel {channel} out of range for {} segments", state.config.segments)));
    }
    echo(resolved)?;
    for path in images {
        let image = io::read_image(path)?;
        let map = inference::infer_saliency(&state, &image, channel)?;
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("image");
        let out = cfg.out.join(format!("{stem}_saliency.png"));
        io::write_saliency(&out, &map)?;
        println!("{}", out.display());
    }
    Ok(())
}

pub fn report_paths(out: &Path, mode: inference::EvalMode) -> (PathBuf, PathBuf) {
    (out.join(format!("report_{}.csv", mode.name())), out.join(format!("report_{}.txt", mode.name())))
}

pub fn cmd_eval(resolved: &Resolved) -> Result<()> {
    let cfg = &resolved.config;
    let options = cfg.eval_options();
    options.adapt.validate().map_err(usage)?;
    let state = load_checkpoint(cfg)?;
    channel_of(cfg, &state)?;
    let data = load_data(cfg)?;
    let (_, eval_set) = cfg.split_dataset(data)?;
    echo(resolved)?;
    let report = inference::evaluate(&state, &eval_set, &options)?;
    let (csv, txt) = report_paths(&cfg.out, cfg.eval_mode);
    io::write_text(&csv, &report.to_csv())?;
    io::write_text(&txt, &report.to_text())?;
    print!("{}", report.to_text());
    Ok(())
}

pub fn cmd_viz(resolved: &Resolved, first: &Path, second: &Path) -> Result<()> {
    let cfg = &resolved.config;
    let state = load_checkpoint(cfg)?;
    echo(resolved)?;
    let a = io::read_image(first)?;
    let b = io::read_image(second)?;
    let out = pathways::model_forward(&state, &a, &b)?;
    let (_, h, w) = a.dims3()?;
    let overlay = inference::overlay_segments(&a, &out.masks, 0.5)?;
    let flow = segflow_core::ops::upsample_flow(&out.flow, h, w)?;
    let wheel = inference::visualize_flow(&flow)?;
    io::write_image(&cfg.out.join("overlay.png"), &overlay)?;
    io::write_image(&cfg.out.join("flow.png"), &wheel)?;
    println!("{}\n{}", cfg.out.join("overlay.png").display(), cfg.out.join("flow.png").display());
    Ok(())
}
