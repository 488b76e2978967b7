//! The `audible` command line: synthetic data, training, evaluation,
//! prediction and plotting.

use std::path::{Path, PathBuf};

use audible_core::synth::{export_dataset, random_scene, Preset as ScenePreset, SceneShape};
use audible_core::video::read_frame_dir;
use audible_nn::checkpoint::Checkpoint;
use audible_nn::data::{load_dataset, load_flows, PreparedVideo};
use audible_nn::infer::{evaluate, predict, PredictionReport};
use audible_nn::{FlowSource, NnError, Preset, TrainConfig, Trainer};
use clap::{Args, Parser, Subcommand, ValueEnum};
use image::GrayImage;

pub mod output;
pub mod plot;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    /// 2 usage, 3 data, 4 runtime.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Data(_) => 3,
            CliError::Runtime(_) => 4,
        }
    }

    pub fn io(path: &Path, e: std::io::Error) -> Self {
        CliError::Data(format!("{}: {e}", path.display()))
    }
}

impl From<audible_core::Error> for CliError {
    fn from(e: audible_core::Error) -> Self {
        match e {
            audible_core::Error::Contract(_) => CliError::Runtime(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<NnError> for CliError {
    fn from(e: NnError) -> Self {
        match e {
            NnError::Config(_) => CliError::Usage(e.to_string()),
            NnError::NonFinite { .. } => CliError::Runtime(e.to_string()),
            NnError::Core(c) => c.into(),
            NnError::Checkpoint { .. } | NnError::Io { .. } | NnError::Data(_) => CliError::Data(e.to_string()),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "audible", version, about = "Frame-level detection of audible actions in video")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic bouncing-ball dataset.
    SynthGen(SynthGenArgs),
    /// Train a model on a dataset directory.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a labeled dataset.
    Eval(EvalArgs),
    /// Predict per-frame probabilities for one frame directory.
    Predict(PredictArgs),
    /// Render a prediction report as probability strips.
    Plot(PlotArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SceneKind {
    Bounce,
    Multi,
    Gravity,
}

impl From<SceneKind> for ScenePreset {
    fn from(k: SceneKind) -> Self {
        match k {
            SceneKind::Bounce => ScenePreset::Bounce,
            SceneKind::Multi => ScenePreset::Multi,
            SceneKind::Gravity => ScenePreset::Gravity,
        }
    }
}

#[derive(Debug, Args)]
pub struct SynthGenArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 100)]
    pub num_videos: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = SceneKind::Bounce)]
    pub preset: SceneKind,
    #[arg(long, default_value_t = 64)]
    pub frames: usize,
    /// Frame height and width in pixels.
    #[arg(long, default_value_t = 64)]
    pub size: usize,
    /// Skip writing the analytic flow files.
    #[arg(long)]
    pub no_flows: bool,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ConfigPreset {
    Full,
    Toy,
}

/// Configuration sources, applied in order: preset, file, flags, `--set`.
#[derive(Debug, Args)]
pub struct ConfigArgs {
    #[arg(long, value_enum, default_value_t = ConfigPreset::Full)]
    pub preset: ConfigPreset,
    /// TOML file whose keys override the preset.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_enum)]
    pub flow_backend: Option<FlowArg>,
    /// Any configuration key, as `key=value`; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum FlowArg {
    Analytic,
    File,
    Classical,
}

impl From<FlowArg> for FlowSource {
    fn from(f: FlowArg) -> Self {
        match f {
            FlowArg::Analytic => FlowSource::Analytic,
            FlowArg::File => FlowSource::File,
            FlowArg::Classical => FlowSource::Classical,
        }
    }
}

impl ConfigArgs {
    pub fn resolve(&self) -> Result<TrainConfig, CliError> {
        let base = TrainConfig::preset(match self.preset {
            ConfigPreset::Full => Preset::Full,
            ConfigPreset::Toy => Preset::Toy,
        });
        let mut c = match &self.config {
            Some(p) => TrainConfig::load_over(&base, p)?,
            None => base,
        };
        if let Some(v) = self.iterations {
            c.iterations = v;
        }
        if self.epochs.is_some() {
            c.epochs = self.epochs;
        }
        if let Some(v) = self.learning_rate {
            c.learning_rate = v;
        }
        if let Some(v) = self.batch_size {
            c.batch_size = v;
        }
        if let Some(v) = self.seed {
            c.rng_seed = v;
        }
        if let Some(v) = self.flow_backend {
            c.flow_backend = v.into();
        }
        Ok(c.with_assignments(&self.set)?)
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Labeled videos for choosing the best checkpoint.
    #[arg(long)]
    pub val: Option<PathBuf>,
    /// Directory for checkpoints, the resolved config and the loss log.
    #[arg(long)]
    pub out: PathBuf,
    /// Continue from a checkpoint with a compatible architecture.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Metrics report path; printed to stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also write per-frame predictions for every video.
    #[arg(long)]
    pub predictions: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub flow_backend: Option<FlowArg>,
    /// Frames of tolerance when matching predicted to ground-truth events.
    /// Defaults to the checkpoint's setting (2 unless changed).
    #[arg(long)]
    pub match_window: Option<usize>,
    /// Override non-architecture settings such as `decode_threshold=0.4`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Directory of `frame_%06d.png` files.
    #[arg(long)]
    pub video: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Write one grayscale discriminative map per frame here.
    #[arg(long)]
    pub emit_maps: Option<PathBuf>,
    /// Precomputed flow files for the video; estimated from the frames otherwise.
    #[arg(long)]
    pub flow_dir: Option<PathBuf>,
    #[arg(long, default_value_t = 30.0)]
    pub fps: f64,
}

#[derive(Debug, Args)]
pub struct PlotArgs {
    #[arg(long)]
    pub report: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0.5)]
    pub threshold: f64,
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::SynthGen(a) => synth_gen(&a),
        Command::Train(a) => train(&a),
        Command::Eval(a) => eval(&a),
        Command::Predict(a) => predict_cmd(&a),
        Command::Plot(a) => plot_cmd(&a),
    }
}

/// Seed of video `i` in a dataset generated with `seed`.
pub fn scene_seed(seed: u64, i: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(i as u64)
}

pub fn synth_gen(a: &SynthGenArgs) -> Result<(), CliError> {
    if a.num_videos == 0 {
        return Err(CliError::Usage("--num-videos must be positive".into()));
    }
    let shape = SceneShape {
        num_frames: a.frames,
        height: a.size,
        width: a.size,
    };
    let specs: Vec<_> = (0..a.num_videos)
        .map(|i| random_scene(a.preset.into(), shape, scene_seed(a.seed, i)))
        .collect();
    let mut keyframes = 0;
    output::write_dir(&a.out, |dir| {
        let summary = export_dataset(&specs, dir, !a.no_flows)?;
        keyframes = summary.tracks.iter().map(|t| t.keyframes().len()).sum::<usize>();
        Ok(())
    })?;
    println!("wrote {} videos with {keyframes} keyframes to {}", a.num_videos, a.out.display());
    Ok(())
}

fn load_videos(root: &Path, config: &TrainConfig) -> Result<Vec<PreparedVideo>, CliError> {
    let videos = load_dataset(root, config)?;
    if videos.is_empty() {
        return Err(CliError::Data(format!("{}: dataset has no videos", root.display())));
    }
    Ok(videos)
}

pub fn train(a: &TrainArgs) -> Result<(), CliError> {
    let config = a.config.resolve()?;
    let videos = load_videos(&a.data, &config)?;
    let val = a.val.as_deref().map(|p| load_videos(p, &config)).transpose()?;
    let mut trainer = match &a.resume {
        Some(path) => {
            let ckpt = Checkpoint::load(path)?;
            ckpt.check_compatible(&config, path)?;
            let mut t = Trainer::from_checkpoint(ckpt);
            t.opt.lr = config.learning_rate;
            t.config = config.clone();
            t
        }
        None => Trainer::new(config.clone())?,
    };
    std::fs::create_dir_all(&a.out).map_err(|e| CliError::io(&a.out, e))?;
    output::write_file(&a.out.join("config.toml"), config.to_toml().as_bytes())?;
    log::info!(
        "training on {} videos for {} steps",
        videos.len(),
        trainer.total_steps(videos.len())
    );
    let summary = trainer.fit(&videos, val.as_deref(), Some(&a.out), |_| {})?;
    let mut log_text = String::new();
    for l in &summary.history {
        log_text.push_str(&serde_json::to_string(l).expect("log serializes"));
        log_text.push('\n');
    }
    output::write_file(&a.out.join("train_log.jsonl"), log_text.as_bytes())?;
    if let Some(f1) = summary.best_f1 {
        println!("best validation F1 {f1:.4}; checkpoints in {}", a.out.display());
    } else {
        println!("trained {} steps; checkpoints in {}", trainer.step, a.out.display());
    }
    Ok(())
}

fn checkpoint_config(path: &Path, flow: Option<FlowArg>, set: &[String]) -> Result<(Checkpoint, TrainConfig), CliError> {
    let ckpt = Checkpoint::load(path)?;
    let mut config = ckpt.config.with_assignments(set)?;
    if let Some(f) = flow {
        config.flow_backend = f.into();
    }
    ckpt.check_compatible(&config, path)?;
    Ok((ckpt, config))
}

pub fn eval(a: &EvalArgs) -> Result<(), CliError> {
    let (ckpt, mut config) = checkpoint_config(&a.checkpoint, a.flow_backend, &a.set)?;
    if let Some(w) = a.match_window {
        config.match_window = w;
    }
    let videos = load_videos(&a.data, &config)?;
    let (report, preds) = evaluate(&ckpt.network(), &ckpt.store, &config, &videos)?;
    if let Some(p) = &a.predictions {
        output::write_json(p, &PredictionReport { videos: preds })?;
    }
    match &a.out {
        Some(p) => {
            output::write_json(p, &report)?;
            let pme = report.pme.map_or("null".to_string(), |v| format!("{v:.3}"));
            println!(
                "F1 {:.4} precision {:.4} recall {:.4} NME {:.3} PME {pme}",
                report.f1, report.precision, report.recall, report.nme
            );
        }
        None => println!("{}", serde_json::to_string_pretty(&report).expect("report serializes")),
    }
    Ok(())
}

/// Per-frame map scaled so its minimum is 0 and its maximum 255 (a constant
/// map is all 0), upsampled by pixel repetition to `size`.
pub fn map_image(map: &[f32], side: usize, size: usize) -> GrayImage {
    let lo = map.iter().copied().fold(f32::INFINITY, f32::min);
    let hi = map.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let range = hi - lo;
    GrayImage::from_fn(size as u32, size as u32, |x, y| {
        let (sx, sy) = (x as usize * side / size, y as usize * side / size);
        let v = map[sy * side + sx];
        let g = if range > 0.0 { ((v - lo) / range * 255.0).round() } else { 0.0 };
        image::Luma([g as u8])
    })
}

pub fn predict_cmd(a: &PredictArgs) -> Result<(), CliError> {
    let ckpt = Checkpoint::load(&a.checkpoint)?;
    let config = &ckpt.config;
    let id = a
        .video
        .file_name()
        .map_or_else(|| "video".to_string(), |n| n.to_string_lossy().into_owned());
    if !a.video.is_dir() {
        return Err(CliError::Data(format!("{}: not a frame directory", a.video.display())));
    }
    let video = read_frame_dir(&a.video, &id, a.fps)?;
    let flows = match &a.flow_dir {
        Some(dir) => load_flows(&video, FlowSource::File, dir, None)?,
        None => load_flows(&video, FlowSource::Classical, Path::new("."), None)?,
    };
    let prepared = PreparedVideo::new(
        &video,
        &flows,
        None,
        config.input_size,
        config.soft_label_sigma,
        config.soft_label_radius,
    )?;
    let with_maps = a.emit_maps.is_some();
    let pred = predict(&ckpt.network(), &ckpt.store, config, &prepared, with_maps)?;
    if let (Some(dir), Some(maps)) = (&a.emit_maps, &pred.maps) {
        output::write_dir(dir, |tmp| {
            for (t, m) in maps.iter().enumerate() {
                let path = tmp.join(format!("map_{t:06}.png"));
                map_image(m, pred.map_side, config.input_size)
                    .save(&path)
                    .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
            }
            Ok(())
        })?;
    }
    let events = pred.events.len();
    output::write_json(&a.out, &PredictionReport { videos: vec![pred] })?;
    println!("{} frames, {events} events -> {}", video.num_frames(), a.out.display());
    Ok(())
}

pub fn plot_cmd(a: &PlotArgs) -> Result<(), CliError> {
    let text = std::fs::read_to_string(&a.report).map_err(|e| CliError::io(&a.report, e))?;
    let report: PredictionReport =
        serde_json::from_str(&text).map_err(|e| CliError::Data(format!("{}: {e}", a.report.display())))?;
    if report.videos.is_empty() {
        return Err(CliError::Data(format!("{}: report has no videos", a.report.display())));
    }
    let img = plot::render(&report, a.threshold);
    let mut png = Vec::new();
    img.write_to(&mut std::io::Cursor::new(&mut png), image::ImageFormat::Png)
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    output::write_file(&a.out, &png)?;
    Ok(())
}
