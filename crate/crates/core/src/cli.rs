//! Command-line interface.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

use crate::decoding::{decode, PoseEstimate};
use crate::depth::{preprocess, resize_factor, DepthFrame};
use crate::io::{
    self, frame_paths, AnnotationFile, Dataset, DetectionRecord, IoError, Manifest, ManifestFrame, ManifestVideo,
    PipelineConfig, PoseRecord, ReportRow, SplitName, SCHEMA_VERSION,
};
use crate::maskgen::{build_targets, Annotation, MapKind, MapStack};
use crate::metrics::{aggregate, diagonal, ConfusionCounts, LimbRmsdReport};
use crate::nets::checkpoint::{self, CheckpointMeta};
use crate::nets::{detect_forward, regress_forward, DetectionNet, NetError, RegressionNet};
use crate::skeleton::{self, Channel, Limb, NUM_CHANNELS};
use crate::synthdata::{generate_raw_frame, native_annotation, Provenance};
use crate::training::{
    detection_examples, fit_detection, fit_regression, regression_examples, split_dataset, EpochRecord, FrameKey,
    TrainError,
};

#[derive(Debug, Parser)]
#[command(name = "limbpose", version, about = "Limb pose estimation from depth images")]
pub struct Cli {
    /// Run on a single worker thread; results are then bit-reproducible.
    #[arg(long, global = true)]
    pub serial: bool,
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Pipeline configuration (TOML); built-in defaults when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override the configured seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Override the configured dataset directory.
    #[arg(long)]
    pub dataset: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Print joints, connections and their channel indices.
    DescribeSkeleton,
    /// Generate a synthetic dataset.
    Synth {
        #[command(flatten)]
        common: Common,
        /// Output directory (defaults to the configured dataset path).
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        videos: Option<usize>,
        #[arg(long)]
        frames_per_video: Option<usize>,
    },
    /// Train the detection network.
    TrainDetect {
        #[command(flatten)]
        common: Common,
        /// Checkpoint directory (defaults to the configured one).
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Train the regression network on outputs of a trained detection network.
    TrainRegress {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
        /// Detection checkpoint (defaults to detection.ckpt in the checkpoint directory).
        #[arg(long)]
        detection: Option<PathBuf>,
        /// Feed ground-truth masks instead of detection outputs.
        #[arg(long)]
        teacher_forcing: bool,
    },
    /// Estimate poses and write pose records, detection masks and overlays.
    Infer {
        #[command(flatten)]
        common: Common,
        /// Detection checkpoint (defaults to detection.ckpt in the checkpoint directory).
        #[arg(long)]
        detection: Option<PathBuf>,
        /// Regression checkpoint (defaults to regression.ckpt in the checkpoint directory).
        #[arg(long)]
        regression: Option<PathBuf>,
        /// Dataset split to process when no --input is given.
        #[arg(long, value_enum, default_value = "test")]
        split: SplitName,
        /// Depth images to process instead of a dataset split.
        #[arg(long = "input")]
        inputs: Vec<PathBuf>,
        /// Output directory (defaults to the configured outputs path).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Skip writing PNG overlays.
        #[arg(long)]
        no_overlays: bool,
        /// Decode ground-truth maps instead of running the networks.
        #[arg(long)]
        oracle_maps: bool,
        /// Process at most this many frames.
        #[arg(long)]
        limit: Option<usize>,
    },
    /// Score pose records and detection masks against annotations.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Pose records (defaults to poses.jsonl in the outputs directory).
        #[arg(long)]
        poses: Option<PathBuf>,
        /// Detection records (defaults to detections.jsonl next to the poses).
        #[arg(long)]
        detections: Option<PathBuf>,
        /// Report path (defaults to report.csv next to the poses).
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
    Numeric(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Numeric(_) => 3,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Data(m) => write!(f, "data error: {m}"),
            CliError::Numeric(m) => write!(f, "numeric failure: {m}"),
        }
    }
}

impl From<IoError> for CliError {
    fn from(e: IoError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<NetError> for CliError {
    fn from(e: NetError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::NonFinite { .. } => CliError::Numeric(e.to_string()),
            TrainError::Config(_) => CliError::Usage(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

fn data(e: impl std::fmt::Display) -> CliError {
    CliError::Data(e.to_string())
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).try_init();
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("limbpose: {e}");
            e.exit_code()
        }
    }
}

pub fn main_exit() -> ExitCode {
    ExitCode::from(run(std::env::args_os()))
}

/// Runs a parsed command inside a worker pool sized by `--serial`.
pub fn execute(cli: &Cli) -> Result<(), CliError> {
    let threads = if cli.serial { 1 } else { 0 };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| CliError::Data(format!("cannot start worker pool: {e}")))?;
    pool.install(|| dispatch(&cli.command))
}

fn load_config(common: &Common) -> Result<PipelineConfig, CliError> {
    let mut cfg = match &common.config {
        Some(path) => PipelineConfig::load(path).map_err(|e| CliError::Usage(e.to_string()))?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(ds) = &common.dataset {
        cfg.paths.dataset = ds.clone();
    }
    cfg.train.seed = cfg.seed;
    Ok(cfg)
}

fn dispatch(cmd: &Command) -> Result<(), CliError> {
    match cmd {
        Command::DescribeSkeleton => {
            print!("{}", skeleton::describe());
            Ok(())
        }
        Command::Synth {
            common,
            out,
            videos,
            frames_per_video,
        } => {
            let mut cfg = load_config(common)?;
            if let Some(v) = videos {
                cfg.synth.videos = *v;
            }
            if let Some(n) = frames_per_video {
                cfg.synth.frames_per_video = *n;
            }
            cfg.validate().map_err(CliError::Usage)?;
            let root = out.clone().unwrap_or_else(|| cfg.paths.dataset.clone());
            let manifest = cmd_synth(&cfg, &root)?;
            println!("wrote {} frames to {}", manifest.frames.len(), root.display());
            Ok(())
        }
        Command::TrainDetect { common, out, epochs } => {
            let mut cfg = load_config(common)?;
            if let Some(e) = epochs {
                cfg.train.epochs = *e;
            }
            cfg.validate().map_err(CliError::Usage)?;
            let dir = out.clone().unwrap_or_else(|| cfg.paths.checkpoints.clone());
            let meta = cmd_train_detect(&cfg, &dir)?;
            println!(
                "best epoch {} (validation mean joint DSC {:.4}); checkpoint in {}",
                meta.epoch,
                meta.validation_score,
                dir.display()
            );
            Ok(())
        }
        Command::TrainRegress {
            common,
            out,
            epochs,
            detection,
            teacher_forcing,
        } => {
            let mut cfg = load_config(common)?;
            if let Some(e) = epochs {
                cfg.train.epochs = *e;
            }
            cfg.train.teacher_forcing |= *teacher_forcing;
            cfg.validate().map_err(CliError::Usage)?;
            let dir = out.clone().unwrap_or_else(|| cfg.paths.checkpoints.clone());
            let det = detection.clone().unwrap_or_else(|| dir.join(DETECTION_CKPT));
            let meta = cmd_train_regress(&cfg, &det, &dir)?;
            println!(
                "best epoch {} (validation MSE {:.6}); checkpoint in {}",
                meta.epoch,
                meta.validation_score,
                dir.display()
            );
            Ok(())
        }
        Command::Infer {
            common,
            detection,
            regression,
            split,
            inputs,
            out,
            no_overlays,
            oracle_maps,
            limit,
        } => {
            let cfg = load_config(common)?;
            let out = out.clone().unwrap_or_else(|| cfg.paths.outputs.clone());
            let source = if inputs.is_empty() {
                FrameSource::Split(*split)
            } else {
                FrameSource::Files(inputs.clone())
            };
            let models = if *oracle_maps {
                if !inputs.is_empty() {
                    return Err(CliError::Usage("--oracle-maps needs annotated dataset frames, not --input".into()));
                }
                Models::Oracle
            } else {
                let ckpt = &cfg.paths.checkpoints;
                Models::load(
                    &cfg,
                    &detection.clone().unwrap_or_else(|| ckpt.join(DETECTION_CKPT)),
                    &regression.clone().unwrap_or_else(|| ckpt.join(REGRESSION_CKPT)),
                )?
            };
            let opts = InferOptions {
                overlays: !no_overlays,
                limit: *limit,
            };
            let summary = cmd_infer(&cfg, &models, &source, &out, &opts)?;
            println!(
                "{} frames, {} failed; records in {}",
                summary.frames,
                summary.failed,
                out.display()
            );
            Ok(())
        }
        Command::Eval {
            common,
            poses,
            detections,
            out,
        } => {
            let cfg = load_config(common)?;
            let poses = poses.clone().unwrap_or_else(|| cfg.paths.outputs.join(POSES_FILE));
            let dir = poses.parent().map(Path::to_path_buf).unwrap_or_default();
            let detections = detections.clone().or_else(|| {
                let p = dir.join(DETECTIONS_FILE);
                p.exists().then_some(p)
            });
            let rows = cmd_eval(&cfg, &poses, detections.as_deref())?;
            let text = io::report_csv(&rows).map_err(data)?;
            let out = out.clone().unwrap_or_else(|| dir.join(REPORT_FILE));
            io::write_text(&out, &text)?;
            print!("{text}");
            Ok(())
        }
    }
}

pub const DETECTION_CKPT: &str = "detection.ckpt";
pub const REGRESSION_CKPT: &str = "regression.ckpt";
pub const POSES_FILE: &str = "poses.jsonl";
pub const DETECTIONS_FILE: &str = "detections.jsonl";
pub const REPORT_FILE: &str = "report.csv";

fn video_seed(seed: u64, video: usize) -> u64 {
    seed ^ (video as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Generates the synthetic dataset described by `cfg.synth` under `root`.
pub fn cmd_synth(cfg: &PipelineConfig, root: &Path) -> Result<Manifest, CliError> {
    let start = Instant::now();
    std::fs::create_dir_all(root).map_err(|e| data(format!("{}: {e}", root.display())))?;
    let pre = cfg.preprocess;
    let videos: Vec<ManifestVideo> = (0..cfg.synth.videos)
        .map(|v| ManifestVideo {
            id: format!("p{v}"),
            seed: video_seed(cfg.seed, v),
            params: cfg.synth.scene.patient(cfg.seed, v as u64),
        })
        .collect();
    let n = cfg.synth.frames_per_video;
    let jobs: Vec<(usize, usize)> = (0..videos.len()).flat_map(|v| (0..n).map(move |i| (v, i))).collect();
    let written: Vec<(FrameKey, String, String)> = jobs
        .par_iter()
        .map(|&(v, i)| {
            let video = &videos[v];
            let (skel, raw) = generate_raw_frame(&video.params, video.seed, i as u64);
            let id = format!("{}/{i:06}", video.id);
            let (depth, ann) = frame_paths(&video.id, i);
            io::write_depth_pgm(&root.join(&depth), &raw)?;
            let native = native_annotation(&id, &skel, &video.params);
            let factor = resize_factor(raw.width, raw.height, pre.width, pre.height).map_err(|e| IoError::Format {
                path: root.join(&depth),
                message: e.to_string(),
            })?;
            let provenance = Provenance {
                seed: video.seed,
                index: i as u64,
                scale: skel.scale,
            };
            io::write_json(&root.join(&ann), &AnnotationFile::from_annotation(&native, 1.0 / factor, Some(provenance)))?;
            Ok((
                FrameKey {
                    video: video.id.clone(),
                    index: i,
                },
                depth,
                ann,
            ))
        })
        .collect::<Result<_, IoError>>()?;
    let keys: Vec<FrameKey> = written.iter().map(|w| w.0.clone()).collect();
    let mut split_of = vec![SplitName::Train; keys.len()];
    if keys.len() >= crate::training::MIN_SPLIT_FRAMES {
        let split = split_dataset(&keys, cfg.train.validation_fraction, cfg.seed)?;
        for &i in &split.validation {
            split_of[i] = SplitName::Validation;
        }
        for &i in &split.test {
            split_of[i] = SplitName::Test;
        }
    } else {
        log::warn!("only {} frames; all assigned to the training split", keys.len());
    }
    let frames = written
        .into_iter()
        .zip(split_of)
        .map(|((key, depth, annotation), split)| ManifestFrame {
            id: format!("{}/{:06}", key.video, key.index),
            video: key.video,
            index: key.index,
            split,
            depth,
            annotation,
        })
        .collect();
    let manifest = Manifest {
        schema_version: SCHEMA_VERSION,
        seed: cfg.seed,
        params: cfg.synth.scene.clone(),
        preprocess: pre,
        validation_fraction: cfg.train.validation_fraction,
        videos,
        frames,
    };
    io::write_json(&root.join("manifest.json"), &manifest)?;
    log::info!("synth: {} frames in {:.2?}", manifest.frames.len(), start.elapsed());
    Ok(manifest)
}

fn load_split(ds: &Dataset, split: SplitName) -> Result<Vec<(DepthFrame, Annotation)>, CliError> {
    let frames = ds.frames_in(split);
    Ok(frames
        .par_iter()
        .map(|f| ds.load(f))
        .collect::<Result<Vec<_>, IoError>>()?)
}

fn check_resolution(cfg: &PipelineConfig, ds: &Dataset) -> Result<(), CliError> {
    let pre = &ds.manifest.preprocess;
    if (pre.width, pre.height) != (cfg.train.width, cfg.train.height) {
        return Err(data(format!(
            "dataset resolution {}x{} differs from configured {}x{}",
            pre.width, pre.height, cfg.train.width, cfg.train.height
        )));
    }
    Ok(())
}

fn history_writer(path: PathBuf) -> Result<impl FnMut(&EpochRecord), CliError> {
    io::write_text(&path, "")?;
    Ok(move |r: &EpochRecord| {
        let line = serde_json::to_string(r).expect("records serialize");
        if let Err(e) = io::append_line(&path, &line) {
            log::warn!("{e}");
        }
    })
}

/// Trains the detection network on the dataset's training split and saves
/// the best checkpoint, its history and access audit into `dir`.
pub fn cmd_train_detect(cfg: &PipelineConfig, dir: &Path) -> Result<CheckpointMeta, CliError> {
    let start = Instant::now();
    let ds = Dataset::open(&cfg.paths.dataset)?;
    check_resolution(cfg, &ds)?;
    let train = detection_examples(&load_split(&ds, SplitName::Train)?, &cfg.train.targets)?;
    let val = detection_examples(&load_split(&ds, SplitName::Validation)?, &cfg.train.targets)?;
    log::info!("train-detect: {} training, {} validation frames", train.len(), val.len());
    let mut net = DetectionNet::<f32>::new(cfg.detection, cfg.seed)?;
    if let Some(p) = cfg.train.output_prior {
        net.set_output_prior(p);
    }
    let mut on_epoch = history_writer(dir.join("detection_history.jsonl"))?;
    let history = fit_detection(&mut net, &train, &val, &cfg.train, Some(&mut on_epoch))?;
    let meta = CheckpointMeta {
        epoch: history.best_epoch as u32,
        validation_score: history.best_metric,
    };
    checkpoint::save_detection(&mut net, meta, &dir.join(DETECTION_CKPT)).map_err(|e| data(format!("{}: {e}", dir.display())))?;
    io::write_json(&dir.join("detection_audit.json"), &history.audit)?;
    log::info!("train-detect: finished in {:.2?}", start.elapsed());
    Ok(meta)
}

/// Trains the regression network on the outputs of a frozen detection
/// checkpoint and saves the best checkpoint into `dir`.
pub fn cmd_train_regress(cfg: &PipelineConfig, detection: &Path, dir: &Path) -> Result<CheckpointMeta, CliError> {
    let start = Instant::now();
    let ds = Dataset::open(&cfg.paths.dataset)?;
    check_resolution(cfg, &ds)?;
    let (det, _) = checkpoint::load_detection(detection, Some(&cfg.detection))
        .map_err(|e| data(format!("{}: {e}", detection.display())))?;
    let t = &cfg.train;
    let train = regression_examples(&det, &load_split(&ds, SplitName::Train)?, &t.targets, t.teacher_forcing)?;
    let val = regression_examples(&det, &load_split(&ds, SplitName::Validation)?, &t.targets, t.teacher_forcing)?;
    log::info!("train-regress: {} training, {} validation frames", train.len(), val.len());
    let mut net = RegressionNet::<f32>::new(cfg.regression, cfg.seed)?;
    let mut on_epoch = history_writer(dir.join("regression_history.jsonl"))?;
    let history = fit_regression(&mut net, &train, &val, t, Some(&mut on_epoch))?;
    let meta = CheckpointMeta {
        epoch: history.best_epoch as u32,
        validation_score: history.best_metric,
    };
    checkpoint::save_regression(&mut net, meta, &dir.join(REGRESSION_CKPT)).map_err(|e| data(format!("{}: {e}", dir.display())))?;
    io::write_json(&dir.join("regression_audit.json"), &history.audit)?;
    log::info!("train-regress: finished in {:.2?}", start.elapsed());
    Ok(meta)
}

/// Where `infer` gets its maps from.
pub enum Models {
    Networks {
        detection: Box<DetectionNet<f32>>,
        regression: Box<RegressionNet<f32>>,
    },
    /// Ground-truth maps built from annotations.
    Oracle,
}

impl Models {
    pub fn load(cfg: &PipelineConfig, detection: &Path, regression: &Path) -> Result<Self, CliError> {
        let (det, _) = checkpoint::load_detection(detection, Some(&cfg.detection))
            .map_err(|e| data(format!("{}: {e}", detection.display())))?;
        let (reg, _) = checkpoint::load_regression(regression, Some(&cfg.regression))
            .map_err(|e| data(format!("{}: {e}", regression.display())))?;
        Ok(Models::Networks {
            detection: Box::new(det),
            regression: Box::new(reg),
        })
    }
}

pub enum FrameSource {
    Split(SplitName),
    Files(Vec<PathBuf>),
}

pub struct InferOptions {
    pub overlays: bool,
    pub limit: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct InferSummary {
    pub frames: usize,
    pub failed: usize,
}

struct FrameJob {
    id: String,
    manifest: Option<ManifestFrame>,
    file: Option<PathBuf>,
}

struct FrameOutput {
    depth: DepthFrame,
    pose: PoseEstimate,
    detection: MapStack,
    timing: [Duration; 3],
}

fn infer_frame(
    cfg: &PipelineConfig,
    models: &Models,
    ds: Option<&Dataset>,
    job: &FrameJob,
) -> Result<FrameOutput, String> {
    let depth = match (&job.manifest, &job.file) {
        (Some(f), _) => ds.expect("dataset frames need a dataset").depth(f).map_err(|e| e.to_string())?,
        (None, Some(path)) => {
            let raw = io::read_depth_image(path).map_err(|e| e.to_string())?;
            preprocess(&raw, &cfg.preprocess).map_err(|e| format!("{}: {e}", path.display()))?
        }
        (None, None) => unreachable!("jobs name a frame"),
    };
    let (h, w) = (depth.height(), depth.width());
    let t0 = Instant::now();
    let (detection, regression) = match models {
        Models::Oracle => {
            let f = job.manifest.as_ref().expect("oracle maps need dataset frames");
            let ann = ds.expect("dataset").annotation(f).map_err(|e| e.to_string())?;
            let t = &cfg.train.targets;
            (
                build_targets(&ann, t, MapKind::Binary, h, w).map_err(|e| e.to_string())?,
                build_targets(&ann, t, MapKind::Gaussian, h, w).map_err(|e| e.to_string())?,
            )
        }
        Models::Networks { detection, regression } => {
            let det = detect_forward(detection, &depth).map_err(|e| e.to_string())?;
            let reg = regress_forward(regression, &depth, &det).map_err(|e| e.to_string())?;
            (det, reg)
        }
    };
    let t1 = Instant::now();
    if !regression.as_slice().iter().all(|v| v.is_finite()) {
        return Err("non-finite network output".into());
    }
    let pose = decode(&regression, &cfg.decode).map_err(|e| e.to_string())?;
    let t2 = Instant::now();
    Ok(FrameOutput {
        depth,
        pose,
        detection,
        timing: [t1 - t0, t2 - t1, Duration::ZERO],
    })
}

fn overlay_name(id: &str) -> String {
    id.replace(['/', '\\'], "_") + ".png"
}

/// Runs detection, regression and decoding on each frame. Per-frame
/// failures are recorded and skipped; the command fails only if every
/// frame fails.
pub fn cmd_infer(
    cfg: &PipelineConfig,
    models: &Models,
    source: &FrameSource,
    out: &Path,
    opts: &InferOptions,
) -> Result<InferSummary, CliError> {
    let ds = match source {
        FrameSource::Split(_) => Some(Dataset::open(&cfg.paths.dataset)?),
        FrameSource::Files(_) => None,
    };
    let mut jobs: Vec<FrameJob> = match source {
        FrameSource::Split(split) => ds
            .as_ref()
            .expect("opened above")
            .frames_in(*split)
            .into_iter()
            .map(|f| FrameJob {
                id: f.id.clone(),
                manifest: Some(f.clone()),
                file: None,
            })
            .collect(),
        FrameSource::Files(files) => files
            .iter()
            .map(|p| FrameJob {
                id: p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default(),
                manifest: None,
                file: Some(p.clone()),
            })
            .collect(),
    };
    if let Some(n) = opts.limit {
        jobs.truncate(n);
    }
    if jobs.is_empty() {
        return Err(data("no frames to process"));
    }
    let start = Instant::now();
    let results: Vec<Result<FrameOutput, String>> = jobs
        .par_iter()
        .map(|job| {
            let mut r = infer_frame(cfg, models, ds.as_ref(), job);
            if let (Ok(o), true) = (&mut r, opts.overlays) {
                let t = Instant::now();
                let img = io::render_overlay(&o.depth, &o.pose, 4);
                io::save_png(&out.join("overlays").join(overlay_name(&job.id)), &img).map_err(|e| e.to_string())?;
                o.timing[2] = t.elapsed();
            }
            r
        })
        .collect();

    let mut poses = Vec::with_capacity(jobs.len());
    let mut detections = Vec::new();
    let mut failed = 0;
    let mut totals = [Duration::ZERO; 3];
    for (job, r) in jobs.iter().zip(&results) {
        let (w, h) = (cfg.preprocess.width, cfg.preprocess.height);
        match r {
            Ok(o) => {
                for (t, d) in totals.iter_mut().zip(o.timing) {
                    *t += d;
                }
                poses.push(PoseRecord {
                    schema_version: SCHEMA_VERSION,
                    frame_id: job.id.clone(),
                    width: w,
                    height: h,
                    pose: Some(o.pose.clone()),
                    error: None,
                });
                detections.push(DetectionRecord::from_maps(&job.id, &o.detection, cfg.eval.threshold));
            }
            Err(e) => {
                log::warn!("{}: {e}", job.id);
                failed += 1;
                poses.push(PoseRecord {
                    schema_version: SCHEMA_VERSION,
                    frame_id: job.id.clone(),
                    width: w,
                    height: h,
                    pose: None,
                    error: Some(e.clone()),
                });
            }
        }
    }
    io::write_text(&out.join(POSES_FILE), &io::to_jsonl(&poses))?;
    io::write_text(&out.join(DETECTIONS_FILE), &io::to_jsonl(&detections))?;
    let ok = (jobs.len() - failed).max(1) as f64;
    log::info!(
        "infer: {} frames in {:.2?}; per frame: networks {:.4} s, decoding {:.4} s, overlay {:.4} s",
        jobs.len(),
        start.elapsed(),
        totals[0].as_secs_f64() / ok,
        totals[1].as_secs_f64() / ok,
        totals[2].as_secs_f64() / ok
    );
    if failed == jobs.len() {
        return Err(data(format!("all {failed} frames failed")));
    }
    Ok(InferSummary {
        frames: jobs.len(),
        failed,
    })
}

/// Per-joint and per-connection DSC and recall over frames where the
/// ground-truth channel is non-empty, and per-limb RMSD, as report rows in
/// channel order.
pub fn cmd_eval(cfg: &PipelineConfig, poses: &Path, detections: Option<&Path>) -> Result<Vec<ReportRow>, CliError> {
    let ds = Dataset::open(&cfg.paths.dataset)?;
    let records = io::read_pose_records(poses)?;
    if records.iter().all(|r| r.pose.is_none()) {
        return Err(data(format!("{}: no pose predictions", poses.display())));
    }
    let (w, h) = (ds.manifest.preprocess.width, ds.manifest.preprocess.height);
    let lookup = |id: &str| -> Result<Annotation, CliError> {
        let f = ds
            .frame(id)
            .ok_or_else(|| data(format!("frame {id:?} is not in the dataset")))?;
        Ok(ds.annotation(f)?)
    };
    let penalty = cfg.eval.missing_penalty.unwrap_or_else(|| diagonal(w, h));
    let mut rmsd = LimbRmsdReport::default();
    for r in &records {
        let ann = lookup(&r.frame_id)?;
        if (r.width, r.height) != (w, h) {
            return Err(data(format!("frame {}: record is {}x{}, dataset {w}x{h}", r.frame_id, r.width, r.height)));
        }
        let empty;
        let est = match &r.pose {
            Some(p) => p,
            None => {
                empty = PoseEstimate::empty();
                &empty
            }
        };
        rmsd.push(est, &ann, penalty);
    }

    let mut rows = Vec::new();
    if let Some(path) = detections {
        let dets = io::read_detection_records(path)?;
        if dets.is_empty() {
            return Err(data(format!("{}: no detection records", path.display())));
        }
        let mut dsc: Vec<Vec<f64>> = vec![Vec::new(); NUM_CHANNELS];
        let mut rec: Vec<Vec<f64>> = vec![Vec::new(); NUM_CHANNELS];
        for d in &dets {
            let ann = lookup(&d.frame_id)?;
            let masks = d.masks().map_err(|m| data(format!("{}: {}: {m}", path.display(), d.frame_id)))?;
            let gt = build_targets(&ann, &cfg.train.targets, MapKind::Binary, h, w).map_err(data)?;
            for c in 0..NUM_CHANNELS {
                if gt.is_channel_empty(c) {
                    continue;
                }
                let gmask = crate::metrics::binarize_slice(gt.channel(c), h, w, 0.5);
                let counts = ConfusionCounts::from_masks(&masks[c], &gmask).map_err(data)?;
                dsc[c].push(counts.dsc());
                rec[c].push(counts.recall());
            }
        }
        for c in 0..NUM_CHANNELS {
            let (section, item) = match Channel::from_index(c).expect("channel index") {
                Channel::Joint(j) => ("joint", j.short_name().to_string()),
                Channel::Connection(k) => ("connection", k.name()),
            };
            for (metric, values) in [("dsc", &dsc[c]), ("recall", &rec[c])] {
                if let Ok(s) = aggregate(values) {
                    rows.push(ReportRow::new(section, &item, metric, &s));
                }
            }
        }
    }
    for limb in Limb::ALL {
        if let Ok(s) = rmsd.summary(limb) {
            rows.push(ReportRow::new("limb", limb.name(), "rmsd", &s));
        }
    }
    Ok(rows)
}
