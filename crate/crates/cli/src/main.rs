//! `palmverify` command line.

mod dataset_cmd;
mod error;
mod eval_cmd;
mod io;
mod roi;
mod serve;

use clap::{Args, Parser, Subcommand, ValueEnum};
use palmverify_core::dataset::{SplitMode, DEFAULT_FOLDS, DEFAULT_SEED, DEFAULT_TRAIN_FRACTION};
use palmverify_core::eval::{DEFAULT_DELTA, DEFAULT_IOU, DEFAULT_TOP1_REPEATS, FAR_TARGETS};
use palmverify_core::geometry::{BoxSizing, CanvasPolicy, DEFAULT_CANVAS};
use palmverify_core::matching::DEFAULT_THRESHOLD;
use palmverify_core::pipeline::{DEFAULT_CONF_MIN, DEFAULT_ROI_SIZE};
use std::path::PathBuf;
use std::process::ExitCode;

/// Palmprint ROI extraction, dataset tooling, evaluation and the
/// enrollment service.
///
/// Exit codes: 0 success, 1 usage, 2 data error, 3 pipeline error.
#[derive(Parser)]
#[command(name = "palmverify", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Cut the palm ROI out of one image.
    RoiExtract(RoiArgs),
    /// Manifest, split, fold and augmentation tools.
    #[command(subcommand)]
    Dataset(DatasetCommand),
    /// Verification, identification and detection metrics.
    #[command(subcommand)]
    Eval(EvalCommand),
    /// Run the HTTP enrollment and verification service.
    Serve(ServeArgs),
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Backend {
    /// Replays ground-truth boxes from annotation sidecars.
    Oracle,
    /// Trained detector weights (not available in this build).
    Model,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Embedder {
    /// Deterministic seeded projection embedder.
    Stub,
    /// Trained embedding weights (not available in this build).
    Model,
}

#[derive(Args)]
struct RoiArgs {
    #[arg(long)]
    image: PathBuf,
    /// Sidecar to use; defaults to `<stem>.ann.json` next to the image.
    #[arg(long)]
    annotation: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Backend::Oracle)]
    backend: Backend,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = DEFAULT_ROI_SIZE)]
    size: u32,
    #[arg(long, default_value_t = DEFAULT_CONF_MIN)]
    conf_min: f64,
    /// Gaussian sigma (pixels) added to oracle box centers.
    #[arg(long, default_value_t = 0.0)]
    jitter: f64,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    seed: u64,
    #[arg(long, default_value_t = BoxSizing::DEFAULT_ALPHA)]
    alpha: f64,
    #[arg(long, default_value_t = BoxSizing::DEFAULT_BETA)]
    beta: f64,
}

#[derive(Subcommand)]
enum DatasetCommand {
    /// Build a manifest from well-formed sample names under a root.
    Scan {
        #[arg(long)]
        root: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Seeded train/val/test split.
    Split(SplitArgs),
    /// Subject-disjoint k-fold partition.
    Kfold(KfoldArgs),
    /// Rotation augmentation of annotated images.
    Augment(AugmentArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitKind {
    /// Ratio split for detector training.
    Detector,
    /// Subject-disjoint train/test split for the verifier.
    Verifier,
}

#[derive(Clone, Copy)]
struct Ratio([u32; 3]);

fn parse_ratio(s: &str) -> Result<Ratio, String> {
    let parts: Vec<&str> = s.split(':').collect();
    let [a, b, c] = parts.as_slice() else {
        return Err("expected train:val:test, e.g. 8:1:1".into());
    };
    let n = |p: &str| p.trim().parse::<u32>().map_err(|e| format!("{p:?}: {e}"));
    Ok(Ratio([n(a)?, n(b)?, n(c)?]))
}

fn parse_mode(s: &str) -> Result<SplitMode, String> {
    match s {
        "sample" => Ok(SplitMode::Sample),
        "subject" => Ok(SplitMode::Subject),
        _ => Err("expected sample or subject".into()),
    }
}

fn parse_policy(s: &str) -> Result<CanvasPolicy, String> {
    match s {
        "skip" => Ok(CanvasPolicy::Skip),
        "expand" => Ok(CanvasPolicy::Expand),
        _ => Err("expected skip or expand".into()),
    }
}

#[derive(Args)]
struct SplitArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value_t = SplitKind::Detector)]
    kind: SplitKind,
    #[arg(long, value_parser = parse_ratio, default_value = "8:1:1")]
    ratio: Ratio,
    /// `sample` or `subject` (detector split only).
    #[arg(long, value_parser = parse_mode, default_value = "sample")]
    mode: SplitMode,
    /// Fraction of subjects used for training (verifier split only).
    #[arg(long, default_value_t = DEFAULT_TRAIN_FRACTION)]
    train_fraction: f64,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    seed: u64,
}

#[derive(Args)]
struct KfoldArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long, default_value_t = DEFAULT_FOLDS)]
    k: usize,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    seed: u64,
}

#[derive(Args)]
struct AugmentArgs {
    /// Directory of images with annotation sidecars.
    #[arg(long)]
    root: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
    /// Number of rotations; the step is 360/J degrees.
    #[arg(long = "J", short = 'J', default_value_t = 24)]
    j: usize,
    /// Square canvas side s_f.
    #[arg(long, default_value_t = DEFAULT_CANVAS)]
    canvas: u32,
    /// What to do when a rotated point leaves the canvas: skip or expand.
    #[arg(long, value_parser = parse_policy, default_value = "skip")]
    policy: CanvasPolicy,
    #[arg(long, default_value_t = BoxSizing::DEFAULT_ALPHA)]
    alpha: f64,
    #[arg(long, default_value_t = BoxSizing::DEFAULT_BETA)]
    beta: f64,
}

#[derive(Subcommand)]
enum EvalCommand {
    /// EER and TPR@FAR over genuine/impostor pairs.
    Verify(VerifyArgs),
    /// Top-1 identification accuracy.
    Identify(IdentifyArgs),
    /// mAP and log-average miss rate of detections.
    Detect(DetectArgs),
    /// Calibrate the decision threshold at target FARs.
    Threshold(ThresholdArgs),
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Stage {
    /// Images are already ROI crops.
    Roi,
    /// Full images; ROIs come from the oracle pipeline via sidecars.
    Raw,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Part {
    Train,
    Val,
    Test,
}

impl Part {
    fn as_str(self) -> &'static str {
        match self {
            Part::Train => "train",
            Part::Val => "val",
            Part::Test => "test",
        }
    }
}

#[derive(Clone, Copy)]
enum Impostors {
    Auto,
    Full,
    Sampled(usize),
}

fn parse_impostors(s: &str) -> Result<Impostors, String> {
    match s {
        "auto" => Ok(Impostors::Auto),
        "full" => Ok(Impostors::Full),
        n => n
            .parse()
            .map(Impostors::Sampled)
            .map_err(|_| "expected auto, full or a pair count".into()),
    }
}

#[derive(Args)]
struct FeatureArgs {
    /// Dataset root; scanned for sample names unless --manifest is given.
    #[arg(long)]
    root: Option<PathBuf>,
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Split file restricting the samples to one part.
    #[arg(long)]
    split: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Part::Test)]
    part: Part,
    #[arg(long, value_enum, default_value_t = Stage::Roi)]
    stage: Stage,
    #[arg(long, value_enum, default_value_t = Embedder::Stub)]
    embedder: Embedder,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    embedder_seed: u64,
    #[arg(long, default_value_t = 0.0)]
    jitter: f64,
    #[arg(long, default_value_t = DEFAULT_CONF_MIN)]
    conf_min: f64,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    seed: u64,
}

#[derive(Args)]
struct VerifyArgs {
    #[command(flatten)]
    features: FeatureArgs,
    #[arg(long, value_delimiter = ',', default_values_t = FAR_TARGETS)]
    far: Vec<f64>,
    /// `auto`, `full`, or a number of sampled impostor pairs.
    #[arg(long, value_parser = parse_impostors, default_value = "auto")]
    impostors: Impostors,
    #[arg(long)]
    report: Option<PathBuf>,
    /// ROC curve CSV (far, tpr).
    #[arg(long)]
    roc: Option<PathBuf>,
    /// Write the score set as JSON for `eval threshold --scores`.
    #[arg(long)]
    scores_out: Option<PathBuf>,
}

#[derive(Args)]
struct IdentifyArgs {
    #[command(flatten)]
    features: FeatureArgs,
    #[arg(long, default_value_t = DEFAULT_TOP1_REPEATS)]
    repeats: usize,
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct DetectArgs {
    /// Directory of images with annotation sidecars (ground truth).
    #[arg(long)]
    root: PathBuf,
    /// JSON object mapping image paths relative to the root to detections;
    /// without it detections come from the oracle backend.
    #[arg(long)]
    detections: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Backend::Oracle)]
    backend: Backend,
    #[arg(long, default_value_t = 0.0)]
    jitter: f64,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    seed: u64,
    #[arg(long, default_value_t = DEFAULT_IOU)]
    iou: f64,
    /// Keypoint match radius in pixels.
    #[arg(long, default_value_t = DEFAULT_DELTA)]
    delta: f64,
    #[arg(long, default_value_t = BoxSizing::DEFAULT_ALPHA)]
    alpha: f64,
    #[arg(long, default_value_t = BoxSizing::DEFAULT_BETA)]
    beta: f64,
    #[arg(long)]
    report: Option<PathBuf>,
    /// Directory for miss-rate/FPPI curve CSVs.
    #[arg(long)]
    curves: Option<PathBuf>,
}

#[derive(Args)]
struct ThresholdArgs {
    /// Score set JSON written by `eval verify --scores-out`.
    #[arg(long)]
    scores: Option<PathBuf>,
    #[command(flatten)]
    features: FeatureArgs,
    #[arg(long, value_delimiter = ',', default_value = "1e-4")]
    far: Vec<f64>,
    #[arg(long, value_parser = parse_impostors, default_value = "auto")]
    impostors: Impostors,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1:8080")]
    addr: String,
    #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
    threshold: f64,
    #[arg(long, value_enum, default_value_t = Backend::Oracle)]
    backend: Backend,
    /// Images with annotation sidecars the oracle detector recognizes.
    #[arg(long)]
    oracle_dir: Option<PathBuf>,
    #[arg(long, default_value = "templates.json")]
    store: PathBuf,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    embedder_seed: u64,
    #[arg(long, default_value_t = DEFAULT_CONF_MIN)]
    conf_min: f64,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let result = match &cli.command {
        Command::RoiExtract(args) => roi::run(args),
        Command::Dataset(cmd) => dataset_cmd::run(cmd),
        Command::Eval(cmd) => eval_cmd::run(cmd),
        Command::Serve(args) => serve::run(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            e.exit_code()
        }
    }
}
