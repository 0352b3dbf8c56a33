//! `qmrkit`: dataset generation, regressor training, prediction, evaluation
//! and benchmark reports. Every command except a bare `score` writes its
//! outputs into a run directory with the resolved config, a `run.json`
//! manifest (seed, parameters, output hashes) and a log.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use qmrkit::regressor::{QmrLossKind, Topology};
use qmrkit::ModifierKind;

mod commands;
mod config;
mod error;
mod run;

#[derive(Parser, Debug)]
#[command(name = "qmrkit", version, about = "Quality metric regression toolkit for Earth-observation imagery")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Global {
    /// Base seed for every random choice (default: config `seed`, else 0).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// TOML run configuration; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Cap on worker threads.
    #[arg(long, global = true, env = "QMRKIT_THREADS")]
    pub threads: Option<usize>,
    /// Exact run directory, instead of a timestamped one under the runs root.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Parent of timestamped run directories (default: config `output_dir`, else `runs`).
    #[arg(long, global = true)]
    pub runs_root: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate an annotated dataset: every image at every grid value, cropped.
    Modify(ModifyArgs),
    /// Train a quality regressor on one or more dataset manifests.
    Train(TrainArgs),
    /// Predict per-head interval distributions for images or a manifest.
    Predict(PredictArgs),
    /// Retrieval metrics (medR, R@K, P/R/A/F@K, AUC) from a predictions CSV.
    Evaluate(EvaluateArgs),
    /// Score a hand-supplied metric vector.
    Score(ScoreArgs),
    /// Mean predicted quality and score over a directory of images.
    BenchmarkDataset(BenchDatasetArgs),
    /// Full-reference, no-reference and predicted-quality tables for SR methods.
    BenchmarkSr(BenchSrArgs),
    /// Train the tiny super-resolution net, optionally with the quality loss.
    TrainSr(TrainSrArgs),
}

fn parse_kind(s: &str) -> Result<ModifierKind, String> {
    s.parse().map_err(|e: qmrkit::Error| e.to_string())
}

fn parse_loss(s: &str) -> Result<QmrLossKind, String> {
    s.parse().map_err(|e: qmrkit::Error| e.to_string())
}

fn parse_topology(s: &str) -> Result<Topology, String> {
    match s.to_ascii_lowercase().replace('-', "_").as_str() {
        "single_head" => Ok(Topology::SingleHead),
        "multi_head" => Ok(Topology::MultiHead),
        "multi_branch" => Ok(Topology::MultiBranch),
        o => Err(format!("unknown topology '{o}' (expected single_head, multi_head, multi_branch)")),
    }
}

#[derive(Args, Debug)]
pub struct ModifyArgs {
    /// Directory of source images (default: config `inputs.images`).
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// blur, sharpness, gsd, rer or snr.
    #[arg(long, value_parser = parse_kind)]
    pub modifier: Option<ModifierKind>,
    /// Grid size N.
    #[arg(long)]
    pub n: Option<usize>,
    /// Lowest grid value.
    #[arg(long)]
    pub lo: Option<f64>,
    /// Highest grid value.
    #[arg(long)]
    pub hi: Option<f64>,
    /// Crop side in pixels.
    #[arg(long)]
    pub side: Option<usize>,
    /// Crops per image and grid value.
    #[arg(long)]
    pub crops: Option<usize>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Dataset manifest; repeat for multi-parameter models.
    #[arg(long = "manifest")]
    pub manifests: Vec<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// single_head, multi_head or multi_branch.
    #[arg(long, value_parser = parse_topology)]
    pub topology: Option<Topology>,
    /// Fraction of source images used for training.
    #[arg(long)]
    pub train_fraction: Option<f64>,
}

#[derive(Args, Debug)]
pub struct PredictArgs {
    /// Regressor checkpoint; repeat to combine parameters.
    #[arg(long = "model")]
    pub models: Vec<PathBuf>,
    /// Image file or directory.
    #[arg(long, conflicts_with = "manifest")]
    pub input: Option<PathBuf>,
    /// Dataset manifest; adds the annotated class as `target`.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Crops per image (default: the model's).
    #[arg(long)]
    pub crops: Option<usize>,
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    /// CSV with `target` and `predicted` columns and optional `p0..p{N-1}`.
    #[arg(long)]
    pub predictions: PathBuf,
    /// Recall and P/R/A/F window sizes.
    #[arg(long, value_delimiter = ',', default_value = "1,5,10")]
    pub k: Vec<usize>,
    /// Grid size when the CSV has no probability columns.
    #[arg(long)]
    pub n: Option<usize>,
    /// Probability at or above which a class is in the label set.
    #[arg(long, default_value_t = 0.3)]
    pub threshold: f64,
}

#[derive(Args, Debug)]
pub struct ScoreArgs {
    #[arg(long, allow_negative_numbers = true)]
    pub blur: f64,
    #[arg(long, allow_negative_numbers = true)]
    pub snr: f64,
    #[arg(long, allow_negative_numbers = true)]
    pub rer: f64,
    /// Sharpness factor F.
    #[arg(long = "F", alias = "sharpness", allow_negative_numbers = true)]
    pub sharpness: f64,
    /// GSD in m/px.
    #[arg(long, allow_negative_numbers = true)]
    pub gsd: f64,
}

#[derive(Args, Debug)]
pub struct BenchDatasetArgs {
    #[arg(long = "model")]
    pub models: Vec<PathBuf>,
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Label of the mean row (default: directory name).
    #[arg(long)]
    pub label: Option<String>,
    #[arg(long)]
    pub crops: Option<usize>,
}

#[derive(Args, Debug)]
pub struct BenchSrArgs {
    /// Directory of HR images.
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long, default_value_t = 2)]
    pub scale: usize,
    /// Comma list of nearest, bicubic, tinysr=<checkpoint>.
    #[arg(long, value_delimiter = ',', default_value = "nearest,bicubic")]
    pub methods: Vec<String>,
    /// Blur HR with sigma 1 before downsampling.
    #[arg(long)]
    pub blur_lr: bool,
    /// Regressor checkpoints for the quality table; repeatable, optional.
    #[arg(long = "model")]
    pub models: Vec<PathBuf>,
    #[arg(long)]
    pub crops: Option<usize>,
}

#[derive(Args, Debug)]
pub struct TrainSrArgs {
    /// Directory of HR training images.
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub scale: Option<usize>,
    /// Weight of the quality loss; 0 trains on pixel L1 only.
    #[arg(long)]
    pub lambda: Option<f64>,
    /// l1, l2 or bce.
    #[arg(long, value_parser = parse_loss)]
    pub loss_kind: Option<QmrLossKind>,
    /// Frozen regressor checkpoint for the quality loss.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Regressor head to steer.
    #[arg(long, value_parser = parse_kind, default_value = "blur")]
    pub param: ModifierKind,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub patch: Option<usize>,
    #[arg(long)]
    pub patches_per_image: Option<usize>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    if let Some(t) = cli.global.threads {
        if t == 0 {
            eprintln!("error: --threads must be at least 1");
            return ExitCode::from(2);
        }
        qmrkit::par::set_threads(t);
    }
    let result = match cli.command {
        Command::Modify(a) => commands::modify(&cli.global, a),
        Command::Train(a) => commands::train(&cli.global, a),
        Command::Predict(a) => commands::predict(&cli.global, a),
        Command::Evaluate(a) => commands::evaluate(&cli.global, a),
        Command::Score(a) => commands::score(&cli.global, a),
        Command::BenchmarkDataset(a) => commands::benchmark_dataset(&cli.global, a),
        Command::BenchmarkSr(a) => commands::benchmark_sr(&cli.global, a),
        Command::TrainSr(a) => commands::train_sr(&cli.global, a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
