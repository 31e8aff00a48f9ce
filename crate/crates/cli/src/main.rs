//! `salient-align`: the pipeline as one executable. `synth` generates a
//! ground-truth dataset; `extract`, `cluster`, `register`, and `evaluate`
//! run the stages over a dataset manifest, each writing machine-readable
//! output that embeds the toolkit version and the resolved configuration.
//!
//! Exit codes: 0 on success (including `--help`/`--version`), 1 on
//! validation errors (bad flags, inconsistent inputs), 2 on I/O failures.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;

use commands::CliError;

#[derive(Parser)]
#[command(
    name = "salient-align",
    version,
    about = "Salient-landmark discovery, matching, and image alignment"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset with known ground truth
    Synth(SynthArgs),
    /// Extract salient landmarks from the saliency grids of a dataset
    Extract(ExtractArgs),
    /// Match landmarks across images by clustering their feature vectors
    Cluster(ClusterArgs),
    /// Fit the two-landmark similarity transform between two images
    Register(RegisterArgs),
    /// Score alignment methods over all image pairs of each plane
    Evaluate(EvaluateArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// Number of images to generate; planes alternate TV, TC
    #[arg(long, default_value_t = 40)]
    n: u32,
    /// Base seed; image i uses seed + i
    #[arg(long, env = "SALIENT_ALIGN_SEED", default_value_t = 7)]
    seed: u64,
    /// Additive image speckle sigma
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    /// Overlay wedge-shaped intensity dropouts
    #[arg(long)]
    shadows: bool,
    /// Additive saliency-grid noise sigma (degrades landmark detection)
    #[arg(long, default_value_t = 0.0)]
    saliency_noise: f64,
    /// Output directory, created if missing
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct ExtractArgs {
    /// Dataset manifest JSON
    #[arg(long)]
    manifest: PathBuf,
    /// Minimum peak separation d, in grid cells (window is (2d+1) squared)
    #[arg(long, default_value_t = 2)]
    min_distance: u32,
    /// Saliency threshold t in [0, 1]; cells below it are never landmarks
    #[arg(long, default_value_t = 0.1)]
    threshold: f64,
    /// Output landmarks JSON
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ClusterArgs {
    /// Landmarks JSON from `extract`
    #[arg(long)]
    landmarks: PathBuf,
    /// Dataset manifest JSON
    #[arg(long)]
    manifest: PathBuf,
    /// Smallest cluster count to try
    #[arg(long, default_value_t = 2)]
    k_min: usize,
    /// Largest cluster count to try (clamped to sample count minus one)
    #[arg(long, default_value_t = 10)]
    k_max: usize,
    /// Seed for k-means initialization
    #[arg(long, env = "SALIENT_ALIGN_SEED", default_value_t = 7)]
    seed: u64,
    /// Scale feature vectors to unit Euclidean norm before clustering
    #[arg(long)]
    l2_normalize: bool,
    /// Output clusters JSON
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RegisterArgs {
    /// Source image id
    #[arg(long)]
    source: String,
    /// Target image id
    #[arg(long)]
    target: String,
    /// Clusters JSON from `cluster`
    #[arg(long)]
    clusters: PathBuf,
    /// Dataset manifest JSON
    #[arg(long)]
    manifest: PathBuf,
    /// Cluster labels of the two structures, as structure=label pairs
    #[arg(long, default_value = "csp=0,lv=1")]
    label_map: String,
    /// Never mirror, even when the landmark orderings disagree
    #[arg(long)]
    force_no_flip: bool,
    /// Output transform JSON
    #[arg(long)]
    out: PathBuf,
    /// Also warp the source image into the target frame (.pgm or .png)
    #[arg(long)]
    warp: Option<PathBuf>,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Dataset manifest JSON (annotations required)
    #[arg(long)]
    manifest: PathBuf,
    /// Clusters JSON from `cluster`
    #[arg(long)]
    clusters: PathBuf,
    /// Cluster labels of the two structures, as structure=label pairs
    #[arg(long, default_value = "csp=0,lv=1")]
    label_map: String,
    /// Comma-separated methods: none, lr, lr-intensity, salient
    #[arg(long, default_value = "none,lr,lr-intensity,salient")]
    methods: String,
    /// Landmark match radius as a fraction of the HC long axis
    #[arg(long, default_value_t = 0.1)]
    radius: f64,
    /// Parallel workers for pairwise scoring [default: one per core]
    #[arg(long)]
    jobs: Option<usize>,
    /// Output CSV of per-pair errors
    #[arg(long)]
    out: PathBuf,
    /// Output aggregate JSON [default: the CSV path with a .json extension]
    #[arg(long)]
    json: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // --help/--version print to stdout and succeed; actual parse
            // errors go to stderr with the validation exit code
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match &cli.command {
        Command::Synth(args) => commands::synth(args),
        Command::Extract(args) => commands::extract(args),
        Command::Cluster(args) => commands::cluster(args),
        Command::Register(args) => commands::register(args),
        Command::Evaluate(args) => commands::evaluate(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e {
                CliError::Validation(_) => 1,
                CliError::Io(_) => 2,
            })
        }
    }
}
