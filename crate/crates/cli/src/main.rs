//! `skywatch` command-line pipelines.

mod commands;
mod manifest;
mod settings;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "skywatch", version, about = "Detect decision uncertainty in UAV flight logs")]
pub struct Cli {
    /// Random seed for training and synthesis [default: 42].
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory [default: out].
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Flat TOML file whose keys mirror the flags (`window_s = 5.0`).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Turn flight logs into a windowed heading dataset.
    Preprocess(PreprocessArgs),
    /// Train the autoencoder on the nominal windows of a dataset.
    Train(TrainArgs),
    /// Suggest a threshold from nominal reconstruction losses.
    Calibrate(CalibrateArgs),
    /// Score flights and raise uncertainty alarms.
    Detect(DetectArgs),
    /// Compare detections with ground-truth labels.
    Evaluate(EvaluateArgs),
    /// Fitness of one test case from the logs of its executions.
    Fitness(FitnessArgs),
    /// Generate a labeled synthetic flight dataset.
    Synth(SynthArgs),
}

#[derive(Debug, Args, Default)]
pub struct WindowArgs {
    /// Window length, seconds [default: 5].
    #[arg(long)]
    pub window_s: Option<f64>,
    /// Overlap between consecutive windows, seconds [default: 2.5].
    #[arg(long)]
    pub overlap_s: Option<f64>,
    /// Resampling rate, Hz [default: 5].
    #[arg(long)]
    pub rate_hz: Option<f64>,
}

#[derive(Debug, Args, Default)]
pub struct NominalArgs {
    /// Nominal windows keep obstacles farther than this, meters [default: 3].
    #[arg(long)]
    pub nominal_dist: Option<f64>,
    /// Look-ahead past a window's end for the nominal check, seconds [default: 50].
    #[arg(long)]
    pub lookahead_s: Option<f64>,
}

#[derive(Debug, Args)]
pub struct PreprocessArgs {
    /// Directory of flight log CSV files.
    #[arg(long)]
    pub logs: Option<PathBuf>,
    /// Obstacle JSON; enables distance annotations.
    #[arg(long)]
    pub obstacles: Option<PathBuf>,
    /// Labels CSV to copy into the windowed rows.
    #[arg(long)]
    pub labels: Option<PathBuf>,
    /// Fail unless an obstacle file is given.
    #[arg(long)]
    pub require_distances: bool,
    #[command(flatten)]
    pub window: WindowArgs,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Windowed dataset CSV.
    #[arg(long)]
    pub windows: Option<PathBuf>,
    #[command(flatten)]
    pub nominal: NominalArgs,
    /// Maximum training epochs [default: 300].
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Mini-batch size [default: 128].
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Adam learning rate [default: 0.001].
    #[arg(long)]
    pub learning_rate: Option<f64>,
    /// Early-stopping patience, epochs [default: 20].
    #[arg(long)]
    pub patience: Option<usize>,
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    /// Model file.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Windowed dataset CSV; only its nominal windows are scored.
    #[arg(long)]
    pub windows: Option<PathBuf>,
    #[command(flatten)]
    pub nominal: NominalArgs,
    /// Loss quantile used as the suggested threshold [default: 0.999].
    #[arg(long)]
    pub quantile: Option<f64>,
    /// Store this threshold in the model metadata and write the model to the output directory.
    #[arg(long)]
    pub set_threshold: Option<f64>,
}

#[derive(Debug, Args)]
pub struct DetectArgs {
    /// Model file.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Flight log CSV; repeatable.
    #[arg(long = "log")]
    pub log: Vec<PathBuf>,
    /// Directory of flight log CSV files.
    #[arg(long)]
    pub logs: Option<PathBuf>,
    /// Windowed dataset CSV.
    #[arg(long)]
    pub windows: Option<PathBuf>,
    /// Read a windowed dataset from standard input and print alarms as they occur.
    #[arg(long)]
    pub stream: bool,
    /// Obstacle JSON for lead-time analysis of logs.
    #[arg(long)]
    pub obstacles: Option<PathBuf>,
    /// Alarm threshold [default: the model's, else 0.3].
    #[arg(long)]
    pub threshold: Option<f64>,
    /// Windows in the rolling mean [default: 4].
    #[arg(long)]
    pub n_consecutive: Option<usize>,
    /// Distance that counts as a near-collision, meters [default: 1].
    #[arg(long)]
    pub critical_distance: Option<f64>,
    #[command(flatten)]
    pub window: WindowArgs,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Directory of detection report JSON files.
    #[arg(long)]
    pub reports: Option<PathBuf>,
    /// Labels CSV.
    #[arg(long)]
    pub labels: Option<PathBuf>,
    /// Axis of the headline metrics: certainty or safety [default: certainty].
    #[arg(long)]
    pub ground_truth: Option<String>,
    /// Confidence level of the Wilson intervals [default: 0.95].
    #[arg(long)]
    pub gamma: Option<f64>,
}

#[derive(Debug, Args)]
pub struct FitnessArgs {
    /// Log CSV files of the executions of one test case.
    pub executions: Vec<PathBuf>,
    /// Directory holding the execution logs instead.
    #[arg(long)]
    pub logs: Option<PathBuf>,
    /// Obstacle JSON.
    #[arg(long)]
    pub obstacles: Option<PathBuf>,
    /// Divergence above which DTW enters the fitness [default: 65].
    #[arg(long)]
    pub max_dtw: Option<f64>,
    /// Points per trajectory after arc-length resampling [default: 200].
    #[arg(long)]
    pub resample_n: Option<usize>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Flights per class: certain-safe,uncertain-safe,uncertain-unsafe,certain-unsafe [default: 50,50,50,50].
    #[arg(long)]
    pub counts: Option<String>,
    /// Flight duration, seconds [default: 300].
    #[arg(long)]
    pub duration_s: Option<f64>,
    /// Log sample rate, Hz [default: 5].
    #[arg(long)]
    pub rate_hz: Option<f64>,
    /// Heading noise standard deviation, degrees [default: 1].
    #[arg(long)]
    pub noise_std: Option<f64>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(cli) {
        Ok(manifest) if manifest.failures.is_empty() => ExitCode::SUCCESS,
        Ok(manifest) => {
            eprintln!("{} item(s) failed", manifest.failures.len());
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
