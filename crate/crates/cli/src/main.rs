//! `flowood` command-line pipeline: synth → train → score → eval, plus
//! geometry statistics and sampling.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{ArgAction, Args, Parser, Subcommand};
use serde::Serialize;
use flowood::flow::Architecture;
use flowood::scores::ScoreMethod;

#[derive(Parser)]
#[command(name = "flowood", version, about = "Flow-based out-of-distribution detection on classifier features")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a normalizing flow to a feature directory.
    Train(TrainArgs),
    /// Write per-sample OOD scores (higher = more in-distribution).
    Score(ScoreArgs),
    /// AUROC and histograms for an ID/OOD pair of score files.
    Eval(EvalArgs),
    /// Uniformity and tolerance of a feature directory.
    Stats(StatsArgs),
    /// Draw feature vectors from a trained flow.
    Sample(SampleArgs),
    /// Generate a synthetic clustered-hypersphere benchmark.
    Synth(SynthArgs),
}

#[derive(Args, Debug, Serialize)]
pub struct TrainArgs {
    #[arg(long)]
    pub features: PathBuf,
    /// Validation features; without it 10% of --features is held out.
    #[arg(long)]
    pub val: Option<PathBuf>,
    /// OOD features evaluated at every history record.
    #[arg(long)]
    pub ood_probe: Option<PathBuf>,
    /// Model file to write.
    #[arg(long)]
    pub out: PathBuf,
    /// History CSV; defaults to history.csv next to the model.
    #[arg(long)]
    pub history: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    pub epochs: usize,
    #[arg(long, default_value_t = 1e-4)]
    pub lr: f64,
    #[arg(long, default_value_t = 10)]
    pub blocks: usize,
    #[arg(long, default_value_t = 2048)]
    pub hidden: usize,
    #[arg(long, default_value_t = 256)]
    pub batch: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = true, action = ArgAction::Set)]
    pub normalize: bool,
    #[arg(long, default_value_t = Architecture::Glow, value_parser = parse_arch)]
    pub arch: Architecture,
    #[arg(long, default_value_t = 1)]
    pub eval_every: usize,
}

#[derive(Args, Debug, Serialize)]
pub struct ScoreArgs {
    /// Flow model (fde only).
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub features: PathBuf,
    #[arg(long, value_parser = parse_method)]
    pub method: ScoreMethod,
    #[arg(long, default_value_t = 1.0)]
    pub temperature: f64,
    #[arg(long, default_value_t = 90.0)]
    pub react_percentile: f64,
    /// ID training features used to fit the ReAct clip threshold.
    #[arg(long)]
    pub id_train: Option<PathBuf>,
    /// Score normalized features (fde); must agree with the model. Defaults to
    /// the model's setting.
    #[arg(long, action = ArgAction::Set)]
    pub normalize: Option<bool>,
    /// Score file (.npy); a JSON sidecar is written beside it.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
pub struct EvalArgs {
    #[arg(long)]
    pub id_scores: PathBuf,
    #[arg(long)]
    pub ood_scores: PathBuf,
    #[arg(long, default_value_t = 50)]
    pub bins: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
pub struct StatsArgs {
    #[arg(long)]
    pub features: PathBuf,
    #[arg(long, default_value_t = 2.0)]
    pub t: f64,
    /// Seed for pair subsampling on large sets.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
pub struct SampleArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 64)]
    pub dim: usize,
    #[arg(long, default_value_t = 10)]
    pub id_clusters: usize,
    #[arg(long, default_value_t = 5)]
    pub ood_clusters: usize,
    #[arg(long, default_value_t = 1000)]
    pub per_cluster: usize,
    #[arg(long, default_value_t = 0.05)]
    pub spread: f64,
    #[arg(long, default_value_t = 10.0)]
    pub norm_mean: f64,
    #[arg(long, default_value_t = 1.0)]
    pub norm_std: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

fn parse_arch(s: &str) -> Result<Architecture, String> {
    s.parse().map_err(|e: flowood::Error| e.to_string())
}

fn parse_method(s: &str) -> Result<ScoreMethod, String> {
    s.parse().map_err(|e: flowood::Error| e.to_string())
}

fn configure_threads() -> anyhow::Result<()> {
    if let Ok(v) = std::env::var("FLOWOOD_THREADS") {
        let n: usize = v
            .parse()
            .map_err(|_| anyhow::anyhow!("FLOWOOD_THREADS must be a positive integer, got {v:?}"))?;
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<()> {
    configure_threads()?;
    match cli.command {
        Command::Train(a) => commands::train(a),
        Command::Score(a) => commands::score(a),
        Command::Eval(a) => commands::eval(a),
        Command::Stats(a) => commands::stats(a),
        Command::Sample(a) => commands::sample(a),
        Command::Synth(a) => commands::synth(a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = format!("{e:#}").replace('\n', " ");
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}
