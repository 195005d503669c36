//! `sarsfe` — the pipeline's command-line surface.
//!
//! One umbrella binary with subcommands for dataset synthesis/ingestion,
//! training, feature extraction, evaluation and plotting. Exit codes:
//! 0 success, 1 usage or configuration error, 2 runtime abort.

mod commands;

use clap::{Parser, Subcommand};
use std::path::PathBuf;

#[derive(Parser)]
#[command(
    name = "sarsfe",
    version,
    about = "Self-supervised SAR feature extraction pipeline"
)]
struct Cli {
    /// Cap on worker threads (default: SARSFE_THREADS, then all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic SAR dataset with a manifest.
    Synth(SynthArgs),
    /// Index a directory of MSTAR Phoenix files into a manifest.
    IngestMstar(IngestMstarArgs),
    /// Train a student/teacher encoder pair from a run config.
    Train(TrainArgs),
    /// Extract frozen features from a checkpoint into a CSV.
    Extract(ExtractArgs),
    /// Few-shot k-NN evaluation of a feature CSV.
    EvalKnn(EvalKnnArgs),
    /// PCA baseline features computed directly from the images.
    EvalPca(EvalPcaArgs),
    /// 2-D projection of a feature CSV (CSV + SVG).
    Project(ProjectArgs),
    /// Plot one or more few-shot curve CSVs as a single SVG chart.
    Curve(CurveArgs),
}

#[derive(clap::Args)]
struct SynthArgs {
    /// Number of target classes (1 to 4).
    #[arg(long, default_value_t = 4)]
    classes: u32,
    /// Images generated per class.
    #[arg(long = "per-class")]
    per_class: u32,
    /// Image size as `H,W` (or one number for square).
    #[arg(long, value_parser = parse_size, default_value = "64,64")]
    size: (usize, usize),
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Dataset directory to create.
    #[arg(long)]
    out: PathBuf,
    /// Write into an existing non-empty directory.
    #[arg(long)]
    force: bool,
}

#[derive(clap::Args)]
struct IngestMstarArgs {
    /// Directory tree of MSTAR Phoenix files.
    #[arg(long = "in")]
    input: PathBuf,
    /// Manifest path (default `<in>/manifest.json`; must stay inside the
    /// scanned directory so relative entry paths resolve).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(clap::Args)]
struct TrainArgs {
    /// Run configuration JSON.
    #[arg(long)]
    config: PathBuf,
    /// Checkpoint directory to resume from.
    #[arg(long)]
    resume: Option<PathBuf>,
}

#[derive(clap::Args)]
struct ExtractArgs {
    /// Checkpoint directory written by `train`.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Dataset directory containing `manifest.json`.
    #[arg(long)]
    data: PathBuf,
    /// Feature CSV to write.
    #[arg(long)]
    out: PathBuf,
    /// Which of the two networks to extract with.
    #[arg(long, value_enum, default_value_t = commands::ModelChoice::Teacher)]
    model: commands::ModelChoice,
}

#[derive(clap::Args)]
struct EvalKnnArgs {
    /// Feature CSV produced by `extract` or `eval-pca`.
    #[arg(long)]
    features: PathBuf,
    /// Comma-separated labels-per-class counts.
    #[arg(long, value_delimiter = ',', default_value = "1,2,5,10")]
    shots: Vec<u32>,
    #[arg(long, default_value_t = 2)]
    k: u32,
    /// Random label subsets averaged per shot count.
    #[arg(long, default_value_t = 5)]
    repeats: u32,
    /// Distance: `cosine` or `euclidean`.
    #[arg(long, default_value = "cosine")]
    metric: String,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Curve CSV to write.
    #[arg(long)]
    out: PathBuf,
    /// Also render the curve as an SVG chart.
    #[arg(long)]
    svg: Option<PathBuf>,
}

#[derive(clap::Args)]
struct EvalPcaArgs {
    /// Dataset directory containing `manifest.json`.
    #[arg(long)]
    data: PathBuf,
    /// Square side images are resampled to before PCA.
    #[arg(long, default_value_t = 150)]
    resize: u32,
    /// Number of principal components kept.
    #[arg(long, default_value_t = 128)]
    dim: u32,
    /// Feature CSV to write.
    #[arg(long)]
    out: PathBuf,
}

#[derive(clap::Args)]
struct ProjectArgs {
    /// Feature CSV produced by `extract` or `eval-pca`.
    #[arg(long)]
    features: PathBuf,
    /// Projection CSV to write.
    #[arg(long)]
    out: PathBuf,
    /// SVG scatter path (default: the CSV path with an .svg extension).
    #[arg(long)]
    svg: Option<PathBuf>,
    #[arg(long, default_value_t = 30.0)]
    perplexity: f64,
    #[arg(long, default_value_t = 1000)]
    iters: u32,
    #[arg(long = "learning-rate", default_value_t = 200.0)]
    learning_rate: f64,
    #[arg(long, default_value_t = 42)]
    seed: u64,
}

#[derive(clap::Args)]
struct CurveArgs {
    /// Curve CSV to plot, as `name=path`. Repeat to overlay curves.
    #[arg(long = "input", required = true)]
    inputs: Vec<String>,
    /// SVG chart to write.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "Few-shot accuracy")]
    title: String,
}

/// `H,W` or a single `N` meaning `N,N`.
fn parse_size(s: &str) -> Result<(usize, usize), String> {
    let parse = |p: &str| p.trim().parse::<usize>().map_err(|e| format!("`{p}`: {e}"));
    match s.split_once(',') {
        Some((h, w)) => Ok((parse(h)?, parse(w)?)),
        None => parse(s).map(|n| (n, n)),
    }
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version requests land here too; only real parse
            // failures are usage errors.
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    let result = commands::configure_threads(cli.threads).and_then(|()| match cli.command {
        Command::Synth(args) => commands::synth(args),
        Command::IngestMstar(args) => commands::ingest_mstar(args),
        Command::Train(args) => commands::train(args),
        Command::Extract(args) => commands::extract(args),
        Command::EvalKnn(args) => commands::eval_knn(args),
        Command::EvalPca(args) => commands::eval_pca(args),
        Command::Project(args) => commands::project(args),
        Command::Curve(args) => commands::curve(args),
    });
    if let Err(e) = result {
        eprintln!("error: {e}");
        std::process::exit(if e.is_usage() { 1 } else { 2 });
    }
}
