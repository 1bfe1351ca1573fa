//! `atal`: the command-line pipeline from synthetic corpus to evaluation report.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "atal", version, about = "Anchor-free temporal action localization pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a seeded synthetic corpus on disk.
    Synth(SynthArgs),
    /// Train one model per behavior class.
    Train(TrainArgs),
    /// Run checkpoints over a corpus and write a predictions file.
    Infer(InferArgs),
    /// Score a predictions file against ground truth.
    Eval(EvalArgs),
}

#[derive(Args)]
struct Common {
    /// TOML run configuration; flags override its values.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Master seed; every component seed is derived from it [default: per-section seeds, all 0].
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
pub struct SynthArgs {
    /// Output corpus directory.
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    /// Number of videos [default: 50].
    #[arg(long)]
    videos: Option<usize>,
    /// Feature timesteps per video [default: 84].
    #[arg(long)]
    steps: Option<usize>,
    /// Feature dimension [default: 32].
    #[arg(long)]
    dim: Option<usize>,
    /// Signature amplitude relative to unit noise; 0 gives pure noise [default: 4].
    #[arg(long)]
    snr: Option<f64>,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
pub struct TrainArgs {
    /// Corpus directory.
    #[arg(long, value_name = "DIR")]
    data: PathBuf,
    /// Behavior class (look_face, look_object, smile, vocal) or `all`.
    #[arg(long, value_name = "NAME")]
    class: String,
    /// Run directory that receives checkpoints and logs.
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    /// Training epochs [default: 100].
    #[arg(long)]
    epochs: Option<usize>,
    /// Videos per mini-batch [default: 10].
    #[arg(long)]
    batch_size: Option<usize>,
    /// Initial SGD learning rate [default: 0.001].
    #[arg(long)]
    lr: Option<f64>,
    #[command(flatten)]
    common: Common,
}

#[derive(Clone, Copy, ValueEnum)]
pub enum SplitArg {
    Train,
    Test,
    All,
}

#[derive(Args)]
pub struct InferArgs {
    /// Checkpoint files, or run directories holding `checkpoint-*.atal`.
    #[arg(long, value_name = "PATH", required = true, num_args = 1..)]
    ckpt: Vec<PathBuf>,
    /// Corpus directory.
    #[arg(long, value_name = "DIR")]
    data: PathBuf,
    /// Videos to run on [default: test when the manifest has splits, otherwise all].
    #[arg(long, value_enum)]
    split: Option<SplitArg>,
    /// Decision threshold on the event probability [default: 0.4].
    #[arg(long)]
    threshold: Option<f64>,
    /// Suppression mode: hard, soft-linear or soft-gaussian [default: hard].
    #[arg(long)]
    nms: Option<String>,
    /// Suppression t-IoU threshold [default: 0.5].
    #[arg(long)]
    nms_iou: Option<f64>,
    /// Predictions file to write.
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
pub struct EvalArgs {
    /// Predictions file.
    #[arg(long, value_name = "FILE")]
    pred: PathBuf,
    /// Ground-truth corpus directory.
    #[arg(long, value_name = "DIR")]
    gt: PathBuf,
    /// Comma-separated t-IoU thresholds [default: 0.1,0.3,0.5,0.7].
    #[arg(long, value_delimiter = ',')]
    tiou: Option<Vec<f64>>,
    /// JSON report to write; a plain-text rendering goes next to it with a `.txt` extension.
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
    #[command(flatten)]
    common: Common,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth(a) => commands::synth(a),
        Command::Train(a) => commands::train(a),
        Command::Infer(a) => commands::infer(a),
        Command::Eval(a) => commands::eval(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
