//! `heatseq`: generate synthetic data, preprocess, train, evaluate and
//! predict. Exit status is 0 on success, 1 on a runtime failure and 2 on a
//! usage error.

mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use commands::UsageError;
use heatseq_core::training::DEFAULT_SEQUENCE_LEN;

#[derive(Parser, Debug)]
#[command(name = "heatseq", version, about = "Heat-stress risk classification from wearable signals")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Global {
    /// Seed for every random choice the command makes.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Worker threads (results do not depend on this).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Directory for output files.
    #[arg(long, global = true, default_value = ".")]
    pub out_dir: PathBuf,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write synthetic raw samples, the event script and reference labels.
    Generate(GenerateArgs),
    /// Clean, smooth, window, label, split and normalize raw samples.
    Preprocess(PreprocessArgs),
    /// Train a model on the training partition of an instance file.
    Train(TrainArgs),
    /// Score a checkpoint and write report.json and roc_points.csv.
    Evaluate(EvaluateArgs),
    /// Print per-sequence predictions.
    Predict(PredictArgs),
    /// Re-run the command recorded in a manifest and compare output hashes.
    Replay(ReplayArgs),
}

fn parse_rate(s: &str) -> std::result::Result<f64, String> {
    let v: f64 = s.parse().map_err(|_| format!("'{s}' is not a number"))?;
    if (0.0..=1.0).contains(&v) {
        Ok(v)
    } else {
        Err(format!("{v} is outside [0, 1]"))
    }
}

fn parse_positive(s: &str) -> std::result::Result<f64, String> {
    let v: f64 = s.parse().map_err(|_| format!("'{s}' is not a number"))?;
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(format!("{v} must be positive"))
    }
}

#[derive(Args, Debug)]
pub struct GenerateArgs {
    #[arg(long, default_value_t = 19, value_parser = clap::value_parser!(u64).range(1..))]
    pub workers: u64,
    #[arg(long, default_value_t = 5, value_parser = clap::value_parser!(u64).range(1..))]
    pub days: u64,
    /// high or paper-like.
    #[arg(long, default_value = "high")]
    pub separability: String,
    /// Expected heat events per worker per day.
    #[arg(long, default_value_t = 1.0, value_parser = parse_rate)]
    pub event_rate: f64,
    #[arg(long, default_value_t = 15.0, value_parser = parse_positive)]
    pub ramp_minutes: f64,
    #[arg(long, value_parser = parse_rate)]
    pub missing_rate: Option<f64>,
    #[arg(long, value_parser = parse_rate)]
    pub outlier_rate: Option<f64>,
    /// Seconds between samples.
    #[arg(long, default_value_t = 10.0, value_parser = parse_positive)]
    pub interval: f64,
    /// No measurement noise, missing values or outliers.
    #[arg(long)]
    pub zero_noise: bool,
    /// Low,Moderate,High shares of the baseline stress index, e.g. 0.5,0.35,0.15.
    #[arg(long)]
    pub class_balance: Option<String>,
}

#[derive(Args, Debug)]
pub struct PreprocessArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// stressband or multiparam.
    #[arg(long, default_value = "stressband")]
    pub label_mode: String,
    /// Window length in seconds.
    #[arg(long, default_value_t = 60, value_parser = clap::value_parser!(u64).range(1..))]
    pub window: u64,
    /// Instance file to write (default: OUT_DIR/instances.csv).
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value_t = 5)]
    pub max_gap: usize,
    #[arg(long, default_value_t = 3.0, value_parser = parse_positive)]
    pub z_threshold: f64,
    #[arg(long, default_value_t = 2)]
    pub smoother_half_width: usize,
    #[arg(long, default_value_t = 2)]
    pub smoother_degree: usize,
    #[arg(long, default_value_t = 0.5, value_parser = parse_rate)]
    pub min_coverage: f64,
    /// Use the stress index as a feature (default: only when it is not the label source).
    #[arg(long)]
    pub include_stress: Option<bool>,
    #[arg(long)]
    pub include_environment: bool,
    #[arg(long, default_value_t = 0.8, value_parser = parse_rate)]
    pub train_ratio: f64,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Instance file from `preprocess`.
    #[arg(long)]
    pub instances: PathBuf,
    /// lstm or lstm-am.
    #[arg(long, default_value = "lstm-am")]
    pub variant: String,
    /// Maximum epochs (default 20 for lstm, 50 for lstm-am).
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long, default_value_t = 128)]
    pub hidden: usize,
    #[arg(long, default_value_t = 2)]
    pub layers: usize,
    /// Attention projection size (default 128).
    #[arg(long)]
    pub attention_dim: Option<usize>,
    /// Windows per sequence.
    #[arg(long, default_value_t = DEFAULT_SEQUENCE_LEN)]
    pub seq_len: usize,
    #[arg(long, default_value_t = 0.001, value_parser = parse_positive)]
    pub learning_rate: f64,
    #[arg(long, default_value_t = 64)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 5)]
    pub patience: usize,
    #[arg(long, default_value_t = 0.3)]
    pub dropout: f64,
    #[arg(long, default_value_t = 0.1)]
    pub validation_fraction: f64,
    /// Checkpoint path (default: OUT_DIR/<variant>.ckpt).
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum PartitionArg {
    Train,
    Test,
    All,
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Instance file; sequences ending in the chosen partition are scored.
    #[arg(long)]
    pub test: PathBuf,
    #[arg(long, value_enum, default_value_t = PartitionArg::Test)]
    pub partition: PartitionArg,
    /// Directory for report.json and roc_points.csv (default: OUT_DIR).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct PredictArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub input: PathBuf,
    /// Append the attention weights a_1..a_T to each row.
    #[arg(long)]
    pub explain: bool,
    #[arg(long, value_enum, default_value_t = PartitionArg::All)]
    pub partition: PartitionArg,
    /// Write to a file instead of standard output.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ReplayArgs {
    manifest: PathBuf,
}

fn replay(path: &PathBuf) -> Result<bool> {
    let m = manifest::read_manifest(path)?;
    let cli = Cli::try_parse_from(&m.argv).map_err(|e| UsageError(format!("manifest arguments: {e}")))?;
    if matches!(cli.command, Command::Replay(_)) {
        bail!(UsageError("a manifest cannot record a replay".into()));
    }
    let ok = dispatch(cli, &m.argv)?;
    let mut same = true;
    for out in &m.outputs {
        let path = std::path::Path::new(&out.path);
        let now = if out.stable_sha256.is_some() {
            manifest::FileHash::without_last_column(path)?
        } else {
            manifest::FileHash::of(path)?
        };
        if now.replay_key() != out.replay_key() {
            eprintln!("mismatch: {} ({} != {})", out.path, now.replay_key(), out.replay_key());
            same = false;
        }
    }
    if same {
        println!("replay of {} reproduced {} outputs", m.command, m.outputs.len());
    }
    Ok(ok && same)
}

fn dispatch(cli: Cli, argv: &[String]) -> Result<bool> {
    if let Some(n) = cli.global.threads {
        if n == 0 {
            bail!(UsageError("--threads must be at least 1".into()));
        }
        // Fails only if a pool already exists, e.g. during replay.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let g = &cli.global;
    match &cli.command {
        Command::Generate(a) => commands::generate_cmd(g, a, argv).map(|_| true),
        Command::Preprocess(a) => commands::preprocess_cmd(g, a, argv).map(|_| true),
        Command::Train(a) => commands::train_cmd(g, a, argv),
        Command::Evaluate(a) => commands::evaluate_cmd(g, a, argv).map(|_| true),
        Command::Predict(a) => commands::predict_cmd(g, a, argv).map(|_| true),
        Command::Replay(a) => replay(&a.manifest),
    }
}

/// A closed stdout (e.g. piping into `head`) is not a failure.
fn is_broken_pipe(e: &anyhow::Error) -> bool {
    e.chain().any(|c| {
        c.downcast_ref::<std::io::Error>()
            .is_some_and(|io| io.kind() == std::io::ErrorKind::BrokenPipe)
    })
}

fn main() -> ExitCode {
    let argv: Vec<String> = std::env::args().collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match dispatch(cli, &argv) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) if is_broken_pipe(&e) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<UsageError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
