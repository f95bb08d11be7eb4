//! `audiohash` — synth | features | train | index | query | eval.
//!
//! Exit codes: 0 success, 1 usage, 2 data error, 3 internal error.
//! stdout carries machine-readable results only; diagnostics go to stderr.

mod commands;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "audiohash", version, about = "Supervised audio hashing and Hamming retrieval")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a labeled synthetic audio corpus with a manifest
    Synth(SynthArgs),
    /// Extract a feature archive from a manifest of WAV files
    Features(FeaturesArgs),
    /// Train a hashing encoder on a feature archive
    Train(TrainArgs),
    /// Encode an archive with a checkpoint and build the retrieval index
    Index(IndexArgs),
    /// Rank the index against one audio query
    Query(QueryArgs),
    /// Score retrieval quality under the standard or zero-shot protocol
    Eval(EvalArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// Output directory for WAV files and manifest.csv
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 8)]
    classes: usize,
    #[arg(long, default_value_t = 40)]
    per_class: usize,
    /// Per-class clip counts (overrides --per-class), e.g. 10,90
    #[arg(long, value_delimiter = ',')]
    class_sizes: Option<Vec<usize>>,
    /// Clip duration in seconds
    #[arg(long, default_value_t = 2.0)]
    duration: f64,
    #[arg(long, default_value_t = 42)]
    seed: u64,
}

#[derive(Args)]
struct FeaturesArgs {
    /// Manifest CSV with header `path,label`; relative paths resolve
    /// against the manifest's directory
    #[arg(long)]
    manifest: PathBuf,
    /// Output feature archive
    #[arg(long)]
    out: PathBuf,
    /// Fuse three analysis windows (false replicates the short window)
    #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
    multi_window: bool,
}

#[derive(Args)]
struct TrainArgs {
    /// Input feature archive
    #[arg(long)]
    features: PathBuf,
    /// Output checkpoint path
    #[arg(long)]
    out: PathBuf,
    /// Training config TOML; flags override file values
    #[arg(long)]
    config: Option<PathBuf>,
    /// Per-epoch CSV log (epoch,loss,map100)
    #[arg(long)]
    log: Option<PathBuf>,
    #[arg(long, value_parser = parse_bits)]
    bits: Option<u32>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    margin: Option<f64>,
    /// wcl or tcl
    #[arg(long)]
    loss_mode: Option<String>,
    #[arg(long, action = clap::ArgAction::Set)]
    multi_window: Option<bool>,
    /// Encoder preset ("default", "tiny") or a full descriptor
    #[arg(long)]
    arch: Option<String>,
    /// Fraction of classes held out from training (zero-shot protocol)
    #[arg(long)]
    zero_shot_fraction: Option<f64>,
}

#[derive(Args)]
struct IndexArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    features: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct QueryArgs {
    #[arg(long)]
    index: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Query WAV file
    #[arg(long)]
    audio: PathBuf,
    /// Number of results
    #[arg(long, default_value_t = 10, value_parser = clap::value_parser!(u64).range(1..))]
    k: u64,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    index: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    features: PathBuf,
    /// standard or zero-shot
    #[arg(long, default_value = "standard")]
    protocol: String,
    #[arg(long, default_value_t = 100, value_parser = clap::value_parser!(u64).range(1..))]
    k: u64,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Fraction of classes treated as unseen under zero-shot
    #[arg(long, default_value_t = 0.3)]
    zero_shot_fraction: f64,
    /// Write the summary CSV here as well as stdout
    #[arg(long)]
    report: Option<PathBuf>,
    /// Write the per-query CSV here
    #[arg(long)]
    per_query: Option<PathBuf>,
}

fn parse_bits(s: &str) -> Result<u32, String> {
    let v: u32 = s.parse().map_err(|_| format!("{s} is not a number"))?;
    audiohash::codec::validate_bits(v).map_err(|e| e.to_string())?;
    Ok(v)
}

fn exit_code_for(err: &audiohash::Error) -> u8 {
    use audiohash::Error::*;
    match err {
        BackwardTwice | NonScalarRoot(_) => 3,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // help/version are successful exits; everything else is usage
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.cmd {
        Cmd::Synth(args) => commands::synth(args),
        Cmd::Features(args) => commands::features(args),
        Cmd::Train(args) => commands::train(args),
        Cmd::Index(args) => commands::index(args),
        Cmd::Query(args) => commands::query(args),
        Cmd::Eval(args) => commands::eval(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}
