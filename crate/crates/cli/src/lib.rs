//! Argument definitions and command bodies of the `bigcodec` binary.

pub mod commands;
pub mod wav;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "bigcodec", version, about = "Low-bitrate neural speech codec")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a generator and discriminators, writing a checkpoint and metrics log.
    Train(TrainArgs),
    /// Compress a 16 kHz mono WAV into a .bgc stream.
    Encode(EncodeArgs),
    /// Reconstruct a WAV from a .bgc stream.
    Decode(DecodeArgs),
    /// Pooled code statistics and bitrates of one or more streams.
    Analyze(AnalyzeArgs),
    /// Run the finite-difference gradient suites.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Args)]
#[command(group = clap::ArgGroup::new("source").required(true).args(["data", "synthetic"]))]
pub struct TrainArgs {
    /// Directory of 16-bit mono WAV files.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Generate this many synthetic signals instead of reading WAVs.
    #[arg(long)]
    pub synthetic: Option<usize>,
    #[arg(long, default_value = "toy", value_parser = ["toy", "base", "big"])]
    pub preset: String,
    /// Quantize in the latent space itself instead of a projected one.
    #[arg(long)]
    pub full_width: bool,
    #[arg(long, default_value_t = 1000)]
    pub steps: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 8)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 1.0)]
    pub segment_seconds: f64,
    #[arg(long, default_value_t = 1)]
    pub log_interval: u64,
    /// Checkpoint path.
    #[arg(long)]
    pub out: PathBuf,
    /// Metrics log path, `<out>.metrics` by default.
    #[arg(long)]
    pub metrics: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EncodeArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Print wall-clock time and real-time factor.
    #[arg(long)]
    pub time: bool,
}

#[derive(Debug, Args)]
pub struct DecodeArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub time: bool,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    #[arg(long = "in", required = true, num_args = 1..)]
    pub inputs: Vec<PathBuf>,
    /// Also write the report to this file.
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Reference WAVs, one per stream, for mel-cepstral distortion.
    #[arg(long = "ref", num_args = 1.., requires = "ckpt")]
    pub refs: Vec<PathBuf>,
    /// Checkpoint used to decode the streams when references are given.
    #[arg(long)]
    pub ckpt: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Module {
    All,
    NdCore,
    Quantizer,
    Dsp,
    Model,
    Adversary,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, value_enum, default_value_t = Module::All)]
    pub module: Module,
    #[arg(long, default_value_t = 1e-4)]
    pub tol: f64,
    /// Seeds per suite; each seed redraws every shape and value.
    #[arg(long, default_value_t = 20)]
    pub seeds: u64,
}

/// Runs one command; `Ok(false)` means it completed but reported failures.
pub fn run(cli: Cli) -> anyhow::Result<bool> {
    match cli.command {
        Command::Train(a) => commands::train(&a).map(|_| true),
        Command::Encode(a) => commands::encode(&a).map(|_| true),
        Command::Decode(a) => commands::decode(&a).map(|_| true),
        Command::Analyze(a) => commands::analyze(&a).map(|_| true),
        Command::Gradcheck(a) => commands::gradcheck(&a),
    }
}
