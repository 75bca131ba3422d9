//! samwave: wavelet feature extraction, adapter tuning and the comparison
//! harnesses behind one executable.

mod cmd_analysis;
mod cmd_data;
mod cmd_train;
mod cmd_wavelet;
mod config;
mod meta;
mod selftest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "samwave",
    version,
    about = "Wavelet high-frequency features and adapter tuning for a frozen toy encoder"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Wavelet filter banks: decompose, reconstruct, inspect.
    Wavelet {
        #[command(subcommand)]
        action: cmd_wavelet::WaveletAction,
    },
    /// Extract the composite high-frequency map of an image.
    Whf(cmd_data::WhfArgs),
    /// Train two runs differing only in the feature extractor and report deltas.
    FreqAnalyze(cmd_analysis::FreqAnalyzeArgs),
    /// Generate a deterministic synthetic dataset.
    Synth(cmd_data::SynthArgs),
    /// Pretrain the encoder on the source task and freeze it.
    Pretrain(cmd_train::PretrainArgs),
    /// Adapt decoder + adapters against a frozen encoder.
    Adapt(cmd_train::AdaptArgs),
    /// Evaluate a trained model on a dataset directory.
    Eval(cmd_train::EvalArgs),
    /// Subband-selection ablation: one controlled run per variant.
    Ablate(cmd_analysis::AblateArgs),
    /// Run the built-in invariant suites.
    Selftest,
}

/// Resolve the encoder checkpoint path from the flag or the config.
fn encoder_path(
    flag: &Option<PathBuf>,
    cfg: &config::RunConfig,
) -> Result<PathBuf, samwave_core::Error> {
    if let Some(p) = flag {
        return Ok(p.clone());
    }
    if !cfg.data.encoder.is_empty() {
        return Ok(PathBuf::from(&cfg.data.encoder));
    }
    Err(samwave_core::Error::config(
        "no encoder checkpoint: pass --encoder or set data.encoder in the config",
    ))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Wavelet { action } => cmd_wavelet::run(action),
        Command::Whf(args) => cmd_data::run_whf(args),
        Command::FreqAnalyze(args) => cmd_analysis::run_freq_analyze(args),
        Command::Synth(args) => cmd_data::run_synth(args),
        Command::Pretrain(args) => cmd_train::run_pretrain(args),
        Command::Adapt(args) => cmd_train::run_adapt(args),
        Command::Eval(args) => cmd_train::run_eval(args),
        Command::Ablate(args) => cmd_analysis::run_ablate(args),
        Command::Selftest => selftest::run(),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
