//! `samwave freq-analyze` and `samwave ablate`.

use std::path::PathBuf;

use clap::Args;
use samwave_core::analysis::{ablate, freq_analysis};
use samwave_core::checkpoint::load_encoder;
use samwave_core::error::Result;
use samwave_core::synthdata::load_manifest;
use samwave_core::train::TrainConfig;
use samwave_core::wavelets::WaveletName;

use crate::config::load_config;
use crate::meta::MetaWriter;

#[derive(Args)]
pub struct FreqAnalyzeArgs {
    /// Run configuration (TOML) with an [analysis] section.
    #[arg(long)]
    pub config: PathBuf,
    /// Frozen encoder checkpoint; overrides data.encoder from the config.
    #[arg(long)]
    pub encoder: Option<PathBuf>,
    /// Output delta table (JSON).
    #[arg(long)]
    pub out: PathBuf,
}

fn base_train_config(
    cfg: &crate::config::RunConfig,
    task: samwave_core::synthdata::Task,
) -> Result<TrainConfig> {
    let mut tcfg = cfg.train.to_train_config(task)?;
    tcfg.feature = None; // the harness installs each extractor itself
    Ok(tcfg)
}

pub fn run_freq_analyze(args: FreqAnalyzeArgs) -> Result<()> {
    let meta = MetaWriter::start();
    let cfg = load_config(&args.config)?;
    let encoder = load_encoder(crate::encoder_path(&args.encoder, &cfg)?)?;
    let train = crate::cmd_train::require_dataset(&cfg.data.train, "train")?;
    let test = crate::cmd_train::require_dataset(&cfg.data.test, "test")?;
    let task = load_manifest(&cfg.data.train)?.task;
    let test_name = load_manifest(&cfg.data.test)?.task.to_string();
    let a = cfg.analysis.extractor("a")?;
    let b = cfg.analysis.extractor("b")?;
    let tcfg = base_train_config(&cfg, task)?;
    let report = freq_analysis(&train, &[(test_name, test)], &encoder, &a, &b, &tcfg)?;
    std::fs::write(&args.out, serde_json::to_vec_pretty(&report)?)?;
    println!(
        "extractor comparison {} vs {}: mean |delta| = {:.4}; table at {}",
        report.extractor_a,
        report.extractor_b,
        report.mean_abs_delta,
        args.out.display()
    );
    meta.write(&args.out, &serde_json::to_value(&cfg)?, tcfg.seed)
}

#[derive(Args)]
pub struct AblateArgs {
    /// Run configuration (TOML) with an [ablate] section.
    #[arg(long)]
    pub config: PathBuf,
    /// Frozen encoder checkpoint; overrides data.encoder from the config.
    #[arg(long)]
    pub encoder: Option<PathBuf>,
    /// Output ablation table (JSON).
    #[arg(long)]
    pub out: PathBuf,
}

pub fn run_ablate(args: AblateArgs) -> Result<()> {
    let meta = MetaWriter::start();
    let cfg = load_config(&args.config)?;
    let encoder = load_encoder(crate::encoder_path(&args.encoder, &cfg)?)?;
    let train = crate::cmd_train::require_dataset(&cfg.data.train, "train")?;
    let test = crate::cmd_train::require_dataset(&cfg.data.test, "test")?;
    let task = load_manifest(&cfg.data.train)?.task;
    let wavelet = WaveletName::parse(&cfg.ablate.wavelet)?;
    let tcfg = base_train_config(&cfg, task)?;
    let report = ablate(&train, &test, &encoder, &tcfg, wavelet)?;
    std::fs::write(&args.out, serde_json::to_vec_pretty(&report)?)?;
    println!("ablation over {} variants; table at {}", report.rows.len(), args.out.display());
    for row in &report.rows {
        println!("  {:<12} mIoU {:.3} mDice {:.3}", row.variant, row.metrics.miou, row.metrics.mdice);
    }
    meta.write(&args.out, &serde_json::to_value(&cfg)?, tcfg.seed)
}
