//! `samwave pretrain`, `samwave adapt` and `samwave eval`.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::Args;
use samwave_core::checkpoint::{load_encoder, load_model, save_encoder, save_model};
use samwave_core::error::{Error, Result};
use samwave_core::objectives::MetricsReport;
use samwave_core::synthdata::{generate, load_dataset, load_manifest, SynthSample, Task};
use samwave_core::train::{adapt_train, evaluate, pretrain_encoder, TrainLogRow};

use crate::config::{load_config, RunConfig};
use crate::meta::MetaWriter;

#[derive(Args)]
pub struct PretrainArgs {
    /// Run configuration (TOML).
    #[arg(long)]
    pub config: PathBuf,
    /// Output encoder checkpoint directory.
    #[arg(long)]
    pub out: PathBuf,
}

fn load_or_default_source(cfg: &RunConfig) -> Result<(Vec<SynthSample>, Vec<SynthSample>)> {
    if cfg.data.train.is_empty() {
        // no dataset configured: generate the default source split in memory
        let seed = cfg.pretrain.seed;
        let size = cfg.encoder.image_size;
        Ok((
            generate(Task::Blobs, seed.wrapping_add(100), 200, size)?,
            generate(Task::Blobs, seed.wrapping_add(900), 50, size)?,
        ))
    } else {
        let train = load_dataset(&cfg.data.train)?;
        let heldout = if cfg.data.test.is_empty() {
            generate(Task::Blobs, cfg.pretrain.seed.wrapping_add(900), 50, cfg.encoder.image_size)?
        } else {
            load_dataset(&cfg.data.test)?
        };
        Ok((train, heldout))
    }
}

pub fn run_pretrain(args: PretrainArgs) -> Result<()> {
    let meta = MetaWriter::start();
    let cfg = load_config(&args.config)?;
    let (train, heldout) = load_or_default_source(&cfg)?;
    let pcfg = cfg.pretrain.to_pretrain_config(cfg.encoder.to_encoder_config());
    let outcome = pretrain_encoder(&train, &heldout, &pcfg)?;
    save_encoder(&args.out, &outcome.encoder)?;
    println!(
        "pretrained encoder frozen at {} (source-task mIoU {:.3})",
        args.out.display(),
        outcome.source_miou
    );
    meta.write(&args.out, &serde_json::to_value(&cfg)?, pcfg.seed)
}

#[derive(Args)]
pub struct AdaptArgs {
    /// Frozen encoder checkpoint directory.
    #[arg(long)]
    pub encoder: Option<PathBuf>,
    /// Run configuration (TOML).
    #[arg(long)]
    pub config: PathBuf,
    /// Output model checkpoint directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Training log (JSON lines: step, epoch, loss, lr).
    #[arg(long)]
    pub log: Option<PathBuf>,
}

pub fn require_dataset(dir: &str, what: &str) -> Result<Vec<SynthSample>> {
    if dir.is_empty() {
        return Err(Error::config(format!(
            "no {what} dataset: set data.{what} in the config (generate one with `samwave synth`)"
        )));
    }
    load_dataset(dir)
}

fn write_log(path: &Path, log: &[TrainLogRow]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    for row in log {
        serde_json::to_writer(&mut f, row)?;
        f.write_all(b"\n")?;
    }
    Ok(())
}

pub fn run_adapt(args: AdaptArgs) -> Result<()> {
    let meta = MetaWriter::start();
    let cfg = load_config(&args.config)?;
    let encoder = load_encoder(crate::encoder_path(&args.encoder, &cfg)?)?;
    let train = require_dataset(&cfg.data.train, "train")?;
    let task = load_manifest(&cfg.data.train)?.task;
    let tcfg = cfg.train.to_train_config(task)?;
    let outcome = adapt_train(&train, &encoder, &tcfg)?;
    save_model(&args.out, &outcome.model)?;
    if let Some(log_path) = &args.log {
        write_log(log_path, &outcome.log)?;
    }
    let last = outcome.log.last().map(|r| r.loss).unwrap_or(f64::NAN);
    println!(
        "adapted model at {} ({} steps, final loss {last:.4})",
        args.out.display(),
        outcome.log.len()
    );
    meta.write(&args.out, &serde_json::to_value(&cfg)?, tcfg.seed)
}

#[derive(Args)]
pub struct EvalArgs {
    /// Trained model checkpoint directory.
    #[arg(long)]
    pub model: PathBuf,
    /// Dataset directory to evaluate.
    #[arg(long)]
    pub data: PathBuf,
    /// Output report (JSON).
    #[arg(long)]
    pub report: PathBuf,
}

pub fn run_eval(args: EvalArgs) -> Result<()> {
    let meta = MetaWriter::start();
    if !args.model.join("manifest.json").is_file() {
        return Err(Error::config(format!(
            "model checkpoint not found at {}",
            args.model.display()
        )));
    }
    let model = load_model(&args.model)?;
    let samples = load_dataset(&args.data)?;
    let manifest = load_manifest(&args.data)?;
    let name = args
        .data
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| manifest.task.to_string());
    let (agg, _) = evaluate(&model, &samples, &name)?;
    let seed = model.train_config.as_ref().map(|c| c.seed).unwrap_or(0);
    let report = MetricsReport {
        datasets: vec![agg],
        config: serde_json::to_value(&model.train_config)?,
        seed,
        git_describe: None,
    };
    std::fs::write(&args.report, serde_json::to_vec_pretty(&report)?)?;
    println!(
        "evaluated {} images; report at {}",
        samples.len(),
        args.report.display()
    );
    meta.write(&args.report, &report.config, seed)
}
