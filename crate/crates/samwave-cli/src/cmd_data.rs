//! `samwave synth` and `samwave whf`.

use std::path::PathBuf;

use clap::Args;
use samwave_core::error::{Error, Result};
use samwave_core::freqfeat::{whf_extract, WhfValues, WhfWavelet};
use samwave_core::synthdata::{decode_rgb8, generate, save_dataset, Task};
use samwave_core::wvt1;

use crate::meta::MetaWriter;

#[derive(Args)]
pub struct SynthArgs {
    /// Task: camouflage, defocus, shadow or blobs.
    #[arg(long)]
    pub task: String,
    #[arg(long)]
    pub seed: u64,
    /// Number of samples.
    #[arg(long)]
    pub n: usize,
    /// Square image size in pixels.
    #[arg(long, default_value_t = 64)]
    pub size: usize,
    /// Output dataset directory.
    #[arg(long)]
    pub out: PathBuf,
}

pub fn run_synth(args: SynthArgs) -> Result<()> {
    let meta = MetaWriter::start();
    let task = Task::parse(&args.task)?;
    let samples = generate(task, args.seed, args.n, args.size)?;
    save_dataset(&args.out, &samples)?;
    println!(
        "wrote {} {} samples ({}x{}) to {}",
        args.n,
        task,
        args.size,
        args.size,
        args.out.display()
    );
    let config = serde_json::json!({
        "task": task, "seed": args.seed, "n": args.n, "size": args.size,
    });
    meta.write(&args.out, &config, args.seed)
}

#[derive(Args)]
pub struct WhfArgs {
    /// Input PNG image (8-bit RGB).
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Wavelet: haar, db2, coif2, sym4, sy-a or sy-b.
    #[arg(long)]
    pub wavelet: String,
    /// Output WVT1 tensor; complex wavelets write `.re.wvt1` and `.im.wvt1`.
    #[arg(long)]
    pub out: PathBuf,
}

pub fn run_whf(args: WhfArgs) -> Result<()> {
    let meta = MetaWriter::start();
    let bytes = std::fs::read(&args.input)
        .map_err(|e| Error::config(format!("cannot read {}: {e}", args.input.display())))?;
    let image = decode_rgb8(&bytes)?;
    let wavelet = WhfWavelet::parse(&args.wavelet)?;
    let map = whf_extract(&image, wavelet)?;
    match &map.values {
        WhfValues::Real(t) => {
            wvt1::save_tensor(&args.out, t)?;
            println!("wrote real high-frequency map to {}", args.out.display());
        }
        WhfValues::Complex(z) => {
            let stem = args
                .out
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "hf".into());
            let re_path = args.out.with_file_name(format!("{stem}.re.wvt1"));
            let im_path = args.out.with_file_name(format!("{stem}.im.wvt1"));
            wvt1::save_tensor(&re_path, &z.re)?;
            wvt1::save_tensor(&im_path, &z.im)?;
            println!(
                "wrote complex high-frequency map to {} and {}",
                re_path.display(),
                im_path.display()
            );
        }
    }
    let config = serde_json::json!({"wavelet": args.wavelet});
    meta.write(&args.out, &config, 0)
}
