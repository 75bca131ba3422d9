//! `samwave wavelet {decompose, reconstruct, info}`.

use std::path::{Path, PathBuf};

use clap::{Args, Subcommand};
use samwave_core::dtcwt::{dtcwt2_level1, dtcwt_filters, DtcwtName};
use samwave_core::error::{Error, Result};
use samwave_core::synthdata::decode_rgb8;
use samwave_core::tensor::Tensor;
use samwave_core::wavelets::{
    build_2d_kernels, dwt2, filter_bank, iwt2, SubbandSet, WaveletName,
};
use samwave_core::wvt1;

use crate::meta::MetaWriter;

#[derive(Subcommand)]
pub enum WaveletAction {
    /// Single-level decomposition of a PNG image into subband tensors.
    Decompose(DecomposeArgs),
    /// Invert a real decomposition back to a PNG image.
    Reconstruct(ReconstructArgs),
    /// Print a bank's filter coefficients and invariant checks.
    Info(InfoArgs),
}

#[derive(Args)]
pub struct DecomposeArgs {
    /// Input PNG image (8-bit RGB).
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Wavelet family: haar, db2, coif2, sym4 (real) or sy-a, sy-b (complex).
    #[arg(long)]
    pub bank: String,
    /// Output: real banks write four records into this file; complex banks
    /// write one .b{0..5}.{re,im}.wvt1 file per oriented subband next to it.
    #[arg(long)]
    pub out: PathBuf,
    /// Use the dual-tree complex transform (bank must be sy-a or sy-b).
    #[arg(long)]
    pub complex: bool,
}

#[derive(Args)]
pub struct ReconstructArgs {
    /// A four-record subband file produced by `wavelet decompose`.
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Wavelet family that produced the subbands.
    #[arg(long)]
    pub bank: String,
    /// Output PNG image.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct InfoArgs {
    #[arg(long)]
    pub bank: String,
}

pub fn run(action: WaveletAction) -> Result<()> {
    match action {
        WaveletAction::Decompose(args) => decompose(args),
        WaveletAction::Reconstruct(args) => reconstruct(args),
        WaveletAction::Info(args) => info(args),
    }
}

fn read_image(path: &Path) -> Result<Tensor> {
    let bytes = std::fs::read(path)
        .map_err(|e| Error::config(format!("cannot read {}: {e}", path.display())))?;
    decode_rgb8(&bytes)
}

fn stem_with(path: &Path, suffix: &str) -> PathBuf {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "out".into());
    path.with_file_name(format!("{stem}{suffix}"))
}

fn decompose(args: DecomposeArgs) -> Result<()> {
    let meta = MetaWriter::start();
    let image = read_image(&args.input)?;
    let is_complex_bank = DtcwtName::parse(&args.bank).is_ok();
    if args.complex || is_complex_bank {
        if !args.complex || !is_complex_bank {
            return Err(Error::config(
                "complex decomposition needs both --complex and a complex bank (sy-a, sy-b)",
            ));
        }
        let filters = dtcwt_filters(&args.bank)?;
        let sub = dtcwt2_level1(&image, &filters)?;
        for (i, z) in sub.oriented.iter().enumerate() {
            wvt1::save_tensor(stem_with(&args.out, &format!(".b{i}.re.wvt1")), &z.re)?;
            wvt1::save_tensor(stem_with(&args.out, &format!(".b{i}.im.wvt1")), &z.im)?;
        }
        println!(
            "wrote 6 oriented complex subbands ({}) as 12 WVT1 tensors next to {}",
            args.bank,
            args.out.display()
        );
    } else {
        let bank = filter_bank(&args.bank)?;
        let sub = dwt2(&image, &bank)?;
        wvt1::save_tensors(&args.out, &[&sub.ll, &sub.lh, &sub.hl, &sub.hh])?;
        println!(
            "wrote ll, lh, hl, hh ({}) to {}",
            args.bank,
            args.out.display()
        );
    }
    let config = serde_json::json!({"bank": args.bank, "complex": args.complex});
    meta.write(&args.out, &config, 0)
}

fn reconstruct(args: ReconstructArgs) -> Result<()> {
    let meta = MetaWriter::start();
    let bank = filter_bank(&args.bank)?;
    // refuse a bank that contradicts the decompose-time sidecar
    let side = args.input.with_file_name(format!(
        "{}.meta.json",
        args.input
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default()
    ));
    if let Ok(bytes) = std::fs::read(&side) {
        if let Ok(doc) = serde_json::from_slice::<serde_json::Value>(&bytes) {
            if let Some(recorded) = doc.pointer("/config/bank").and_then(|v| v.as_str()) {
                if WaveletName::parse(recorded).ok() != Some(bank.name) {
                    return Err(Error::contract(format!(
                        "subbands were produced with bank '{recorded}', not '{}'",
                        args.bank
                    )));
                }
            }
        }
    }
    let bands = wvt1::load_tensors(&args.input, 4)?;
    let [ll, lh, hl, hh]: [Tensor; 4] = bands
        .try_into()
        .map_err(|_| Error::Format("expected four subband records".into()))?;
    let (sh, sw, c) = match *ll.shape() {
        [h, w, c] => (h, w, c),
        ref s => return Err(Error::shape(format!("subband shape {s:?}"))),
    };
    let sub = SubbandSet {
        ll,
        lh,
        hl,
        hh,
        source_shape: (2 * sh, 2 * sw, c),
        bank_name: bank.name,
    };
    let image = iwt2(&sub, &bank)?;
    let clamped = image.map(|v| v.clamp(0.0, 1.0));
    let png = samwave_core::synthdata::encode_rgb8(&clamped)?;
    std::fs::write(&args.out, png)?;
    println!("reconstructed {}", args.out.display());
    let config = serde_json::json!({"bank": args.bank});
    meta.write(&args.out, &config, 0)
}

fn info(args: InfoArgs) -> Result<()> {
    if let Ok(name) = DtcwtName::parse(&args.bank) {
        let f = dtcwt_filters(&args.bank)?;
        println!("dual-tree complex filter set {name} (analysis, unit norm)");
        println!("lowpass  ({} taps): {:?}", f.lowpass.len(), f.lowpass);
        println!("highpass ({} taps): {:?}", f.highpass.len(), f.highpass);
        println!("highpass sum: {:.3e}", f.highpass.iter().sum::<f64>());
        println!("tree-b delay: 1 sample");
        return Ok(());
    }
    let bank = filter_bank(&args.bank)?;
    println!("filter bank {}", bank.name);
    println!("dec_lo: {:?}", bank.dec_lo);
    println!("dec_hi: {:?}", bank.dec_hi);
    let sum_lo: f64 = bank.dec_lo.iter().sum();
    let sum_hi: f64 = bank.dec_hi.iter().sum();
    println!(
        "sum(dec_lo) - sqrt(2) = {:+.3e}",
        sum_lo - std::f64::consts::SQRT_2
    );
    println!("sum(dec_hi)           = {sum_hi:+.3e}");
    let mut worst_shift = 0.0f64;
    for m in 1..bank.dec_lo.len() / 2 {
        let dot: f64 = (0..bank.dec_lo.len() - 2 * m)
            .map(|k| bank.dec_lo[k] * bank.dec_lo[k + 2 * m])
            .sum();
        worst_shift = worst_shift.max(dot.abs());
    }
    println!("worst shift-orthonormality residual = {worst_shift:.3e}");
    let kernels = build_2d_kernels(&bank);
    let all = kernels.all();
    let mut worst_cross = 0.0f64;
    for (i, (_, a)) in all.iter().enumerate() {
        for (_, b) in all.iter().skip(i + 1) {
            let dot: f64 = a.iter().zip(b.iter()).map(|(x, y)| x * y).sum();
            worst_cross = worst_cross.max(dot.abs());
        }
    }
    println!("worst 2-D kernel cross-correlation  = {worst_cross:.3e}");
    Ok(())
}
