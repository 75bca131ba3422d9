//! Deterministic synthetic segmentation tasks and dataset I/O.
//!
//! Every sample is generated from `base_seed + index` through the counter
//! PRNG, with all transcendentals routed through libm, so datasets are
//! byte-identical across platforms. The four tasks:
//!
//! - camouflage: foreground and background are band-filtered noise textures
//!   with matched mean and variance; only the frequency content differs.
//! - defocus: a detailed texture, Gaussian-blurred (sigma 2.5) inside the
//!   region.
//! - shadow: luminance scaled by 0.45 inside the region.
//! - blobs: a high-contrast solid blob; the pretraining source task.
//!
//! Datasets persist as 8-bit RGB PNGs plus 1-bit ground-truth PNGs with a
//! manifest carrying per-file SHA-256 checksums.

use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::rng::Prng;
use crate::tensor::Tensor;

#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Camouflage,
    Defocus,
    Shadow,
    Blobs,
}

impl Task {
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "camouflage" | "camo" => Ok(Task::Camouflage),
            "defocus" => Ok(Task::Defocus),
            "shadow" => Ok(Task::Shadow),
            "blobs" => Ok(Task::Blobs),
            other => Err(Error::config(format!(
                "unknown task '{other}'; supported: camouflage, defocus, shadow, blobs"
            ))),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Task::Camouflage => "camouflage",
            Task::Defocus => "defocus",
            Task::Shadow => "shadow",
            Task::Blobs => "blobs",
        }
    }
}

impl std::fmt::Display for Task {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug)]
pub struct SynthSample {
    /// [size, size, 3] in [0, 1].
    pub image: Tensor,
    /// [size, size] with exact {0, 1} values.
    pub gt: Tensor,
    pub seed: u64,
    pub task: Task,
}

pub const MIN_FG_FRACTION: f64 = 0.10;
pub const MAX_FG_FRACTION: f64 = 0.50;

/// Periodic separable Gaussian blur of one channel.
fn gaussian_blur(data: &[f64], h: usize, w: usize, sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as usize;
    let mut kernel = Vec::with_capacity(2 * radius + 1);
    for k in 0..=2 * radius {
        let d = k as f64 - radius as f64;
        kernel.push(libm::exp(-d * d / (2.0 * sigma * sigma)));
    }
    let norm: f64 = kernel.iter().sum();
    for k in kernel.iter_mut() {
        *k /= norm;
    }
    let mut tmp = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (k, &kv) in kernel.iter().enumerate() {
                let xx = (x + w + k - radius) % w;
                acc += kv * data[y * w + xx];
            }
            tmp[y * w + x] = acc;
        }
    }
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (k, &kv) in kernel.iter().enumerate() {
                let yy = (y + h + k - radius) % h;
                acc += kv * tmp[yy * w + x];
            }
            out[y * w + x] = acc;
        }
    }
    out
}

fn standardize(band: Vec<f64>, mean: f64, std: f64) -> Vec<f64> {
    let n = band.len() as f64;
    let mu = band.iter().sum::<f64>() / n;
    let var = band.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / n;
    let s = var.sqrt().max(1e-12);
    band.iter().map(|v| mean + std * (v - mu) / s).collect()
}

/// Band-limited noise: difference of two Gaussian blurs of white noise,
/// standardized to the requested mean and deviation (pre-clamp).
fn band_noise(
    rng: &mut Prng,
    size: usize,
    sigma_lo: f64,
    sigma_hi: f64,
    mean: f64,
    std: f64,
) -> Vec<f64> {
    let white: Vec<f64> = (0..size * size).map(|_| rng.normal()).collect();
    let fine = gaussian_blur(&white, size, size, sigma_lo);
    let coarse = gaussian_blur(&white, size, size, sigma_hi);
    let band: Vec<f64> = fine.iter().zip(&coarse).map(|(a, b)| a - b).collect();
    standardize(band, mean, std)
}

/// Periodic 2-D convolution with a rotated anisotropic Gaussian: sigma_par
/// along the `theta` direction, sigma_perp across it.
fn anisotropic_blur(
    data: &[f64],
    size: usize,
    theta: f64,
    sigma_par: f64,
    sigma_perp: f64,
) -> Vec<f64> {
    let radius = (3.0 * sigma_par.max(sigma_perp)).ceil() as isize;
    let (ct, st) = (libm::cos(theta), libm::sin(theta));
    let mut kernel = Vec::with_capacity(((2 * radius + 1) * (2 * radius + 1)) as usize);
    let mut norm = 0.0;
    for dy in -radius..=radius {
        for dx in -radius..=radius {
            let along = ct * dx as f64 + st * dy as f64;
            let across = -st * dx as f64 + ct * dy as f64;
            let v = libm::exp(
                -along * along / (2.0 * sigma_par * sigma_par)
                    - across * across / (2.0 * sigma_perp * sigma_perp),
            );
            kernel.push(v);
            norm += v;
        }
    }
    for k in kernel.iter_mut() {
        *k /= norm;
    }
    let width = (2 * radius + 1) as usize;
    let mut out = vec![0.0; size * size];
    for y in 0..size {
        for x in 0..size {
            let mut acc = 0.0;
            for dy in -radius..=radius {
                let yy = (y as isize + dy).rem_euclid(size as isize) as usize;
                let krow = &kernel[((dy + radius) as usize) * width..];
                for dx in -radius..=radius {
                    let xx = (x as isize + dx).rem_euclid(size as isize) as usize;
                    acc += krow[(dx + radius) as usize] * data[yy * size + xx];
                }
            }
            out[y * size + x] = acc;
        }
    }
    out
}

/// Directional band noise: streaks along `theta` with the band limit applied
/// across the streaks, standardized like [`band_noise`].
fn directional_band_noise(
    rng: &mut Prng,
    size: usize,
    theta: f64,
    mean: f64,
    std: f64,
) -> Vec<f64> {
    let white: Vec<f64> = (0..size * size).map(|_| rng.normal()).collect();
    let fine = anisotropic_blur(&white, size, theta, 2.5, 0.45);
    let coarse = anisotropic_blur(&white, size, theta, 2.5, 1.3);
    let band: Vec<f64> = fine.iter().zip(&coarse).map(|(a, b)| a - b).collect();
    standardize(band, mean, std)
}

/// A smooth star-shaped blob: alpha in [0, 1] with the given feather width,
/// plus the binary mask (alpha >= 0.5) and its foreground fraction.
fn blob_alpha(rng: &mut Prng, size: usize, feather: f64) -> (Vec<f64>, Vec<f64>, f64) {
    let s = size as f64;
    let cx = rng.uniform_in(0.35, 0.65) * s;
    let cy = rng.uniform_in(0.35, 0.65) * s;
    let r0 = rng.uniform_in(0.16, 0.30) * s;
    let harmonics: Vec<(f64, f64, f64)> = (2..=5)
        .map(|j| {
            (
                j as f64,
                rng.uniform_in(0.0, 0.11),
                rng.uniform_in(0.0, 2.0 * std::f64::consts::PI),
            )
        })
        .collect();
    let mut alpha = vec![0.0; size * size];
    let mut gt = vec![0.0; size * size];
    let mut fg = 0usize;
    for y in 0..size {
        for x in 0..size {
            let (dx, dy) = (x as f64 + 0.5 - cx, y as f64 + 0.5 - cy);
            let rho = (dx * dx + dy * dy).sqrt();
            let theta = libm::atan2(dy, dx);
            let mut edge = 1.0;
            for &(j, a, phi) in &harmonics {
                edge += a * libm::cos(j * theta + phi);
            }
            let edge = r0 * edge;
            let a = ((edge - rho) / feather + 0.5).clamp(0.0, 1.0);
            alpha[y * size + x] = a;
            if a >= 0.5 {
                gt[y * size + x] = 1.0;
                fg += 1;
            }
        }
    }
    (alpha, gt, fg as f64 / (size * size) as f64)
}

/// Draw blobs until the foreground fraction lands in the admissible range.
fn accepted_blob(rng: &Prng, size: usize, feather: f64) -> (Vec<f64>, Vec<f64>) {
    for attempt in 0..64 {
        let mut sub = rng.derive(0xB10B + attempt);
        let (alpha, gt, frac) = blob_alpha(&mut sub, size, feather);
        if (MIN_FG_FRACTION..=MAX_FG_FRACTION).contains(&frac) {
            return (alpha, gt);
        }
    }
    // radii are chosen so the admissible range is hit with overwhelming
    // probability; 64 straight rejections would indicate a generator bug
    unreachable!("blob rejection sampling failed to converge");
}

fn clamp01(v: f64) -> f64 {
    v.clamp(0.0, 1.0)
}

fn one_sample(task: Task, seed: u64, size: usize) -> SynthSample {
    let root = Prng::new(seed);
    let n = size * size;
    let (image, gt) = match task {
        Task::Camouflage => {
            let (alpha, gt) = accepted_blob(&root, size, 2.0);
            // the foreground is a fine striped texture at a per-sample
            // orientation, the background coarse isotropic noise; means and
            // variances match, so only texture separates the regions, and no
            // single wavelet orientation covers every sample
            let theta = (root.derive(0xA11).index(4) as f64) * std::f64::consts::PI / 4.0;
            let mut img = vec![0.0; n * 3];
            for ch in 0..3 {
                let mut rf = root.derive(0xF0 + ch as u64);
                let mut rb = root.derive(0xB0 + ch as u64);
                let fg = directional_band_noise(&mut rf, size, theta, 0.5, 0.11);
                let bg = band_noise(&mut rb, size, 2.2, 4.5, 0.5, 0.11);
                for i in 0..n {
                    img[i * 3 + ch] = clamp01(bg[i] + (fg[i] - bg[i]) * alpha[i]);
                }
            }
            (img, gt)
        }
        Task::Defocus => {
            let (alpha, gt) = accepted_blob(&root, size, 2.0);
            let mut img = vec![0.0; n * 3];
            for ch in 0..3 {
                let mut rt = root.derive(0xD0 + ch as u64);
                let tex = band_noise(&mut rt, size, 0.4, 1.1, 0.5, 0.13);
                let blurred = gaussian_blur(&tex, size, size, 2.5);
                for i in 0..n {
                    img[i * 3 + ch] = clamp01(tex[i] + (blurred[i] - tex[i]) * alpha[i]);
                }
            }
            (img, gt)
        }
        Task::Shadow => {
            let (_, gt) = accepted_blob(&root, size, 2.0);
            let mut img = vec![0.0; n * 3];
            for ch in 0..3 {
                let mut rt = root.derive(0x50 + ch as u64);
                let tex = band_noise(&mut rt, size, 0.8, 2.0, 0.55, 0.10);
                for i in 0..n {
                    // hard region so the shadowed/unshadowed ratio is exact
                    let scale = if gt[i] == 1.0 { 0.45 } else { 1.0 };
                    img[i * 3 + ch] = clamp01(tex[i] * scale);
                }
            }
            (img, gt)
        }
        Task::Blobs => {
            let (alpha, gt) = accepted_blob(&root, size, 1.0);
            let mut img = vec![0.0; n * 3];
            for ch in 0..3 {
                let mut rn = root.derive(0x70 + ch as u64);
                let noise = band_noise(&mut rn, size, 0.5, 1.2, 0.0, 1.0);
                for i in 0..n {
                    let base = 0.25 + (0.80 - 0.25) * alpha[i];
                    img[i * 3 + ch] = clamp01(base + 0.03 * noise[i]);
                }
            }
            (img, gt)
        }
    };
    SynthSample {
        image: Tensor::new(vec![size, size, 3], image).expect("finite by construction"),
        gt: Tensor::new(vec![size, size], gt).expect("binary"),
        seed,
        task,
    }
}

/// `n` samples with per-sample seeds `base_seed + index`.
pub fn generate(task: Task, base_seed: u64, n: usize, size: usize) -> Result<Vec<SynthSample>> {
    if n == 0 {
        return Err(Error::config("dataset size must be >= 1"));
    }
    if size < 8 || size % 2 != 0 {
        return Err(Error::config(format!(
            "image size must be even and >= 8, got {size}"
        )));
    }
    Ok((0..n)
        .map(|i| one_sample(task, base_seed + i as u64, size))
        .collect())
}

pub fn gen_camouflage(seed: u64, n: usize, size: usize) -> Result<Vec<SynthSample>> {
    generate(Task::Camouflage, seed, n, size)
}

pub fn gen_defocus(seed: u64, n: usize, size: usize) -> Result<Vec<SynthSample>> {
    generate(Task::Defocus, seed, n, size)
}

pub fn gen_shadow(seed: u64, n: usize, size: usize) -> Result<Vec<SynthSample>> {
    generate(Task::Shadow, seed, n, size)
}

pub fn gen_blobs(seed: u64, n: usize, size: usize) -> Result<Vec<SynthSample>> {
    generate(Task::Blobs, seed, n, size)
}

// ---------------------------------------------------------------------------
// PNG + manifest storage
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DatasetFileEntry {
    pub image: String,
    pub gt: String,
    pub image_sha256: String,
    pub gt_sha256: String,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub task: Task,
    pub seed: u64,
    pub n: usize,
    pub size: usize,
    pub files: Vec<DatasetFileEntry>,
}

pub fn encode_rgb8(image: &Tensor) -> Result<Vec<u8>> {
    let (h, w) = (image.shape()[0], image.shape()[1]);
    let mut bytes = Vec::with_capacity(h * w * 3);
    for &v in image.data() {
        bytes.push((v * 255.0).round().clamp(0.0, 255.0) as u8);
    }
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, w as u32, h as u32);
        enc.set_color(png::ColorType::Rgb);
        enc.set_depth(png::BitDepth::Eight);
        let mut writer = enc.write_header().map_err(png_err)?;
        writer.write_image_data(&bytes).map_err(png_err)?;
    }
    Ok(out)
}

pub fn encode_gray1(gt: &Tensor) -> Result<Vec<u8>> {
    let (h, w) = (gt.shape()[0], gt.shape()[1]);
    let stride = w.div_ceil(8);
    let mut packed = vec![0u8; h * stride];
    for y in 0..h {
        for x in 0..w {
            if gt.data()[y * w + x] != 0.0 {
                packed[y * stride + x / 8] |= 0x80 >> (x % 8);
            }
        }
    }
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, w as u32, h as u32);
        enc.set_color(png::ColorType::Grayscale);
        enc.set_depth(png::BitDepth::One);
        let mut writer = enc.write_header().map_err(png_err)?;
        writer.write_image_data(&packed).map_err(png_err)?;
    }
    Ok(out)
}

fn png_err(e: impl std::fmt::Display) -> Error {
    Error::Format(format!("png: {e}"))
}

fn decode_png(bytes: &[u8]) -> Result<(Vec<u8>, usize, usize, png::ColorType, png::BitDepth)> {
    let decoder = {
        let mut d = png::Decoder::new(bytes);
        d.set_transformations(png::Transformations::IDENTITY);
        d
    };
    let mut reader = decoder.read_info().map_err(png_err)?;
    let mut buf = vec![0u8; reader.output_buffer_size()];
    let info = reader.next_frame(&mut buf).map_err(png_err)?;
    buf.truncate(info.buffer_size());
    Ok((
        buf,
        info.height as usize,
        info.width as usize,
        info.color_type,
        info.bit_depth,
    ))
}

pub fn decode_rgb8(bytes: &[u8]) -> Result<Tensor> {
    let (buf, h, w, color, depth) = decode_png(bytes)?;
    if color != png::ColorType::Rgb || depth != png::BitDepth::Eight {
        return Err(Error::Format(format!(
            "expected 8-bit RGB png, got {color:?}/{depth:?}"
        )));
    }
    Ok(Tensor::from_fn(vec![h, w, 3], |i| buf[i] as f64 / 255.0))
}

pub fn decode_gray1(bytes: &[u8]) -> Result<Tensor> {
    let (buf, h, w, color, depth) = decode_png(bytes)?;
    if color != png::ColorType::Grayscale || depth != png::BitDepth::One {
        return Err(Error::Format(format!(
            "expected 1-bit grayscale png, got {color:?}/{depth:?}"
        )));
    }
    let stride = w.div_ceil(8);
    Ok(Tensor::from_fn(vec![h, w], |i| {
        let (y, x) = (i / w, i % w);
        if buf[y * stride + x / 8] & (0x80 >> (x % 8)) != 0 {
            1.0
        } else {
            0.0
        }
    }))
}

fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn save_dataset(dir: impl AsRef<Path>, samples: &[SynthSample]) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    let mut files = Vec::with_capacity(samples.len());
    for (i, s) in samples.iter().enumerate() {
        let image_name = format!("img_{i:04}.png");
        let gt_name = format!("gt_{i:04}.png");
        let img_bytes = encode_rgb8(&s.image)?;
        let gt_bytes = encode_gray1(&s.gt)?;
        std::fs::write(dir.join(&image_name), &img_bytes)?;
        std::fs::write(dir.join(&gt_name), &gt_bytes)?;
        files.push(DatasetFileEntry {
            image_sha256: sha256_hex(&img_bytes),
            gt_sha256: sha256_hex(&gt_bytes),
            image: image_name,
            gt: gt_name,
        });
    }
    let first = samples.first().ok_or_else(|| Error::config("empty dataset"))?;
    let manifest = DatasetManifest {
        task: first.task,
        seed: first.seed,
        n: samples.len(),
        size: first.image.shape()[0],
        files,
    };
    let json = serde_json::to_vec_pretty(&manifest)?;
    std::fs::write(dir.join("manifest.json"), json)?;
    Ok(())
}

pub fn load_manifest(dir: impl AsRef<Path>) -> Result<DatasetManifest> {
    let mut buf = Vec::new();
    std::fs::File::open(dir.as_ref().join("manifest.json"))?.read_to_end(&mut buf)?;
    Ok(serde_json::from_slice(&buf)?)
}

pub fn load_dataset(dir: impl AsRef<Path>) -> Result<Vec<SynthSample>> {
    let dir = dir.as_ref();
    let manifest = load_manifest(dir)?;
    if manifest.files.len() != manifest.n {
        return Err(Error::Integrity(format!(
            "manifest lists {} files for n = {}",
            manifest.files.len(),
            manifest.n
        )));
    }
    let mut out = Vec::with_capacity(manifest.n);
    for (i, entry) in manifest.files.iter().enumerate() {
        let img_bytes = std::fs::read(dir.join(&entry.image))?;
        if sha256_hex(&img_bytes) != entry.image_sha256 {
            return Err(Error::Integrity(format!(
                "checksum mismatch for {}",
                entry.image
            )));
        }
        let gt_bytes = std::fs::read(dir.join(&entry.gt))?;
        if sha256_hex(&gt_bytes) != entry.gt_sha256 {
            return Err(Error::Integrity(format!("checksum mismatch for {}", entry.gt)));
        }
        out.push(SynthSample {
            image: decode_rgb8(&img_bytes)?,
            gt: decode_gray1(&gt_bytes)?,
            seed: manifest.seed + i as u64,
            task: manifest.task,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::wavelets::{dwt2, filter_bank_for, WaveletName};

    fn fg_fraction(gt: &Tensor) -> f64 {
        gt.data().iter().sum::<f64>() / gt.numel() as f64
    }

    /// Best IoU achievable by thresholding luminance (either polarity).
    fn threshold_oracle_iou(sample: &SynthSample) -> f64 {
        let size = sample.gt.shape()[0];
        let lum: Vec<f64> = (0..size * size)
            .map(|i| {
                (sample.image.data()[i * 3]
                    + sample.image.data()[i * 3 + 1]
                    + sample.image.data()[i * 3 + 2])
                    / 3.0
            })
            .collect();
        let mut best = 0.0f64;
        for k in 0..=255 {
            let t = k as f64 / 255.0;
            for invert in [false, true] {
                let (mut inter, mut union) = (0u64, 0u64);
                for (l, g) in lum.iter().zip(sample.gt.data()) {
                    let p = (*l >= t) != invert;
                    let gp = *g == 1.0;
                    if p && gp {
                        inter += 1;
                    }
                    if p || gp {
                        union += 1;
                    }
                }
                if union > 0 {
                    best = best.max(inter as f64 / union as f64);
                }
            }
        }
        best
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate(Task::Camouflage, 9, 3, 32).unwrap();
        let b = generate(Task::Camouflage, 9, 3, 32).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.image.data(), y.image.data());
            assert_eq!(x.gt.data(), y.gt.data());
        }
        // different seed, different bytes
        let c = generate(Task::Camouflage, 10, 1, 32).unwrap();
        assert_ne!(a[0].image.data(), c[0].image.data());
    }

    #[test]
    fn foreground_fraction_in_bounds_all_tasks() {
        for task in [Task::Camouflage, Task::Defocus, Task::Shadow, Task::Blobs] {
            for s in generate(task, 3, 8, 64).unwrap() {
                let f = fg_fraction(&s.gt);
                assert!(
                    (MIN_FG_FRACTION..=MAX_FG_FRACTION).contains(&f),
                    "{task}: fraction {f}"
                );
            }
        }
    }

    #[test]
    fn camouflage_regions_are_intensity_matched() {
        for s in generate(Task::Camouflage, 17, 10, 64).unwrap() {
            let size = s.gt.shape()[0];
            let (mut fg_sum, mut bg_sum, mut fg_n, mut bg_n) = (0.0, 0.0, 0.0, 0.0);
            let (mut fg_sq, mut bg_sq) = (0.0, 0.0);
            for i in 0..size * size {
                let lum = (s.image.data()[i * 3]
                    + s.image.data()[i * 3 + 1]
                    + s.image.data()[i * 3 + 2])
                    / 3.0;
                if s.gt.data()[i] == 1.0 {
                    fg_sum += lum;
                    fg_sq += lum * lum;
                    fg_n += 1.0;
                } else {
                    bg_sum += lum;
                    bg_sq += lum * lum;
                    bg_n += 1.0;
                }
            }
            let (fg_mean, bg_mean) = (fg_sum / fg_n, bg_sum / bg_n);
            assert!(
                (fg_mean - bg_mean).abs() <= 0.02,
                "mean gap {}",
                (fg_mean - bg_mean).abs()
            );
            let fg_var = fg_sq / fg_n - fg_mean * fg_mean;
            let bg_var = bg_sq / bg_n - bg_mean * bg_mean;
            let ratio = fg_var / bg_var;
            assert!((0.5..2.0).contains(&ratio), "region variance ratio {ratio}");
        }
    }

    #[test]
    fn camouflage_not_solvable_by_thresholding() {
        for s in generate(Task::Camouflage, 23, 5, 64).unwrap() {
            let iou = threshold_oracle_iou(&s);
            assert!(iou <= 0.6, "camouflage threshold oracle IoU {iou}");
        }
    }

    #[test]
    fn blobs_solvable_by_thresholding() {
        for s in generate(Task::Blobs, 23, 5, 64).unwrap() {
            let iou = threshold_oracle_iou(&s);
            assert!(iou >= 0.95, "blobs threshold oracle IoU {iou}");
        }
    }

    #[test]
    fn defocus_region_has_lower_detail_energy() {
        let bank = filter_bank_for(WaveletName::Haar);
        for s in generate(Task::Defocus, 31, 5, 64).unwrap() {
            let sub = dwt2(&s.image, &bank).unwrap();
            let size = s.gt.shape()[0];
            // per-pixel detail magnitude, upsampled comparison via 2x2 blocks
            let (mut fg_e, mut bg_e, mut fg_n, mut bg_n) = (0.0, 0.0, 0.0, 0.0);
            for by in 0..size / 2 {
                for bx in 0..size / 2 {
                    let mut e = 0.0;
                    for ch in 0..3 {
                        e += sub.lh.at3(by, bx, ch).powi(2)
                            + sub.hl.at3(by, bx, ch).powi(2)
                            + sub.hh.at3(by, bx, ch).powi(2);
                    }
                    // block is foreground if all four pixels are
                    let all_fg = (0..4).all(|q| {
                        let (y, x) = (2 * by + q / 2, 2 * bx + q % 2);
                        s.gt.data()[y * size + x] == 1.0
                    });
                    let all_bg = (0..4).all(|q| {
                        let (y, x) = (2 * by + q / 2, 2 * bx + q % 2);
                        s.gt.data()[y * size + x] == 0.0
                    });
                    if all_fg {
                        fg_e += e;
                        fg_n += 1.0;
                    } else if all_bg {
                        bg_e += e;
                        bg_n += 1.0;
                    }
                }
            }
            assert!(
                fg_e / fg_n < bg_e / bg_n,
                "blurred region must have lower detail energy density"
            );
        }
    }

    #[test]
    fn shadow_region_ratio() {
        // regenerate the base texture to compare shadowed vs unshadowed
        for s in generate(Task::Shadow, 41, 5, 64).unwrap() {
            let root = Prng::new(s.seed);
            let size = s.gt.shape()[0];
            let mut rt = root.derive(0x50);
            let tex = band_noise(&mut rt, size, 0.8, 2.0, 0.55, 0.10);
            let (mut shadowed, mut base, mut n) = (0.0, 0.0, 0.0);
            for i in 0..size * size {
                if s.gt.data()[i] == 1.0 {
                    shadowed += s.image.data()[i * 3];
                    base += tex[i];
                    n += 1.0;
                }
            }
            let ratio = (shadowed / n) / (base / n);
            assert!((ratio - 0.45).abs() <= 0.02, "shadow ratio {ratio}");
        }
    }

    #[test]
    fn dataset_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let samples = generate(Task::Blobs, 5, 3, 32).unwrap();
        save_dataset(dir.path(), &samples).unwrap();
        let manifest = load_manifest(dir.path()).unwrap();
        assert_eq!(manifest.n, 3);
        assert_eq!(manifest.files.len(), 3);
        let loaded = load_dataset(dir.path()).unwrap();
        for (a, b) in samples.iter().zip(&loaded) {
            assert_eq!(a.gt.data(), b.gt.data(), "gt is exact");
            let max_err = a.image.max_abs_diff(&b.image);
            assert!(max_err <= 1.0 / 255.0 + 1e-12, "quantization bound {max_err}");
            assert_eq!(a.seed, b.seed);
        }
    }

    #[test]
    fn tampered_file_is_integrity_error() {
        let dir = tempfile::tempdir().unwrap();
        let samples = generate(Task::Blobs, 5, 2, 32).unwrap();
        save_dataset(dir.path(), &samples).unwrap();
        let victim = dir.path().join("img_0001.png");
        let mut bytes = std::fs::read(&victim).unwrap();
        let last = bytes.len() - 1;
        bytes[last] ^= 0xFF;
        std::fs::write(&victim, bytes).unwrap();
        assert!(matches!(
            load_dataset(dir.path()),
            Err(Error::Integrity(_))
        ));
    }
}

