//! High-frequency feature extraction.
//!
//! The wavelet route: upsample the image 2x (bilinear, half-pixel centers),
//! run a single-level decomposition, and sum the detail subbands. The 2x
//! resize cancels the transform's downsampling, so the feature map has the
//! input's spatial size. Real families produce a real map; the dual-tree
//! complex families produce a complex map (sum of the six oriented subbands).
//!
//! The Fourier route: a fixed centered square mask in the shifted spectrum,
//! either kept (lowpass) or zeroed (highpass). The two modes are exact set
//! complements, so their outputs sum back to the input.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::complex::ComplexTensor;
use crate::dtcwt::{complex_hf_combine, dtcwt2_level1, dtcwt_filters_for, DtcwtName};
use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::wavelets::{dwt2, filter_bank_for, WaveletName};

/// Any wavelet usable by the extraction pipeline: four real families plus the
/// two complex filter sets.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum WhfWavelet {
    Real(WaveletName),
    Complex(DtcwtName),
}

impl WhfWavelet {
    pub const ALL: [WhfWavelet; 6] = [
        WhfWavelet::Real(WaveletName::Haar),
        WhfWavelet::Real(WaveletName::Db2),
        WhfWavelet::Real(WaveletName::Coif2),
        WhfWavelet::Real(WaveletName::Sym4),
        WhfWavelet::Complex(DtcwtName::SyA),
        WhfWavelet::Complex(DtcwtName::SyB),
    ];

    pub fn parse(name: &str) -> Result<Self> {
        if let Ok(n) = DtcwtName::parse(name) {
            return Ok(WhfWavelet::Complex(n));
        }
        WaveletName::parse(name).map(WhfWavelet::Real).map_err(|_| {
            Error::config(format!(
                "unknown wavelet '{name}'; supported: haar, db2, coif2, sym4, sy-a, sy-b"
            ))
        })
    }

    pub fn is_complex(self) -> bool {
        matches!(self, WhfWavelet::Complex(_))
    }

    pub fn as_str(self) -> &'static str {
        match self {
            WhfWavelet::Real(n) => n.as_str(),
            WhfWavelet::Complex(n) => n.as_str(),
        }
    }
}

impl std::fmt::Display for WhfWavelet {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Composite high-frequency map at the source image's spatial size.
#[derive(Clone, Debug)]
pub struct WhfMap {
    pub values: WhfValues,
    pub wavelet: WhfWavelet,
}

#[derive(Clone, Debug)]
pub enum WhfValues {
    Real(Tensor),
    Complex(ComplexTensor),
}

impl WhfMap {
    pub fn is_complex(&self) -> bool {
        matches!(self.values, WhfValues::Complex(_))
    }

    pub fn shape(&self) -> &[usize] {
        match &self.values {
            WhfValues::Real(t) => t.shape(),
            WhfValues::Complex(z) => z.shape(),
        }
    }

    /// Real view for consumers that cannot use the imaginary component.
    pub fn real_part(&self) -> &Tensor {
        match &self.values {
            WhfValues::Real(t) => t,
            WhfValues::Complex(z) => &z.re,
        }
    }

    pub fn energy(&self) -> f64 {
        match &self.values {
            WhfValues::Real(t) => t.energy(),
            WhfValues::Complex(z) => z.energy(),
        }
    }
}

/// Which subbands feed the composite map; the production pipeline sums the
/// three details, the ablation harness restricts to single bands or ll.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct SubbandSelection {
    pub ll: bool,
    pub lh: bool,
    pub hl: bool,
    pub hh: bool,
}

impl SubbandSelection {
    pub const DETAILS: SubbandSelection = SubbandSelection {
        ll: false,
        lh: true,
        hl: true,
        hh: true,
    };

    pub fn single(name: &str) -> Result<Self> {
        let mut s = SubbandSelection {
            ll: false,
            lh: false,
            hl: false,
            hh: false,
        };
        match name {
            "ll" | "LL" => s.ll = true,
            "lh" | "LH" => s.lh = true,
            "hl" | "HL" => s.hl = true,
            "hh" | "HH" => s.hh = true,
            other => return Err(Error::config(format!("unknown subband '{other}'"))),
        }
        Ok(s)
    }

    pub fn any(self) -> bool {
        self.ll || self.lh || self.hl || self.hh
    }

    pub fn label(self) -> String {
        let mut parts = Vec::new();
        if self.ll {
            parts.push("LL");
        }
        if self.hl {
            parts.push("HL");
        }
        if self.lh {
            parts.push("LH");
        }
        if self.hh {
            parts.push("HH");
        }
        parts.join("+")
    }
}

/// 2x bilinear upscale with half-pixel-centered sampling and edge clamping.
pub fn resize_bilinear_2x(image: &Tensor) -> Result<Tensor> {
    let (h, w, c) = match *image.shape() {
        [h, w, c] => (h, w, c),
        ref s => return Err(Error::shape(format!("expected [H, W, C] image, got {s:?}"))),
    };
    let (h2, w2) = (2 * h, 2 * w);
    let axis = |n: usize, o: usize| -> (usize, usize, f64) {
        let src = ((o as f64 + 0.5) / 2.0 - 0.5).clamp(0.0, (n - 1) as f64);
        let i0 = src.floor() as usize;
        let i1 = (i0 + 1).min(n - 1);
        (i0, i1, src - i0 as f64)
    };
    let mut out = vec![0.0; h2 * w2 * c];
    for oy in 0..h2 {
        let (y0, y1, wy) = axis(h, oy);
        for ox in 0..w2 {
            let (x0, x1, wx) = axis(w, ox);
            for ch in 0..c {
                let v00 = image.at3(y0, x0, ch);
                let v01 = image.at3(y0, x1, ch);
                let v10 = image.at3(y1, x0, ch);
                let v11 = image.at3(y1, x1, ch);
                out[(oy * w2 + ox) * c + ch] =
                    (1.0 - wy) * ((1.0 - wx) * v00 + wx * v01) + wy * ((1.0 - wx) * v10 + wx * v11);
            }
        }
    }
    Tensor::new(vec![h2, w2, c], out)
}

/// The extraction pipeline: resize 2x, decompose, sum the detail subbands.
pub fn whf_extract(image: &Tensor, wavelet: WhfWavelet) -> Result<WhfMap> {
    let resized = resize_bilinear_2x(image)?;
    let values = match wavelet {
        WhfWavelet::Real(name) => {
            let sub = dwt2(&resized, &filter_bank_for(name))?;
            let n = sub.lh.numel();
            let mut sum = vec![0.0; n];
            for band in [&sub.lh, &sub.hl, &sub.hh] {
                for (s, v) in sum.iter_mut().zip(band.data()) {
                    *s += v;
                }
            }
            WhfValues::Real(Tensor::new(sub.lh.shape().to_vec(), sum)?)
        }
        WhfWavelet::Complex(name) => {
            let sub = dtcwt2_level1(&resized, &dtcwt_filters_for(name)?)?;
            WhfValues::Complex(complex_hf_combine(&sub)?)
        }
    };
    Ok(WhfMap { values, wavelet })
}

/// Ablation variant: the same pipeline restricted to a chosen subband subset
/// of a real family.
pub fn whf_extract_selected(
    image: &Tensor,
    name: WaveletName,
    selection: SubbandSelection,
) -> Result<Tensor> {
    if !selection.any() {
        return Err(Error::config("empty subband selection"));
    }
    let resized = resize_bilinear_2x(image)?;
    let sub = dwt2(&resized, &filter_bank_for(name))?;
    let n = sub.lh.numel();
    let mut sum = vec![0.0; n];
    let bands = [
        (selection.ll, &sub.ll),
        (selection.lh, &sub.lh),
        (selection.hl, &sub.hl),
        (selection.hh, &sub.hh),
    ];
    for (on, band) in bands {
        if on {
            for (s, v) in sum.iter_mut().zip(band.data()) {
                *s += v;
            }
        }
    }
    Tensor::new(sub.lh.shape().to_vec(), sum)
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum MaskMode {
    Highpass,
    Lowpass,
}

/// A fixed centered square mask in the shifted spectrum. `tau` is the ratio of
/// the square's side to min(H, W); highpass and lowpass with equal tau are
/// exact complements.
#[derive(Clone, Copy, Debug)]
pub struct FreqMaskConfig {
    pub tau: f64,
    pub mode: MaskMode,
}

impl FreqMaskConfig {
    pub fn new(tau: f64, mode: MaskMode) -> Result<Self> {
        if !(tau > 0.0 && tau < 1.0) {
            return Err(Error::config(format!("tau must be in (0, 1), got {tau}")));
        }
        Ok(FreqMaskConfig { tau, mode })
    }
}

fn fft2d(buf: &mut [Complex<f64>], h: usize, w: usize, inverse: bool) {
    let mut planner = FftPlanner::new();
    let row_fft = if inverse {
        planner.plan_fft_inverse(w)
    } else {
        planner.plan_fft_forward(w)
    };
    for row in buf.chunks_exact_mut(w) {
        row_fft.process(row);
    }
    let col_fft = if inverse {
        planner.plan_fft_inverse(h)
    } else {
        planner.plan_fft_forward(h)
    };
    let mut col = vec![Complex::default(); h];
    for x in 0..w {
        for y in 0..h {
            col[y] = buf[y * w + x];
        }
        col_fft.process(&mut col);
        for y in 0..h {
            buf[y * w + x] = col[y];
        }
    }
}

/// Whether a (row, col) bin lies inside the centered square of side `s` of the
/// shifted spectrum.
fn in_centered_square(r: usize, c: usize, h: usize, w: usize, s: usize) -> bool {
    if s == 0 {
        return false;
    }
    let side = s as isize;
    let lo_span = (side - 1) / 2;
    let hi_span = side - 1 - lo_span;
    let inside = |idx: usize, n: usize| -> bool {
        let u = ((idx + n / 2) % n) as isize;
        let center = (n / 2) as isize;
        u >= center - lo_span && u <= center + hi_span
    };
    inside(r, h) && inside(c, w)
}

pub fn fourier_filter(image: &Tensor, cfg: &FreqMaskConfig) -> Result<Tensor> {
    fourier_filter_full(image, cfg).map(|(t, _)| t)
}

/// As [`fourier_filter`] but also reports the largest imaginary residue that
/// was discarded when taking the real part.
pub fn fourier_filter_full(image: &Tensor, cfg: &FreqMaskConfig) -> Result<(Tensor, f64)> {
    let (h, w, c) = match *image.shape() {
        [h, w, c] => (h, w, c),
        ref s => return Err(Error::shape(format!("expected [H, W, C] image, got {s:?}"))),
    };
    let s = (cfg.tau * h.min(w) as f64).floor() as usize;
    let mut out = vec![0.0; h * w * c];
    let mut max_imag = 0.0f64;
    let mut buf = vec![Complex::default(); h * w];
    for ch in 0..c {
        for y in 0..h {
            for x in 0..w {
                buf[y * w + x] = Complex::new(image.at3(y, x, ch), 0.0);
            }
        }
        fft2d(&mut buf, h, w, false);
        for y in 0..h {
            for x in 0..w {
                let in_square = in_centered_square(y, x, h, w, s);
                let keep = match cfg.mode {
                    MaskMode::Lowpass => in_square,
                    MaskMode::Highpass => !in_square,
                };
                if !keep {
                    buf[y * w + x] = Complex::default();
                }
            }
        }
        fft2d(&mut buf, h, w, true);
        let norm = 1.0 / (h * w) as f64;
        for y in 0..h {
            for x in 0..w {
                let v = buf[y * w + x] * norm;
                out[(y * w + x) * c + ch] = v.re;
                max_imag = max_imag.max(v.im.abs());
            }
        }
    }
    Ok((Tensor::new(vec![h, w, c], out)?, max_imag))
}
