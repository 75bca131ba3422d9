//! Level-1 dual-tree complex wavelet transform.
//!
//! Two real wavelet trees run in parallel; at level 1 tree b uses the same
//! filters as tree a delayed by one sample, so together the trees retain all
//! polyphase components of the undecimated transform. The four (row-tree,
//! col-tree) separable transforms are combined into six oriented complex
//! subbands by sum/difference pairing; the pairing is unitary, which is what
//! makes the oriented magnitude energy insensitive to small shifts.
//!
//! Only the analysis direction is implemented; the feature pipeline never
//! reconstructs from complex subbands.

use crate::complex::ComplexTensor;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Biorthogonal near-symmetric analysis low-pass, 5 taps (rational:
/// [-1, 5, 12, 5, -1] / 20), stored at unit L2 norm.
const NEAR_SYM_A_LO: [f64; 5] = [-0.05, 0.25, 0.6, 0.25, -0.05];

/// Matching analysis high-pass, 7 taps ([-3, 15, 73, -170, 73, 15, -3] / 280).
const NEAR_SYM_A_HI: [f64; 7] = [
    -0.010714285714285714,
    0.05357142857142857,
    0.26071428571428573,
    -0.6071428571428571,
    0.26071428571428573,
    0.05357142857142857,
    -0.010714285714285714,
];

/// Near-symmetric 13-tap analysis low-pass; the pair satisfies the halfband
/// perfect-reconstruction condition to ~1e-16.
const NEAR_SYM_B_LO: [f64; 13] = [
    -0.0017579125498335816,
    0.0,
    0.022265634733221677,
    -0.04687497354806042,
    -0.048242161334213024,
    0.29687501366033897,
    0.5554687980770928,
    0.29687501366033897,
    -0.048242161334213024,
    -0.04687497354806042,
    0.022265634733221677,
    0.0,
    -0.0017579125498335816,
];

/// Near-symmetric 19-tap analysis high-pass.
const NEAR_SYM_B_HI: [f64; 19] = [
    -7.062645143006629e-5,
    0.0,
    0.0013419009809212989,
    -0.0018832637851587902,
    -0.007156802590235721,
    0.023855986564976974,
    0.05564310756095616,
    -0.05168810985985062,
    -0.2997575795002117,
    0.5594307741600649,
    -0.2997575795002117,
    -0.05168810985985062,
    0.05564310756095616,
    0.023855986564976974,
    -0.007156802590235721,
    -0.0018832637851587902,
    0.0013419009809212989,
    0.0,
    -7.062645143006629e-5,
];

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum DtcwtName {
    SyA,
    SyB,
}

impl DtcwtName {
    pub const ALL: [DtcwtName; 2] = [DtcwtName::SyA, DtcwtName::SyB];

    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "sy-a" | "near-sym-a" => Ok(DtcwtName::SyA),
            "sy-b" | "near-sym-b" => Ok(DtcwtName::SyB),
            other => Err(Error::config(format!(
                "unknown complex wavelet '{other}'; supported: sy-a, sy-b"
            ))),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            DtcwtName::SyA => "sy-a",
            DtcwtName::SyB => "sy-b",
        }
    }
}

impl std::fmt::Display for DtcwtName {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Level-1 analysis filters. Tree b is realized as a one-sample delay of tree
/// a, applied as an offset in the stride-2 correlation.
#[derive(Clone, Debug)]
pub struct DtcwtFilterSet {
    pub name: DtcwtName,
    pub lowpass: Vec<f64>,
    pub highpass: Vec<f64>,
}

impl DtcwtFilterSet {
    /// Tree-b filters, materialized with the one-sample delay.
    pub fn tree_b_lowpass(&self) -> Vec<f64> {
        let mut f = vec![0.0];
        f.extend_from_slice(&self.lowpass);
        f
    }

    pub fn tree_b_highpass(&self) -> Vec<f64> {
        let mut f = vec![0.0];
        f.extend_from_slice(&self.highpass);
        f
    }

    fn validate(&self) -> Result<()> {
        let norm = |f: &[f64]| f.iter().map(|v| v * v).sum::<f64>().sqrt();
        let na = norm(&self.lowpass);
        let nb = norm(&self.tree_b_lowpass());
        if (na - nb).abs() > 1e-10 {
            return Err(Error::Integrity(format!(
                "{}: tree lowpass norms differ: {na} vs {nb}",
                self.name
            )));
        }
        let hsum: f64 = self.highpass.iter().sum();
        let hsum_b: f64 = self.tree_b_highpass().iter().sum();
        if hsum.abs() > 1e-10 || hsum_b.abs() > 1e-10 {
            return Err(Error::Integrity(format!(
                "{}: highpass does not sum to zero: {hsum}",
                self.name
            )));
        }
        Ok(())
    }
}

/// Analysis filters for a named set, validated against the set's invariants.
pub fn dtcwt_filters(name: &str) -> Result<DtcwtFilterSet> {
    dtcwt_filters_for(DtcwtName::parse(name)?)
}

pub fn dtcwt_filters_for(name: DtcwtName) -> Result<DtcwtFilterSet> {
    let unit = |f: &[f64]| -> Vec<f64> {
        let n = f.iter().map(|v| v * v).sum::<f64>().sqrt();
        f.iter().map(|v| v / n).collect()
    };
    let set = match name {
        DtcwtName::SyA => DtcwtFilterSet {
            name,
            lowpass: unit(&NEAR_SYM_A_LO),
            highpass: unit(&NEAR_SYM_A_HI),
        },
        DtcwtName::SyB => DtcwtFilterSet {
            name,
            lowpass: unit(&NEAR_SYM_B_LO),
            highpass: unit(&NEAR_SYM_B_HI),
        },
    };
    set.validate()?;
    Ok(set)
}

/// Six oriented complex subbands plus the per-tree-pair low-pass residues.
///
/// `oriented` is ordered [+15, +45, +75, -75, -45, -15] degrees; the +-15 pair
/// comes from the (lo y, hi x) bands, +-45 from (hi y, hi x), +-75 from
/// (hi y, lo x). `lowpass` holds the four (row-tree, col-tree) low-pass bands
/// in order aa, ab, ba, bb, scaled by 1/2 so that their energies add up to the
/// usual single-transform low-pass energy.
#[derive(Clone, Debug)]
pub struct ComplexSubbandSet {
    pub lowpass: [Tensor; 4],
    pub oriented: [ComplexTensor; 6],
    pub source_shape: (usize, usize, usize),
    pub filter_name: DtcwtName,
}

pub const ORIENTATION_DEGREES: [i32; 6] = [15, 45, 75, -75, -45, -15];

impl ComplexSubbandSet {
    pub fn oriented_energy(&self) -> f64 {
        self.oriented.iter().map(|z| z.energy()).sum()
    }

    pub fn lowpass_energy(&self) -> f64 {
        self.lowpass.iter().map(|t| t.energy()).sum()
    }

    /// Index pair of the +-45 degree subbands.
    pub fn diagonal_pair(&self) -> (&ComplexTensor, &ComplexTensor) {
        (&self.oriented[1], &self.oriented[4])
    }
}

/// Stride-2 periodic correlation along `axis` (0 = rows/y, 1 = cols/x) with a
/// start offset realizing the tree delay.
fn filter_down_axis(
    src: &[f64],
    h: usize,
    w: usize,
    c: usize,
    axis: usize,
    filter: &[f64],
    offset: usize,
) -> Vec<f64> {
    match axis {
        0 => {
            let oh = h / 2;
            let mut out = vec![0.0; oh * w * c];
            for i in 0..oh {
                for (k, &f) in filter.iter().enumerate() {
                    let y = (2 * i + offset + k) % h;
                    let dst = &mut out[i * w * c..(i + 1) * w * c];
                    let row = &src[y * w * c..(y + 1) * w * c];
                    for (d, s) in dst.iter_mut().zip(row) {
                        *d += f * s;
                    }
                }
            }
            out
        }
        _ => {
            let ow = w / 2;
            let mut out = vec![0.0; h * ow * c];
            for y in 0..h {
                for j in 0..ow {
                    for (k, &f) in filter.iter().enumerate() {
                        let x = (2 * j + offset + k) % w;
                        for ch in 0..c {
                            out[(y * ow + j) * c + ch] += f * src[(y * w + x) * c + ch];
                        }
                    }
                }
            }
            out
        }
    }
}

/// Level-1 2-D dual-tree complex wavelet transform of an [H, W, C] image.
pub fn dtcwt2_level1(image: &Tensor, filters: &DtcwtFilterSet) -> Result<ComplexSubbandSet> {
    let (h, w, c) = match *image.shape() {
        [h, w, c] => (h, w, c),
        ref s => return Err(Error::shape(format!("expected [H, W, C] image, got {s:?}"))),
    };
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::shape(format!(
            "dtcwt2_level1 requires even spatial dims, got {h}x{w}"
        )));
    }
    let src = image.data();
    let (oh, ow) = (h / 2, w / 2);
    let sub_shape = vec![oh, ow, c];

    // rows pass per tree: lo_y[tree], hi_y[tree]
    let mut lo_y = Vec::with_capacity(2);
    let mut hi_y = Vec::with_capacity(2);
    for tree in 0..2 {
        lo_y.push(filter_down_axis(src, h, w, c, 0, &filters.lowpass, tree));
        hi_y.push(filter_down_axis(src, h, w, c, 0, &filters.highpass, tree));
    }
    // cols pass: band[orientation][row_tree][col_tree]
    let mut ll = Vec::new(); // (rt, ct) in order aa, ab, ba, bb
    let mut lh = Vec::new();
    let mut hl = Vec::new();
    let mut hh = Vec::new();
    for rt in 0..2 {
        for ct in 0..2 {
            ll.push(filter_down_axis(&lo_y[rt], oh, w, c, 1, &filters.lowpass, ct));
            lh.push(filter_down_axis(&lo_y[rt], oh, w, c, 1, &filters.highpass, ct));
            hl.push(filter_down_axis(&hi_y[rt], oh, w, c, 1, &filters.lowpass, ct));
            hh.push(filter_down_axis(&hi_y[rt], oh, w, c, 1, &filters.highpass, ct));
        }
    }

    // sum/difference pairing of the four tree combinations into two oriented
    // complex bands: z+ ~ (aa - bb) + j(ab + ba), z- ~ (aa + bb) + j(ab - ba),
    // scaled so the six-band magnitude energy matches the detail energy of a
    // single decimated transform (the four trees are 4x redundant)
    let scale = 0.5 * std::f64::consts::FRAC_1_SQRT_2;
    let pair = |bands: &[Vec<f64>]| -> Result<(ComplexTensor, ComplexTensor)> {
        let (aa, ab, ba, bb) = (&bands[0], &bands[1], &bands[2], &bands[3]);
        let n = aa.len();
        let mut pr = vec![0.0; n];
        let mut pi = vec![0.0; n];
        let mut mr = vec![0.0; n];
        let mut mi = vec![0.0; n];
        for i in 0..n {
            pr[i] = (aa[i] - bb[i]) * scale;
            pi[i] = (ab[i] + ba[i]) * scale;
            mr[i] = (aa[i] + bb[i]) * scale;
            mi[i] = (ab[i] - ba[i]) * scale;
        }
        Ok((
            ComplexTensor::new(
                Tensor::new(sub_shape.clone(), pr)?,
                Tensor::new(sub_shape.clone(), pi)?,
            )?,
            ComplexTensor::new(
                Tensor::new(sub_shape.clone(), mr)?,
                Tensor::new(sub_shape.clone(), mi)?,
            )?,
        ))
    };
    let (p15, m15) = pair(&lh)?;
    let (p45, m45) = pair(&hh)?;
    let (p75, m75) = pair(&hl)?;

    let lowpass = {
        let mut out: Vec<Tensor> = Vec::with_capacity(4);
        for band in &ll {
            let scaled: Vec<f64> = band.iter().map(|v| v * 0.5).collect();
            out.push(Tensor::new(sub_shape.clone(), scaled)?);
        }
        [
            out.remove(0),
            out.remove(0),
            out.remove(0),
            out.remove(0),
        ]
    };

    Ok(ComplexSubbandSet {
        lowpass,
        oriented: [p15, p45, p75, m75, m45, m15],
        source_shape: (h, w, c),
        filter_name: filters.name,
    })
}

/// Elementwise sum of the six oriented complex subbands.
pub fn complex_hf_combine(subbands: &ComplexSubbandSet) -> Result<ComplexTensor> {
    let shape = subbands.oriented[0].shape().to_vec();
    let n: usize = shape.iter().product();
    let mut re = vec![0.0; n];
    let mut im = vec![0.0; n];
    for z in &subbands.oriented {
        if z.shape() != shape.as_slice() {
            return Err(Error::shape("oriented subband shapes differ"));
        }
        for i in 0..n {
            re[i] += z.re.data()[i];
            im[i] += z.im.data()[i];
        }
    }
    ComplexTensor::new(Tensor::new(shape.clone(), re)?, Tensor::new(shape, im)?)
}
