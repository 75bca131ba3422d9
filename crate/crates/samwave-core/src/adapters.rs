//! Embedding Tune, WHF Tune and the per-layer adapters.
//!
//! The adapter input is the channel concatenation of two learned maps: psi_pe,
//! a pointwise projection of the frozen patch embeddings, and psi_whf, a
//! patchify-projection of the high-frequency map. Each encoder layer has its
//! own (tune: 2*gamma -> gamma, up: gamma -> C_layer) projection pair; the up
//! projections start at zero so a freshly initialized stack leaves the frozen
//! model's function unchanged.
//!
//! In the complex variant the WHF/tune/up weights are complex and the
//! activation is the split GeLU; psi_pe stays real and is promoted with a zero
//! imaginary part at concatenation time.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::complex::{ComplexTensor, ComplexVar};
use crate::error::{Error, Result};
use crate::rng::Prng;
use crate::tensor::{Param, Tensor};

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq, Eq)]
pub struct AdapterConfig {
    /// Channel count of psi_pe and psi_whf; the adapter input has 2*gamma.
    pub gamma: usize,
    /// One adapter per encoder block.
    pub num_layers: usize,
    /// Output channels of the up projection, per layer.
    pub layer_channels: Vec<usize>,
    pub is_complex: bool,
    /// Patch size of the WHF patchify projection.
    pub patch_size: usize,
}

impl AdapterConfig {
    pub fn validate(&self) -> Result<()> {
        if self.gamma == 0 {
            return Err(Error::config("gamma must be >= 1"));
        }
        if self.layer_channels.len() != self.num_layers {
            return Err(Error::config(format!(
                "layer_channels has {} entries for {} layers",
                self.layer_channels.len(),
                self.num_layers
            )));
        }
        if self.patch_size == 0 {
            return Err(Error::config("patch_size must be >= 1"));
        }
        Ok(())
    }

    pub fn adapter_input_channels(&self) -> usize {
        2 * self.gamma
    }
}

#[derive(Clone, Debug)]
pub struct ComplexParam {
    pub re: Param,
    pub im: Param,
}

impl ComplexParam {
    fn new(re: Tensor, im: Tensor) -> Self {
        ComplexParam {
            re: Param::new(re),
            im: Param::new(im),
        }
    }

    pub fn value(&self) -> ComplexTensor {
        ComplexTensor {
            re: self.re.value.clone(),
            im: self.im.value.clone(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct RealLinear {
    pub w: Param,
    pub b: Param,
}

#[derive(Clone, Debug)]
pub struct ComplexLinear {
    pub w: ComplexParam,
    pub b: ComplexParam,
}

#[derive(Clone, Debug)]
pub struct RealAdapterLayer {
    pub tune: RealLinear,
    pub up: RealLinear,
}

#[derive(Clone, Debug)]
pub struct ComplexAdapterLayer {
    pub tune: ComplexLinear,
    pub up: ComplexLinear,
}

#[derive(Clone, Debug)]
pub enum AdapterWeights {
    Real {
        whf: RealLinear,
        layers: Vec<RealAdapterLayer>,
    },
    Complex {
        whf: ComplexLinear,
        layers: Vec<ComplexAdapterLayer>,
    },
}

/// All trainable adapter state: theta_PE, the WHF projection, and the
/// per-layer projection pairs.
#[derive(Clone, Debug)]
pub struct AdapterStack {
    pub cfg: AdapterConfig,
    /// Embedding-Tune projection (always real; psi_pe is promoted later).
    pub embed: RealLinear,
    pub weights: AdapterWeights,
}

fn small_uniform(rng: &mut Prng, rows: usize, cols: usize) -> Tensor {
    let bound = 1.0 / (rows as f64).sqrt();
    Tensor::from_fn(vec![rows, cols], |_| rng.uniform_in(-bound, bound))
}

fn real_linear(rng: &mut Prng, rows: usize, cols: usize, zero: bool) -> RealLinear {
    let w = if zero {
        Tensor::zeros(vec![rows, cols])
    } else {
        small_uniform(rng, rows, cols)
    };
    RealLinear {
        w: Param::new(w),
        b: Param::new(Tensor::zeros(vec![cols])),
    }
}

fn complex_linear(rng: &mut Prng, rows: usize, cols: usize, zero: bool) -> ComplexLinear {
    let (wr, wi) = if zero {
        (Tensor::zeros(vec![rows, cols]), Tensor::zeros(vec![rows, cols]))
    } else {
        (small_uniform(rng, rows, cols), small_uniform(rng, rows, cols))
    };
    ComplexLinear {
        w: ComplexParam::new(wr, wi),
        b: ComplexParam::new(Tensor::zeros(vec![cols]), Tensor::zeros(vec![cols])),
    }
}

impl AdapterStack {
    /// Fresh stack. `embed_dim` is the encoder's token width, `whf_in` the
    /// flattened patch length of the WHF map (patch_size^2 * channels).
    pub fn init(cfg: AdapterConfig, embed_dim: usize, whf_in: usize, rng: &mut Prng) -> Result<Self> {
        cfg.validate()?;
        let embed = real_linear(rng, embed_dim, cfg.gamma, false);
        let weights = if cfg.is_complex {
            AdapterWeights::Complex {
                whf: complex_linear(rng, whf_in, cfg.gamma, false),
                layers: cfg
                    .layer_channels
                    .iter()
                    .map(|&ch| ComplexAdapterLayer {
                        tune: complex_linear(rng, cfg.adapter_input_channels(), cfg.gamma, false),
                        up: complex_linear(rng, cfg.gamma, ch, true),
                    })
                    .collect(),
            }
        } else {
            AdapterWeights::Real {
                whf: real_linear(rng, whf_in, cfg.gamma, false),
                layers: cfg
                    .layer_channels
                    .iter()
                    .map(|&ch| RealAdapterLayer {
                        tune: real_linear(rng, cfg.adapter_input_channels(), cfg.gamma, false),
                        up: real_linear(rng, cfg.gamma, ch, true),
                    })
                    .collect(),
            }
        };
        Ok(AdapterStack { cfg, embed, weights })
    }

    pub fn params(&self) -> Vec<&Param> {
        let mut out = vec![&self.embed.w, &self.embed.b];
        match &self.weights {
            AdapterWeights::Real { whf, layers } => {
                out.extend([&whf.w, &whf.b]);
                for l in layers {
                    out.extend([&l.tune.w, &l.tune.b, &l.up.w, &l.up.b]);
                }
            }
            AdapterWeights::Complex { whf, layers } => {
                out.extend([&whf.w.re, &whf.w.im, &whf.b.re, &whf.b.im]);
                for l in layers {
                    out.extend([
                        &l.tune.w.re,
                        &l.tune.w.im,
                        &l.tune.b.re,
                        &l.tune.b.im,
                        &l.up.w.re,
                        &l.up.w.im,
                        &l.up.b.re,
                        &l.up.b.im,
                    ]);
                }
            }
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut out = vec![&mut self.embed.w, &mut self.embed.b];
        match &mut self.weights {
            AdapterWeights::Real { whf, layers } => {
                out.extend([&mut whf.w, &mut whf.b]);
                for l in layers {
                    out.extend([&mut l.tune.w, &mut l.tune.b, &mut l.up.w, &mut l.up.b]);
                }
            }
            AdapterWeights::Complex { whf, layers } => {
                out.extend([&mut whf.w.re, &mut whf.w.im, &mut whf.b.re, &mut whf.b.im]);
                for l in layers {
                    out.extend([
                        &mut l.tune.w.re,
                        &mut l.tune.w.im,
                        &mut l.tune.b.re,
                        &mut l.tune.b.im,
                        &mut l.up.w.re,
                        &mut l.up.w.im,
                        &mut l.up.b.re,
                        &mut l.up.b.im,
                    ])
                }
            }
        }
        out
    }

    pub fn named_params(&self) -> Vec<(String, &Param)> {
        let mut out: Vec<(String, &Param)> = vec![
            ("adapters.embed.w".into(), &self.embed.w),
            ("adapters.embed.b".into(), &self.embed.b),
        ];
        match &self.weights {
            AdapterWeights::Real { whf, layers } => {
                out.push(("adapters.whf.w".into(), &whf.w));
                out.push(("adapters.whf.b".into(), &whf.b));
                for (i, l) in layers.iter().enumerate() {
                    out.push((format!("adapters.layer{i}.tune.w"), &l.tune.w));
                    out.push((format!("adapters.layer{i}.tune.b"), &l.tune.b));
                    out.push((format!("adapters.layer{i}.up.w"), &l.up.w));
                    out.push((format!("adapters.layer{i}.up.b"), &l.up.b));
                }
            }
            AdapterWeights::Complex { whf, layers } => {
                out.push(("adapters.whf.w.re".into(), &whf.w.re));
                out.push(("adapters.whf.w.im".into(), &whf.w.im));
                out.push(("adapters.whf.b.re".into(), &whf.b.re));
                out.push(("adapters.whf.b.im".into(), &whf.b.im));
                for (i, l) in layers.iter().enumerate() {
                    for (part, p) in [
                        ("tune.w.re", &l.tune.w.re),
                        ("tune.w.im", &l.tune.w.im),
                        ("tune.b.re", &l.tune.b.re),
                        ("tune.b.im", &l.tune.b.im),
                        ("up.w.re", &l.up.w.re),
                        ("up.w.im", &l.up.w.im),
                        ("up.b.re", &l.up.b.re),
                        ("up.b.im", &l.up.b.im),
                    ] {
                        out.push((format!("adapters.layer{i}.{part}"), p));
                    }
                }
            }
        }
        out
    }
}

// ---------------------------------------------------------------------------
// Tape-side mirrors and the forward operations
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug)]
pub struct LinearVars {
    pub w: Var,
    pub b: Var,
}

#[derive(Clone, Copy, Debug)]
pub struct CLinearVars {
    pub w: ComplexVar,
    pub b: ComplexVar,
}

pub enum AdapterWeightVars {
    Real {
        whf: LinearVars,
        layers: Vec<(LinearVars, LinearVars)>,
    },
    Complex {
        whf: CLinearVars,
        layers: Vec<(CLinearVars, CLinearVars)>,
    },
}

pub struct AdapterStackVars {
    pub cfg: AdapterConfig,
    pub embed: LinearVars,
    pub weights: AdapterWeightVars,
}

fn lift_linear(tape: &Tape, l: &RealLinear, trainable: bool) -> LinearVars {
    let lift = |p: &Param| if trainable { tape.param(&p.value) } else { tape.leaf(&p.value) };
    LinearVars {
        w: lift(&l.w),
        b: lift(&l.b),
    }
}

fn lift_clinear(tape: &Tape, l: &ComplexLinear, trainable: bool) -> CLinearVars {
    let lift = |p: &Param| if trainable { tape.param(&p.value) } else { tape.leaf(&p.value) };
    CLinearVars {
        w: ComplexVar { re: lift(&l.w.re), im: lift(&l.w.im) },
        b: ComplexVar { re: lift(&l.b.re), im: lift(&l.b.im) },
    }
}

impl AdapterStack {
    pub fn lift(&self, tape: &Tape, trainable: bool) -> AdapterStackVars {
        let embed = lift_linear(tape, &self.embed, trainable);
        let weights = match &self.weights {
            AdapterWeights::Real { whf, layers } => AdapterWeightVars::Real {
                whf: lift_linear(tape, whf, trainable),
                layers: layers
                    .iter()
                    .map(|l| {
                        (
                            lift_linear(tape, &l.tune, trainable),
                            lift_linear(tape, &l.up, trainable),
                        )
                    })
                    .collect(),
            },
            AdapterWeights::Complex { whf, layers } => AdapterWeightVars::Complex {
                whf: lift_clinear(tape, whf, trainable),
                layers: layers
                    .iter()
                    .map(|l| {
                        (
                            lift_clinear(tape, &l.tune, trainable),
                            lift_clinear(tape, &l.up, trainable),
                        )
                    })
                    .collect(),
            },
        };
        AdapterStackVars {
            cfg: self.cfg.clone(),
            embed,
            weights,
        }
    }
}

impl AdapterStackVars {
    /// Vars in the same order as [`AdapterStack::params`].
    pub fn flat_vars(&self) -> Vec<Var> {
        let mut out = vec![self.embed.w, self.embed.b];
        match &self.weights {
            AdapterWeightVars::Real { whf, layers } => {
                out.extend([whf.w, whf.b]);
                for (tune, up) in layers {
                    out.extend([tune.w, tune.b, up.w, up.b]);
                }
            }
            AdapterWeightVars::Complex { whf, layers } => {
                out.extend([whf.w.re, whf.w.im, whf.b.re, whf.b.im]);
                for (tune, up) in layers {
                    out.extend([
                        tune.w.re, tune.w.im, tune.b.re, tune.b.im, up.w.re, up.w.im, up.b.re,
                        up.b.im,
                    ]);
                }
            }
        }
        out
    }
}

/// Non-overlapping patchify: [H, W, C] -> [num_patches, p*p*C], patches in
/// row-major order, each flattened as (dy, dx, channel).
pub fn patchify(image: &Tensor, p: usize) -> Result<Tensor> {
    let (h, w, c) = match *image.shape() {
        [h, w, c] => (h, w, c),
        ref s => return Err(Error::shape(format!("patchify expects [H, W, C], got {s:?}"))),
    };
    if p == 0 || h % p != 0 || w % p != 0 {
        return Err(Error::shape(format!(
            "spatial size {h}x{w} not divisible by patch size {p}"
        )));
    }
    let (gh, gw) = (h / p, w / p);
    let mut out = Vec::with_capacity(h * w * c);
    for py in 0..gh {
        for px in 0..gw {
            for dy in 0..p {
                for dx in 0..p {
                    for ch in 0..c {
                        out.push(image.at3(py * p + dy, px * p + dx, ch));
                    }
                }
            }
        }
    }
    Tensor::new(vec![gh * gw, p * p * c], out)
}

/// Patchified WHF map ready for the WHF-Tune projection.
#[derive(Clone, Debug)]
pub enum WhfPatches {
    Real(Tensor),
    Complex(ComplexTensor),
}

impl WhfPatches {
    pub fn from_map(map: &crate::freqfeat::WhfMap, p: usize) -> Result<Self> {
        match &map.values {
            crate::freqfeat::WhfValues::Real(t) => Ok(WhfPatches::Real(patchify(t, p)?)),
            crate::freqfeat::WhfValues::Complex(z) => Ok(WhfPatches::Complex(ComplexTensor::new(
                patchify(&z.re, p)?,
                patchify(&z.im, p)?,
            )?)),
        }
    }

    pub fn is_complex(&self) -> bool {
        matches!(self, WhfPatches::Complex(_))
    }
}

/// A real or complex activation map on the tape.
#[derive(Clone, Copy, Debug)]
pub enum PsiVar {
    Real(Var),
    Complex(ComplexVar),
}

/// psi_pe: pointwise projection of the frozen patch embeddings.
pub fn embedding_tune(tape: &Tape, f_emb: Var, theta: &LinearVars) -> Result<Var> {
    let proj = tape.matmul(f_emb, theta.w)?;
    tape.add_bias(proj, theta.b)
}

/// psi_whf: patchify projection of the high-frequency map to gamma channels.
pub fn whf_tune(tape: &Tape, stack: &AdapterStackVars, patches: &WhfPatches) -> Result<PsiVar> {
    match (&stack.weights, patches) {
        (AdapterWeightVars::Real { whf, .. }, WhfPatches::Real(t)) => {
            let x = tape.leaf(t);
            let proj = tape.matmul(x, whf.w)?;
            Ok(PsiVar::Real(tape.add_bias(proj, whf.b)?))
        }
        (AdapterWeightVars::Complex { whf, .. }, WhfPatches::Complex(z)) => {
            let x = tape.cleaf(z);
            let proj = tape.cmatmul(x, whf.w)?;
            Ok(PsiVar::Complex(tape.cadd_bias(proj, whf.b)?))
        }
        (AdapterWeightVars::Complex { whf, .. }, WhfPatches::Real(t)) => {
            // real map into a complex stack: promote with zero imaginary part
            let x = tape.promote(tape.leaf(t));
            let proj = tape.cmatmul(x, whf.w)?;
            Ok(PsiVar::Complex(tape.cadd_bias(proj, whf.b)?))
        }
        (AdapterWeightVars::Real { .. }, WhfPatches::Complex(_)) => Err(Error::contract(
            "complex WHF map fed to a real adapter stack; take the real part explicitly",
        )),
    }
}

/// The adapter input: channel concatenation [psi_pe, psi_whf].
pub fn adapter_input(tape: &Tape, psi_pe: Var, psi_whf: &PsiVar) -> Result<PsiVar> {
    match psi_whf {
        PsiVar::Real(whf) => Ok(PsiVar::Real(tape.concat_cols(&[psi_pe, *whf])?)),
        PsiVar::Complex(whf) => {
            let pe = tape.promote(psi_pe);
            Ok(PsiVar::Complex(tape.cconcat_cols(&[pe, *whf])?))
        }
    }
}

/// P(i) = up_i(sigma(tune_i(Psi))), sigma = GeLU or split GeLU.
pub fn adapter_forward(
    tape: &Tape,
    stack: &AdapterStackVars,
    layer: usize,
    psi: &PsiVar,
) -> Result<PsiVar> {
    if layer >= stack.cfg.num_layers {
        return Err(Error::contract(format!(
            "adapter layer {layer} out of range (num_layers = {})",
            stack.cfg.num_layers
        )));
    }
    match (&stack.weights, psi) {
        (AdapterWeightVars::Real { layers, .. }, PsiVar::Real(psi)) => {
            let (tune, up) = &layers[layer];
            let t = tape.add_bias(tape.matmul(*psi, tune.w)?, tune.b)?;
            let a = tape.gelu(t)?;
            let p = tape.add_bias(tape.matmul(a, up.w)?, up.b)?;
            Ok(PsiVar::Real(p))
        }
        (AdapterWeightVars::Complex { layers, .. }, PsiVar::Complex(psi)) => {
            let (tune, up) = &layers[layer];
            let t = tape.cadd_bias(tape.cmatmul(*psi, tune.w)?, tune.b)?;
            let a = tape.split_gelu(t)?;
            let p = tape.cadd_bias(tape.cmatmul(a, up.w)?, up.b)?;
            Ok(PsiVar::Complex(p))
        }
        _ => Err(Error::contract("adapter stack and input disagree on real/complex")),
    }
}

/// Additive injection into a layer's feature map. Complex contributions add
/// their real and imaginary parts separately.
pub fn inject(tape: &Tape, features: Var, p: &PsiVar) -> Result<Var> {
    match p {
        PsiVar::Real(p) => tape.add(features, *p),
        PsiVar::Complex(p) => {
            let with_re = tape.add(features, p.re)?;
            tape.add(with_re, p.im)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn test_cfg(is_complex: bool) -> AdapterConfig {
        AdapterConfig {
            gamma: 4,
            num_layers: 2,
            layer_channels: vec![8, 8],
            is_complex,
            patch_size: 2,
        }
    }

    #[test]
    fn config_validation() {
        let mut cfg = test_cfg(false);
        cfg.layer_channels.pop();
        assert!(cfg.validate().is_err());
        assert!(test_cfg(false).validate().is_ok());
        assert_eq!(test_cfg(false).adapter_input_channels(), 8);
    }

    #[test]
    fn patchify_layout() {
        // 4x4x1 image, patch 2: patch rows in row-major grid order
        let img = Tensor::from_fn(vec![4, 4, 1], |i| i as f64);
        let p = patchify(&img, 2).unwrap();
        assert_eq!(p.shape(), &[4, 4]);
        // first patch covers (0,0),(0,1),(1,0),(1,1) = 0,1,4,5
        assert_eq!(&p.data()[0..4], &[0.0, 1.0, 4.0, 5.0]);
        // second patch covers columns 2..4 of rows 0..2
        assert_eq!(&p.data()[4..8], &[2.0, 3.0, 6.0, 7.0]);
        assert!(patchify(&img, 3).is_err());
    }

    #[test]
    fn embedding_tune_identity_and_zero() {
        let tape = Tape::new();
        let f_emb = Tensor::from_fn(vec![3, 4], |i| i as f64 * 0.1);
        let x = tape.leaf(&f_emb);
        // zero weights and bias -> psi_pe = 0
        let zero = LinearVars {
            w: tape.leaf(&Tensor::zeros(vec![4, 4])),
            b: tape.leaf(&Tensor::zeros(vec![4])),
        };
        let psi = embedding_tune(&tape, x, &zero).unwrap();
        assert!(tape.value(psi).data().iter().all(|&v| v == 0.0));
        // identity square projection -> psi_pe = f_emb
        let eye = LinearVars {
            w: tape.leaf(&Tensor::from_fn(vec![4, 4], |i| {
                if i / 4 == i % 4 {
                    1.0
                } else {
                    0.0
                }
            })),
            b: tape.leaf(&Tensor::zeros(vec![4])),
        };
        let psi = embedding_tune(&tape, x, &eye).unwrap();
        assert_eq!(tape.value(psi).data(), f_emb.data());
    }

    #[test]
    fn whf_tune_zero_weights_give_bias() {
        let mut rng = Prng::new(1);
        let mut stack =
            AdapterStack::init(test_cfg(false), 4, 2 * 2 * 3, &mut rng).unwrap();
        // zero the whf weights, set a recognizable bias
        if let AdapterWeights::Real { whf, .. } = &mut stack.weights {
            whf.w = Param::new(Tensor::zeros(vec![12, 4]));
            whf.b = Param::new(Tensor::full(vec![4], 0.37));
        }
        let tape = Tape::new();
        let vars = stack.lift(&tape, false);
        let patches = WhfPatches::Real(Tensor::from_fn(vec![9, 12], |i| i as f64));
        let PsiVar::Real(psi) = whf_tune(&tape, &vars, &patches).unwrap() else {
            unreachable!()
        };
        let out = tape.value(psi);
        assert_eq!(out.shape(), &[9, 4]);
        assert!(out.data().iter().all(|&v| v == 0.37));
    }

    #[test]
    fn zero_psi_zero_bias_gives_zero_output() {
        let mut rng = Prng::new(2);
        for is_complex in [false, true] {
            let stack =
                AdapterStack::init(test_cfg(is_complex), 4, 12, &mut rng).unwrap();
            let tape = Tape::new();
            let vars = stack.lift(&tape, false);
            let psi = if is_complex {
                PsiVar::Complex(tape.cleaf(&ComplexTensor::zeros(vec![5, 8])))
            } else {
                PsiVar::Real(tape.leaf(&Tensor::zeros(vec![5, 8])))
            };
            let p = adapter_forward(&tape, &vars, 0, &psi).unwrap();
            match p {
                PsiVar::Real(p) => {
                    assert!(tape.value(p).data().iter().all(|&v| v == 0.0))
                }
                PsiVar::Complex(p) => {
                    let z = tape.cvalue(p);
                    assert!(z.re.data().iter().all(|&v| v == 0.0));
                    assert!(z.im.data().iter().all(|&v| v == 0.0));
                }
            }
        }
    }

    #[test]
    fn real_path_equals_complex_path_with_zero_imaginary() {
        let mut rng = Prng::new(3);
        let real = AdapterStack::init(test_cfg(false), 4, 12, &mut rng).unwrap();
        // complex stack whose re components copy the real stack, im zero
        let mut complex = AdapterStack::init(test_cfg(true), 4, 12, &mut rng).unwrap();
        complex.embed = real.embed.clone();
        if let (AdapterWeights::Complex { whf, layers }, AdapterWeights::Real { whf: rwhf, layers: rlayers }) =
            (&mut complex.weights, &real.weights)
        {
            let zero_im = |cl: &mut ComplexLinear, rl: &RealLinear| {
                cl.w.re = rl.w.clone();
                cl.w.im = Param::new(Tensor::zeros(rl.w.value.shape().to_vec()));
                cl.b.re = rl.b.clone();
                cl.b.im = Param::new(Tensor::zeros(rl.b.value.shape().to_vec()));
            };
            zero_im(whf, rwhf);
            for (c, r) in layers.iter_mut().zip(rlayers) {
                zero_im(&mut c.tune, &r.tune);
                zero_im(&mut c.up, &r.up);
            }
        }
        let mut rng2 = Prng::new(7);
        let psi_data = Tensor::from_fn(vec![6, 8], |_| rng2.uniform_in(-1.0, 1.0));
        let tape = Tape::new();
        let rv = real.lift(&tape, false);
        let cv = complex.lift(&tape, false);
        let pr = adapter_forward(&tape, &rv, 1, &PsiVar::Real(tape.leaf(&psi_data))).unwrap();
        let pc = adapter_forward(
            &tape,
            &cv,
            1,
            &PsiVar::Complex(tape.cleaf(&ComplexTensor::from_real(psi_data.clone()))),
        )
        .unwrap();
        let (PsiVar::Real(pr), PsiVar::Complex(pc)) = (pr, pc) else {
            unreachable!()
        };
        let (r, c) = (tape.value(pr), tape.cvalue(pc));
        assert!(r.max_abs_diff(&c.re) < 1e-12);
        assert!(c.im.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn layers_are_independent() {
        let mut rng = Prng::new(4);
        let mut stack = AdapterStack::init(test_cfg(false), 4, 12, &mut rng).unwrap();
        // give the up projections nonzero weights so outputs are nontrivial
        if let AdapterWeights::Real { layers, .. } = &mut stack.weights {
            layers[0].up = real_linear(&mut rng, 4, 8, false);
            layers[1].up = real_linear(&mut rng, 4, 8, false);
        }
        let psi_data = Tensor::from_fn(vec![3, 8], |_| rng.uniform_in(-1.0, 1.0));
        let run = |s: &AdapterStack| -> Vec<f64> {
            let tape = Tape::new();
            let vars = s.lift(&tape, false);
            let PsiVar::Real(p) =
                adapter_forward(&tape, &vars, 0, &PsiVar::Real(tape.leaf(&psi_data))).unwrap()
            else {
                unreachable!()
            };
            tape.value(p).to_vec()
        };
        let before = run(&stack);
        if let AdapterWeights::Real { layers, .. } = &mut stack.weights {
            layers[1].up.w = Param::new(Tensor::full(vec![4, 8], 9.0));
        }
        let after = run(&stack);
        assert_eq!(before, after);
    }

    #[test]
    fn adapter_layer_out_of_range() {
        let mut rng = Prng::new(5);
        let stack = AdapterStack::init(test_cfg(false), 4, 12, &mut rng).unwrap();
        let tape = Tape::new();
        let vars = stack.lift(&tape, false);
        let psi = PsiVar::Real(tape.leaf(&Tensor::zeros(vec![2, 8])));
        assert!(matches!(
            adapter_forward(&tape, &vars, 2, &psi),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn inject_adds_real_and_imaginary_separately() {
        let tape = Tape::new();
        let f = tape.leaf(&Tensor::full(vec![2, 3], 1.0));
        // complex P with re = a, im = b -> F + a + b
        let p = PsiVar::Complex(ComplexVar {
            re: tape.leaf(&Tensor::full(vec![2, 3], 0.25)),
            im: tape.leaf(&Tensor::full(vec![2, 3], 0.5)),
        });
        let out = tape.value(inject(&tape, f, &p).unwrap());
        assert!(out.data().iter().all(|&v| v == 1.75));
        // zero P leaves features untouched
        let zero = PsiVar::Real(tape.leaf(&Tensor::zeros(vec![2, 3])));
        let same = tape.value(inject(&tape, f, &zero).unwrap());
        assert!(same.data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn inject_is_additive_in_p() {
        let mut rng = Prng::new(6);
        let tape = Tape::new();
        let f = tape.leaf(&Tensor::from_fn(vec![4, 2], |_| rng.uniform()));
        let p1 = Tensor::from_fn(vec![4, 2], |_| rng.uniform_in(-1.0, 1.0));
        let p2 = Tensor::from_fn(vec![4, 2], |_| rng.uniform_in(-1.0, 1.0));
        let sum = Tensor::from_fn(vec![4, 2], |i| p1.data()[i] + p2.data()[i]);
        let lhs = tape.value(
            inject(&tape, f, &PsiVar::Real(tape.leaf(&sum))).unwrap(),
        );
        let first = inject(&tape, f, &PsiVar::Real(tape.leaf(&p1))).unwrap();
        let rhs = tape.value(inject(&tape, first, &PsiVar::Real(tape.leaf(&p2))).unwrap());
        assert!(lhs.max_abs_diff(&rhs) < 1e-12);
    }

    #[test]
    fn grad_check_real_stack() {
        let mut rng = Prng::new(11);
        let mut stack = AdapterStack::init(test_cfg(false), 4, 12, &mut rng).unwrap();
        // non-zero up weights so gradients flow everywhere
        if let AdapterWeights::Real { layers, .. } = &mut stack.weights {
            for l in layers.iter_mut() {
                l.up = real_linear(&mut rng, 4, 8, false);
            }
        }
        let f_emb = Tensor::from_fn(vec![4, 4], |_| rng.uniform_in(-1.0, 1.0));
        let whf = Tensor::from_fn(vec![4, 12], |_| rng.uniform_in(-1.0, 1.0));
        let tensors: Vec<Tensor> = stack.params().iter().map(|p| p.value.clone()).collect();
        let cfg = stack.cfg.clone();
        let err = crate::autodiff::grad_check(&tensors, 1e-5, |tape, vs| {
            let vars = vars_from_slice(cfg.clone(), vs);
            let fe = tape.leaf(&f_emb);
            let psi_pe = embedding_tune(tape, fe, &vars.embed)?;
            let psi_whf = whf_tune(tape, &vars, &WhfPatches::Real(whf.clone()))?;
            let psi = adapter_input(tape, psi_pe, &psi_whf)?;
            let mut loss = None;
            for layer in 0..2 {
                let PsiVar::Real(p) = adapter_forward(tape, &vars, layer, &psi)? else {
                    unreachable!()
                };
                let s = tape.sum(tape.mul(p, p)?)?;
                loss = Some(match loss {
                    None => s,
                    Some(acc) => tape.add(acc, s)?,
                });
            }
            Ok(loss.unwrap())
        })
        .unwrap();
        assert!(err <= 1e-4, "real stack grad err {err}");
    }

    #[test]
    fn grad_check_complex_stack() {
        let mut rng = Prng::new(13);
        let mut stack = AdapterStack::init(test_cfg(true), 4, 12, &mut rng).unwrap();
        if let AdapterWeights::Complex { layers, .. } = &mut stack.weights {
            for l in layers.iter_mut() {
                l.up = complex_linear(&mut rng, 4, 8, false);
            }
        }
        let f_emb = Tensor::from_fn(vec![4, 4], |_| rng.uniform_in(-1.0, 1.0));
        let whf = ComplexTensor::new(
            Tensor::from_fn(vec![4, 12], |_| rng.uniform_in(-1.0, 1.0)),
            Tensor::from_fn(vec![4, 12], |_| rng.uniform_in(-1.0, 1.0)),
        )
        .unwrap();
        let tensors: Vec<Tensor> = stack.params().iter().map(|p| p.value.clone()).collect();
        let cfg = stack.cfg.clone();
        let err = crate::autodiff::grad_check(&tensors, 1e-5, |tape, vs| {
            let vars = vars_from_slice(cfg.clone(), vs);
            let fe = tape.leaf(&f_emb);
            let psi_pe = embedding_tune(tape, fe, &vars.embed)?;
            let psi_whf = whf_tune(tape, &vars, &WhfPatches::Complex(whf.clone()))?;
            let psi = adapter_input(tape, psi_pe, &psi_whf)?;
            let mut loss = None;
            for layer in 0..2 {
                let PsiVar::Complex(p) = adapter_forward(tape, &vars, layer, &psi)? else {
                    unreachable!()
                };
                let sr = tape.sum(tape.mul(p.re, p.re)?)?;
                let si = tape.sum(tape.mul(p.im, p.im)?)?;
                let s = tape.add(sr, si)?;
                loss = Some(match loss {
                    None => s,
                    Some(acc) => tape.add(acc, s)?,
                });
            }
            Ok(loss.unwrap())
        })
        .unwrap();
        assert!(err <= 1e-4, "complex stack grad err {err}");
    }

    /// Rebuild AdapterStackVars from a flat var slice in params() order;
    /// mirrors flat_vars() and is itself exercised by the grad checks.
    fn vars_from_slice(cfg: AdapterConfig, vs: &[Var]) -> AdapterStackVars {
        let mut it = vs.iter().copied();
        let mut next = || it.next().expect("var count matches params()");
        let embed = LinearVars { w: next(), b: next() };
        let weights = if cfg.is_complex {
            let whf = CLinearVars {
                w: ComplexVar { re: next(), im: next() },
                b: ComplexVar { re: next(), im: next() },
            };
            let layers = (0..cfg.num_layers)
                .map(|_| {
                    (
                        CLinearVars {
                            w: ComplexVar { re: next(), im: next() },
                            b: ComplexVar { re: next(), im: next() },
                        },
                        CLinearVars {
                            w: ComplexVar { re: next(), im: next() },
                            b: ComplexVar { re: next(), im: next() },
                        },
                    )
                })
                .collect();
            AdapterWeightVars::Complex { whf, layers }
        } else {
            let whf = LinearVars { w: next(), b: next() };
            let layers = (0..cfg.num_layers)
                .map(|_| {
                    (
                        LinearVars { w: next(), b: next() },
                        LinearVars { w: next(), b: next() },
                    )
                })
                .collect();
            AdapterWeightVars::Real { whf, layers }
        };
        AdapterStackVars {
            cfg,
            embed,
            weights,
        }
    }

    #[test]
    fn lift_order_matches_params_order() {
        let mut rng = Prng::new(20);
        for is_complex in [false, true] {
            let stack = AdapterStack::init(test_cfg(is_complex), 4, 12, &mut rng).unwrap();
            let tape = Tape::new();
            let vars = stack.lift(&tape, true);
            let flat = vars.flat_vars();
            let params = stack.params();
            assert_eq!(flat.len(), params.len());
            for (v, p) in flat.iter().zip(&params) {
                assert_eq!(tape.shape_of(*v), p.value.shape().to_vec());
            }
            assert_eq!(params.len(), stack.named_params().len());
        }
    }
}
