//! The toy frozen backbone: a pre-norm transformer encoder over image patches
//! and a small learned-upsampling decoder producing one logit per pixel.
//!
//! Adapter hooks: when a stack is supplied, P(i) is added to every block's
//! input token map. With freshly initialized (zero up-projection) adapters the
//! forward pass is bit-identical to the plain encoder.

use serde::{Deserialize, Serialize};

use crate::adapters::{
    adapter_forward, adapter_input, embedding_tune, inject, patchify, whf_tune, AdapterStackVars,
    LinearVars, PsiVar, WhfPatches,
};
use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::rng::Prng;
use crate::tensor::{Param, Tensor};

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq, Eq)]
pub struct EncoderConfig {
    pub image_size: usize,
    pub patch_size: usize,
    pub embed_dim: usize,
    pub depth: usize,
    pub heads: usize,
    pub mlp_ratio: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            image_size: 64,
            patch_size: 4,
            embed_dim: 64,
            depth: 4,
            heads: 4,
            mlp_ratio: 2,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.image_size == 0 || self.patch_size == 0 || self.image_size % self.patch_size != 0 {
            return Err(Error::config(format!(
                "image_size {} must be divisible by patch_size {}",
                self.image_size, self.patch_size
            )));
        }
        if self.heads == 0 || self.embed_dim % self.heads != 0 {
            return Err(Error::config(format!(
                "embed_dim {} must be divisible by heads {}",
                self.embed_dim, self.heads
            )));
        }
        if self.depth == 0 || self.mlp_ratio == 0 {
            return Err(Error::config("depth and mlp_ratio must be >= 1"));
        }
        Ok(())
    }

    pub fn grid(&self) -> usize {
        self.image_size / self.patch_size
    }

    pub fn num_tokens(&self) -> usize {
        self.grid() * self.grid()
    }

    pub fn patch_dim(&self) -> usize {
        self.patch_size * self.patch_size * 3
    }
}

#[derive(Clone, Debug)]
pub struct LayerNormParams {
    pub gamma: Param,
    pub beta: Param,
}

impl LayerNormParams {
    fn init(dim: usize) -> Self {
        LayerNormParams {
            gamma: Param::new(Tensor::full(vec![dim], 1.0)),
            beta: Param::new(Tensor::zeros(vec![dim])),
        }
    }
}

#[derive(Clone, Debug)]
pub struct BlockParams {
    pub norm1: LayerNormParams,
    pub wq: Param,
    pub bq: Param,
    pub wk: Param,
    pub wv: Param,
    pub bv: Param,
    pub wo: Param,
    pub bo: Param,
    pub norm2: LayerNormParams,
    pub mlp_w1: Param,
    pub mlp_b1: Param,
    pub mlp_w2: Param,
    pub mlp_b2: Param,
}

/// The encoder's parameters; `frozen` marks it immutable for adaptation.
#[derive(Clone, Debug)]
pub struct EncoderState {
    pub cfg: EncoderConfig,
    pub patch_w: Param,
    pub patch_b: Param,
    pub pos: Param,
    pub blocks: Vec<BlockParams>,
    pub final_norm: LayerNormParams,
    pub frozen: bool,
}

fn uniform_fan_in(rng: &mut Prng, rows: usize, cols: usize) -> Param {
    let bound = 1.0 / (rows as f64).sqrt();
    Param::new(Tensor::from_fn(vec![rows, cols], |_| {
        rng.uniform_in(-bound, bound)
    }))
}

impl EncoderState {
    pub fn init(cfg: EncoderConfig, rng: &mut Prng) -> Result<Self> {
        cfg.validate()?;
        let d = cfg.embed_dim;
        let blocks = (0..cfg.depth)
            .map(|_| BlockParams {
                norm1: LayerNormParams::init(d),
                wq: uniform_fan_in(rng, d, d),
                bq: Param::new(Tensor::zeros(vec![d])),
                wk: uniform_fan_in(rng, d, d),
                wv: uniform_fan_in(rng, d, d),
                bv: Param::new(Tensor::zeros(vec![d])),
                wo: uniform_fan_in(rng, d, d),
                bo: Param::new(Tensor::zeros(vec![d])),
                norm2: LayerNormParams::init(d),
                mlp_w1: uniform_fan_in(rng, d, cfg.mlp_ratio * d),
                mlp_b1: Param::new(Tensor::zeros(vec![cfg.mlp_ratio * d])),
                mlp_w2: uniform_fan_in(rng, cfg.mlp_ratio * d, d),
                mlp_b2: Param::new(Tensor::zeros(vec![d])),
            })
            .collect();
        Ok(EncoderState {
            patch_w: uniform_fan_in(rng, cfg.patch_dim(), d),
            patch_b: Param::new(Tensor::zeros(vec![d])),
            pos: Param::new(Tensor::from_fn(vec![cfg.num_tokens(), d], |_| {
                0.02 * rng.normal()
            })),
            blocks,
            final_norm: LayerNormParams::init(d),
            frozen: false,
            cfg,
        })
    }

    pub fn params(&self) -> Vec<&Param> {
        let mut out = vec![&self.patch_w, &self.patch_b, &self.pos];
        for b in &self.blocks {
            out.extend([
                &b.norm1.gamma,
                &b.norm1.beta,
                &b.wq,
                &b.bq,
                &b.wk,
                &b.wv,
                &b.bv,
                &b.wo,
                &b.bo,
                &b.norm2.gamma,
                &b.norm2.beta,
                &b.mlp_w1,
                &b.mlp_b1,
                &b.mlp_w2,
                &b.mlp_b2,
            ]);
        }
        out.extend([&self.final_norm.gamma, &self.final_norm.beta]);
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut out = vec![&mut self.patch_w, &mut self.patch_b, &mut self.pos];
        for b in &mut self.blocks {
            out.extend([
                &mut b.norm1.gamma,
                &mut b.norm1.beta,
                &mut b.wq,
                &mut b.bq,
                &mut b.wk,
                &mut b.wv,
                &mut b.bv,
                &mut b.wo,
                &mut b.bo,
                &mut b.norm2.gamma,
                &mut b.norm2.beta,
                &mut b.mlp_w1,
                &mut b.mlp_b1,
                &mut b.mlp_w2,
                &mut b.mlp_b2,
            ]);
        }
        out.extend([&mut self.final_norm.gamma, &mut self.final_norm.beta]);
        out
    }

    pub fn named_params(&self) -> Vec<(String, &Param)> {
        let mut out: Vec<(String, &Param)> = vec![
            ("encoder.patch_w".into(), &self.patch_w),
            ("encoder.patch_b".into(), &self.patch_b),
            ("encoder.pos".into(), &self.pos),
        ];
        for (i, b) in self.blocks.iter().enumerate() {
            for (part, p) in [
                ("norm1.gamma", &b.norm1.gamma),
                ("norm1.beta", &b.norm1.beta),
                ("wq", &b.wq),
                ("bq", &b.bq),
                ("wk", &b.wk),
                ("wv", &b.wv),
                ("bv", &b.bv),
                ("wo", &b.wo),
                ("bo", &b.bo),
                ("norm2.gamma", &b.norm2.gamma),
                ("norm2.beta", &b.norm2.beta),
                ("mlp_w1", &b.mlp_w1),
                ("mlp_b1", &b.mlp_b1),
                ("mlp_w2", &b.mlp_w2),
                ("mlp_b2", &b.mlp_b2),
            ] {
                out.push((format!("encoder.block{i}.{part}"), p));
            }
        }
        out.push(("encoder.final_norm.gamma".into(), &self.final_norm.gamma));
        out.push(("encoder.final_norm.beta".into(), &self.final_norm.beta));
        out
    }

    /// SHA-256 over all parameter tensors, for freeze audits.
    pub fn digest(&self) -> [u8; 32] {
        use sha2::{Digest, Sha256};
        let mut hasher = Sha256::new();
        for (name, p) in self.named_params() {
            hasher.update(name.as_bytes());
            let mut buf = Vec::new();
            crate::wvt1::write_wvt1(&mut buf, &p.value).expect("in-memory write");
            hasher.update(&buf);
        }
        hasher.finalize().into()
    }
}

/// One 2x learned upsampling stage: a 2x2-kernel stride-2 transposed
/// convolution expressed as four pointwise maps plus a shared bias.
#[derive(Clone, Debug)]
pub struct UpStage {
    pub quads: [Param; 4],
    pub bias: Param,
}

impl UpStage {
    fn init(rng: &mut Prng, c_in: usize, c_out: usize) -> Self {
        UpStage {
            quads: std::array::from_fn(|_| uniform_fan_in(rng, c_in, c_out)),
            bias: Param::new(Tensor::zeros(vec![c_out])),
        }
    }
}

/// Two upsampling stages then a pointwise linear classifier to one logit
/// channel; output spatial size equals the input image size.
#[derive(Clone, Debug)]
pub struct DecoderState {
    pub enc_cfg: EncoderConfig,
    pub up1: UpStage,
    pub up2: UpStage,
    pub head_w: Param,
    pub head_b: Param,
}

impl DecoderState {
    pub fn init(enc_cfg: &EncoderConfig, rng: &mut Prng) -> Self {
        let d = enc_cfg.embed_dim;
        let c1 = (d / 2).max(1);
        let c2 = (d / 4).max(1);
        DecoderState {
            enc_cfg: enc_cfg.clone(),
            up1: UpStage::init(rng, d, c1),
            up2: UpStage::init(rng, c1, c2),
            head_w: uniform_fan_in(rng, c2, 1),
            head_b: Param::new(Tensor::zeros(vec![1])),
        }
    }

    pub fn params(&self) -> Vec<&Param> {
        let mut out = Vec::new();
        for stage in [&self.up1, &self.up2] {
            out.extend(stage.quads.iter());
            out.push(&stage.bias);
        }
        out.extend([&self.head_w, &self.head_b]);
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut out = Vec::new();
        for stage in [&mut self.up1, &mut self.up2] {
            out.extend(stage.quads.iter_mut());
            out.push(&mut stage.bias);
        }
        out.extend([&mut self.head_w, &mut self.head_b]);
        out
    }

    pub fn named_params(&self) -> Vec<(String, &Param)> {
        let mut out = Vec::new();
        for (si, stage) in [&self.up1, &self.up2].into_iter().enumerate() {
            for (qi, q) in stage.quads.iter().enumerate() {
                out.push((format!("decoder.up{}.q{qi}", si + 1), q));
            }
            out.push((format!("decoder.up{}.bias", si + 1), &stage.bias));
        }
        out.push(("decoder.head_w".into(), &self.head_w));
        out.push(("decoder.head_b".into(), &self.head_b));
        out
    }
}

// ---------------------------------------------------------------------------
// Tape-side mirrors
// ---------------------------------------------------------------------------

pub struct BlockVars {
    pub norm1: (Var, Var),
    pub wq: Var,
    pub bq: Var,
    pub wk: Var,
    pub wv: Var,
    pub bv: Var,
    pub wo: Var,
    pub bo: Var,
    pub norm2: (Var, Var),
    pub mlp_w1: Var,
    pub mlp_b1: Var,
    pub mlp_w2: Var,
    pub mlp_b2: Var,
}

pub struct EncoderVars {
    pub patch: LinearVars,
    pub pos: Var,
    pub blocks: Vec<BlockVars>,
    pub final_norm: (Var, Var),
}

impl EncoderState {
    pub fn lift(&self, tape: &Tape, trainable: bool) -> EncoderVars {
        let lift = |p: &Param| if trainable { tape.param(&p.value) } else { tape.leaf(&p.value) };
        EncoderVars {
            patch: LinearVars {
                w: lift(&self.patch_w),
                b: lift(&self.patch_b),
            },
            pos: lift(&self.pos),
            blocks: self
                .blocks
                .iter()
                .map(|b| BlockVars {
                    norm1: (lift(&b.norm1.gamma), lift(&b.norm1.beta)),
                    wq: lift(&b.wq),
                    bq: lift(&b.bq),
                    wk: lift(&b.wk),
                    wv: lift(&b.wv),
                    bv: lift(&b.bv),
                    wo: lift(&b.wo),
                    bo: lift(&b.bo),
                    norm2: (lift(&b.norm2.gamma), lift(&b.norm2.beta)),
                    mlp_w1: lift(&b.mlp_w1),
                    mlp_b1: lift(&b.mlp_b1),
                    mlp_w2: lift(&b.mlp_w2),
                    mlp_b2: lift(&b.mlp_b2),
                })
                .collect(),
            final_norm: (lift(&self.final_norm.gamma), lift(&self.final_norm.beta)),
        }
    }
}

impl EncoderVars {
    /// Vars in the same order as [`EncoderState::params`].
    pub fn flat_vars(&self) -> Vec<Var> {
        let mut out = vec![self.patch.w, self.patch.b, self.pos];
        for b in &self.blocks {
            out.extend([
                b.norm1.0, b.norm1.1, b.wq, b.bq, b.wk, b.wv, b.bv, b.wo, b.bo, b.norm2.0,
                b.norm2.1, b.mlp_w1, b.mlp_b1, b.mlp_w2, b.mlp_b2,
            ]);
        }
        out.extend([self.final_norm.0, self.final_norm.1]);
        out
    }
}

pub struct UpStageVars {
    pub quads: [Var; 4],
    pub bias: Var,
}

pub struct DecoderVars {
    pub up1: UpStageVars,
    pub up2: UpStageVars,
    pub head: LinearVars,
}

impl DecoderState {
    pub fn lift(&self, tape: &Tape, trainable: bool) -> DecoderVars {
        let lift = |p: &Param| if trainable { tape.param(&p.value) } else { tape.leaf(&p.value) };
        let stage = |s: &UpStage| UpStageVars {
            quads: std::array::from_fn(|i| lift(&s.quads[i])),
            bias: lift(&s.bias),
        };
        DecoderVars {
            up1: stage(&self.up1),
            up2: stage(&self.up2),
            head: LinearVars {
                w: lift(&self.head_w),
                b: lift(&self.head_b),
            },
        }
    }
}

impl DecoderVars {
    pub fn flat_vars(&self) -> Vec<Var> {
        let mut out = Vec::new();
        for s in [&self.up1, &self.up2] {
            out.extend(s.quads);
            out.push(s.bias);
        }
        out.extend([self.head.w, self.head.b]);
        out
    }
}

// ---------------------------------------------------------------------------
// Forward passes
// ---------------------------------------------------------------------------

pub struct EncoderOutput {
    /// Frozen patch-embedding output, the Embedding-Tune input.
    pub f_emb: Var,
    /// The (possibly adapter-injected) input token map of every block.
    pub block_inputs: Vec<Var>,
    /// Final tokens after the last block and closing layer norm.
    pub tokens: Var,
}

fn block_forward(tape: &Tape, blk: &BlockVars, x: Var, heads: usize) -> Result<Var> {
    let d = tape.shape_of(x)[1];
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let n1 = tape.layer_norm(x, blk.norm1.0, blk.norm1.1, 1e-6)?;
    let q = tape.add_bias(tape.matmul(n1, blk.wq)?, blk.bq)?;
    // no key bias: softmax rows are invariant to it, the parameter would be inert
    let k = tape.matmul(n1, blk.wk)?;
    let v = tape.add_bias(tape.matmul(n1, blk.wv)?, blk.bv)?;
    let mut heads_out = Vec::with_capacity(heads);
    for h in 0..heads {
        let qh = tape.narrow_cols(q, h * dh, dh)?;
        let kh = tape.narrow_cols(k, h * dh, dh)?;
        let vh = tape.narrow_cols(v, h * dh, dh)?;
        let scores = tape.scale(tape.matmul(qh, tape.transpose(kh)?)?, scale)?;
        let attn = tape.softmax_rows(scores)?;
        heads_out.push(tape.matmul(attn, vh)?);
    }
    let concat = tape.concat_cols(&heads_out)?;
    let proj = tape.add_bias(tape.matmul(concat, blk.wo)?, blk.bo)?;
    let x = tape.add(x, proj)?;
    let n2 = tape.layer_norm(x, blk.norm2.0, blk.norm2.1, 1e-6)?;
    let m = tape.add_bias(tape.matmul(n2, blk.mlp_w1)?, blk.mlp_b1)?;
    let m = tape.gelu(m)?;
    let m = tape.add_bias(tape.matmul(m, blk.mlp_w2)?, blk.mlp_b2)?;
    tape.add(x, m)
}

/// Forward pass over one image's pre-extracted patches
/// ([num_tokens, patch_dim]); when adapters are supplied, each block's input
/// receives its P(i).
pub fn encoder_forward(
    tape: &Tape,
    enc: &EncoderVars,
    cfg: &EncoderConfig,
    patches: &Tensor,
    adapters: Option<(&AdapterStackVars, &WhfPatches)>,
) -> Result<EncoderOutput> {
    if patches.shape() != [cfg.num_tokens(), cfg.patch_dim()] {
        return Err(Error::shape(format!(
            "patches {:?}, expected [{}, {}]",
            patches.shape(),
            cfg.num_tokens(),
            cfg.patch_dim()
        )));
    }
    let x = tape.leaf(patches);
    let f_emb = tape.add_bias(tape.matmul(x, enc.patch.w)?, enc.patch.b)?;

    let injections: Option<Vec<PsiVar>> = match adapters {
        None => None,
        Some((stack, whf_patches)) => {
            let psi_pe = embedding_tune(tape, f_emb, &stack.embed)?;
            let psi_whf = whf_tune(tape, stack, whf_patches)?;
            let psi = adapter_input(tape, psi_pe, &psi_whf)?;
            let mut ps = Vec::with_capacity(cfg.depth);
            for layer in 0..cfg.depth {
                ps.push(adapter_forward(tape, stack, layer, &psi)?);
            }
            Some(ps)
        }
    };

    let mut tokens = tape.add(f_emb, enc.pos)?;
    let mut block_inputs = Vec::with_capacity(cfg.depth);
    for (i, blk) in enc.blocks.iter().enumerate() {
        if let Some(ps) = &injections {
            tokens = inject(tape, tokens, &ps[i])?;
        }
        block_inputs.push(tokens);
        tokens = block_forward(tape, blk, tokens, cfg.heads)?;
    }
    let tokens = tape.layer_norm(tokens, enc.final_norm.0, enc.final_norm.1, 1e-6)?;
    Ok(EncoderOutput {
        f_emb,
        block_inputs,
        tokens,
    })
}

fn up_stage(tape: &Tape, s: &UpStageVars, x: Var, h: usize, w: usize) -> Result<Var> {
    let quads: [Var; 4] = [
        tape.matmul(x, s.quads[0])?,
        tape.matmul(x, s.quads[1])?,
        tape.matmul(x, s.quads[2])?,
        tape.matmul(x, s.quads[3])?,
    ];
    let grid = tape.interleave_2x2(h, w, quads)?;
    tape.add_bias(grid, s.bias)
}

/// Tokens to per-pixel logits ([image_size * image_size]).
pub fn decoder_forward(tape: &Tape, dec: &DecoderVars, cfg: &EncoderConfig, tokens: Var) -> Result<Var> {
    let g = cfg.grid();
    if tape.shape_of(tokens) != [cfg.num_tokens(), cfg.embed_dim] {
        return Err(Error::shape(format!(
            "tokens {:?}, expected [{}, {}]",
            tape.shape_of(tokens),
            cfg.num_tokens(),
            cfg.embed_dim
        )));
    }
    let u1 = tape.gelu(up_stage(tape, &dec.up1, tokens, g, g)?)?;
    let u2 = tape.gelu(up_stage(tape, &dec.up2, u1, 2 * g, 2 * g)?)?;
    let logits = tape.add_bias(tape.matmul(u2, dec.head.w)?, dec.head.b)?;
    let side = 4 * g;
    let logits = if side != cfg.image_size {
        tape.bilinear_rows(logits, side, side, cfg.image_size, cfg.image_size)?
    } else {
        logits
    };
    tape.reshape(logits, vec![cfg.image_size * cfg.image_size])
}

/// Image [H, W, 3] to flattened patch rows for [`encoder_forward`].
pub fn image_patches(cfg: &EncoderConfig, image: &Tensor) -> Result<Tensor> {
    if image.shape() != [cfg.image_size, cfg.image_size, 3] {
        return Err(Error::shape(format!(
            "image {:?}, expected [{s}, {s}, 3]",
            image.shape(),
            s = cfg.image_size
        )));
    }
    patchify(image, cfg.patch_size)
}
