//! Training loops: encoder pretraining on the source task, and adaptation of
//! the decoder plus adapter stack against a frozen encoder.
//!
//! Everything is deterministic per seed: initialization, batch order and the
//! optimizer state all derive from the config's seed through the counter PRNG,
//! and training runs single-threaded. Evaluation fans out over a worker pool
//! (capped by `SAMWAVE_THREADS`) with per-image isolation and index-ordered
//! reduction.

use serde::{Deserialize, Serialize};

use crate::adapters::{AdapterConfig, AdapterStack, WhfPatches};
use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::freqfeat::{
    fourier_filter, whf_extract, whf_extract_selected, FreqMaskConfig, MaskMode,
    SubbandSelection, WhfWavelet,
};
use crate::model::{
    decoder_forward, encoder_forward, image_patches, DecoderState, EncoderConfig, EncoderState,
};
use crate::objectives::{
    aggregate, bbce_var, bce_var, combined_cod_loss_var, metrics, DatasetMetrics, Mask,
    MaskMetrics, ZETA_EPS,
};
use crate::rng::Prng;
use crate::synthdata::{SynthSample, Task};
use crate::tensor::{Param, Tensor};
use crate::wavelets::WaveletName;

#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossKind {
    Bce,
    Bbce,
    CombinedCod,
}

impl LossKind {
    /// The per-task default objective.
    pub fn for_task(task: Task) -> Self {
        match task {
            Task::Camouflage => LossKind::CombinedCod,
            Task::Shadow => LossKind::Bbce,
            Task::Defocus | Task::Blobs => LossKind::Bce,
        }
    }

    fn apply(&self, tape: &Tape, pred: Var, gt: Var) -> Result<Var> {
        match self {
            LossKind::Bce => bce_var(tape, pred, gt),
            LossKind::Bbce => bbce_var(tape, pred, gt, ZETA_EPS, false),
            LossKind::CombinedCod => combined_cod_loss_var(tape, pred, gt),
        }
    }
}

/// What the WHF-Tune projection consumes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum FeatureSource {
    /// The production pipeline: sum of detail subbands of the named wavelet.
    Wavelet { wavelet: String },
    /// Ablation variant: a subset of a real family's subbands.
    WaveletSubbands {
        wavelet: String,
        ll: bool,
        lh: bool,
        hl: bool,
        hh: bool,
    },
    /// The fixed-mask Fourier baseline.
    Fourier { tau: f64, highpass: bool },
}

impl FeatureSource {
    pub fn wavelet(name: &str) -> Result<Self> {
        WhfWavelet::parse(name)?;
        Ok(FeatureSource::Wavelet {
            wavelet: name.to_string(),
        })
    }

    pub fn subbands(name: WaveletName, sel: SubbandSelection) -> Self {
        FeatureSource::WaveletSubbands {
            wavelet: name.as_str().to_string(),
            ll: sel.ll,
            lh: sel.lh,
            hl: sel.hl,
            hh: sel.hh,
        }
    }

    pub fn fourier(cfg: FreqMaskConfig) -> Self {
        FeatureSource::Fourier {
            tau: cfg.tau,
            highpass: cfg.mode == MaskMode::Highpass,
        }
    }

    pub fn is_complex(&self) -> Result<bool> {
        match self {
            FeatureSource::Wavelet { wavelet } => Ok(WhfWavelet::parse(wavelet)?.is_complex()),
            _ => Ok(false),
        }
    }

    pub fn label(&self) -> String {
        match self {
            FeatureSource::Wavelet { wavelet } => wavelet.clone(),
            FeatureSource::WaveletSubbands {
                wavelet,
                ll,
                lh,
                hl,
                hh,
            } => {
                let sel = SubbandSelection {
                    ll: *ll,
                    lh: *lh,
                    hl: *hl,
                    hh: *hh,
                };
                format!("{wavelet}[{}]", sel.label())
            }
            FeatureSource::Fourier { tau, highpass } => {
                format!("fourier-{}-tau{tau}", if *highpass { "hf" } else { "lf" })
            }
        }
    }

    /// Extract and patchify the WHF-Tune input for one image.
    pub fn whf_patches(&self, image: &Tensor, patch_size: usize) -> Result<WhfPatches> {
        match self {
            FeatureSource::Wavelet { wavelet } => {
                let map = whf_extract(image, WhfWavelet::parse(wavelet)?)?;
                WhfPatches::from_map(&map, patch_size)
            }
            FeatureSource::WaveletSubbands {
                wavelet,
                ll,
                lh,
                hl,
                hh,
            } => {
                let sel = SubbandSelection {
                    ll: *ll,
                    lh: *lh,
                    hl: *hl,
                    hh: *hh,
                };
                let map = whf_extract_selected(image, WaveletName::parse(wavelet)?, sel)?;
                Ok(WhfPatches::Real(crate::adapters::patchify(&map, patch_size)?))
            }
            FeatureSource::Fourier { tau, highpass } => {
                let cfg = FreqMaskConfig::new(
                    *tau,
                    if *highpass {
                        MaskMode::Highpass
                    } else {
                        MaskMode::Lowpass
                    },
                )?;
                let map = fourier_filter(image, &cfg)?;
                Ok(WhfPatches::Real(crate::adapters::patchify(&map, patch_size)?))
            }
        }
    }
}

/// Adaptation settings: what is trained, with which objective and schedule.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub seed: u64,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub loss: LossKind,
    /// Adapter channel width.
    pub gamma: usize,
    /// None disables the adapters entirely (decoder-only run).
    pub feature: Option<FeatureSource>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            seed: 7,
            epochs: 4,
            batch_size: 8,
            lr: 1e-3,
            weight_decay: 1e-4,
            loss: LossKind::CombinedCod,
            gamma: 16,
            feature: Some(FeatureSource::Wavelet {
                wavelet: "haar".into(),
            }),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PretrainConfig {
    pub seed: u64,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub encoder: EncoderConfig,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig {
            seed: 1,
            epochs: 6,
            batch_size: 8,
            lr: 1e-3,
            weight_decay: 1e-4,
            encoder: EncoderConfig::default(),
        }
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct TrainLogRow {
    pub step: usize,
    pub epoch: usize,
    pub loss: f64,
    pub lr: f64,
}

// ---------------------------------------------------------------------------
// Optimizer
// ---------------------------------------------------------------------------

/// Adam with decoupled weight decay and cosine learning-rate decay.
pub struct AdamW {
    lr: f64,
    weight_decay: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: usize,
    total_steps: usize,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamW {
    pub fn new(params: &[&Param], lr: f64, weight_decay: f64, total_steps: usize) -> Self {
        AdamW {
            lr,
            weight_decay,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            total_steps: total_steps.max(1),
            m: params.iter().map(|p| vec![0.0; p.value.numel()]).collect(),
            v: params.iter().map(|p| vec![0.0; p.value.numel()]).collect(),
        }
    }

    pub fn current_lr(&self) -> f64 {
        let progress = self.t as f64 / self.total_steps as f64;
        self.lr * 0.5 * (1.0 + (std::f64::consts::PI * progress.min(1.0)).cos())
    }

    /// One update over the parameter list; order must match `new`.
    pub fn step(&mut self, params: &mut [&mut Param]) -> Result<()> {
        if params.len() != self.m.len() {
            return Err(Error::contract("optimizer/parameter count mismatch"));
        }
        let lr_now = self.current_lr();
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (i, p) in params.iter_mut().enumerate() {
            let grad = p
                .grad
                .as_ref()
                .ok_or_else(|| Error::contract("optimizer step without gradients"))?;
            let mut data = p.value.to_vec();
            for (j, g) in grad.data().iter().enumerate() {
                let m = &mut self.m[i][j];
                let v = &mut self.v[i][j];
                *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                let mh = *m / bc1;
                let vh = *v / bc2;
                data[j] -= lr_now * (mh / (vh.sqrt() + self.eps) + self.weight_decay * data[j]);
            }
            p.value = Tensor::new(p.value.shape().to_vec(), data)?;
            p.grad = None;
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Shared machinery
// ---------------------------------------------------------------------------

struct PreparedSample {
    patches: Tensor,
    gt: Tensor,
    whf: Option<WhfPatches>,
}

fn prepare(
    samples: &[SynthSample],
    cfg: &EncoderConfig,
    feature: Option<&FeatureSource>,
) -> Result<Vec<PreparedSample>> {
    samples
        .iter()
        .map(|s| {
            Ok(PreparedSample {
                patches: image_patches(cfg, &s.image)?,
                gt: s.gt.reshape(vec![cfg.image_size * cfg.image_size])?,
                whf: feature
                    .map(|f| f.whf_patches(&s.image, cfg.patch_size))
                    .transpose()?,
            })
        })
        .collect()
}

fn assign_grads(
    tape: &Tape,
    grads: &crate::autodiff::Gradients,
    vars: &[Var],
    params: &mut [&mut Param],
) -> Result<()> {
    let _ = tape;
    for (v, p) in vars.iter().zip(params.iter_mut()) {
        let g = grads
            .wrt(*v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(p.value.shape().to_vec()));
        p.set_grad(g)?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Pretraining
// ---------------------------------------------------------------------------

pub struct PretrainOutcome {
    pub encoder: EncoderState,
    /// mIoU of the discarded pretraining head on the held-out source split.
    pub source_miou: f64,
    pub log: Vec<TrainLogRow>,
}

/// Train encoder + decoder end to end on the source task, freeze the encoder,
/// and discard the pretraining decoder.
pub fn pretrain_encoder(
    train: &[SynthSample],
    heldout: &[SynthSample],
    cfg: &PretrainConfig,
) -> Result<PretrainOutcome> {
    let root = Prng::new(cfg.seed);
    let mut enc = EncoderState::init(cfg.encoder.clone(), &mut root.derive(1))?;
    let mut dec = DecoderState::init(&cfg.encoder, &mut root.derive(2));
    let prepared = prepare(train, &cfg.encoder, None)?;
    let steps_per_epoch = prepared.len().div_ceil(cfg.batch_size);
    let total_steps = steps_per_epoch * cfg.epochs;
    let mut opt = {
        let mut refs: Vec<&Param> = enc.params();
        refs.extend(dec.params());
        AdamW::new(&refs, cfg.lr, cfg.weight_decay, total_steps)
    };
    let mut log = Vec::new();
    let mut shuffle_rng = root.derive(3);
    let mut step = 0;
    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..prepared.len()).collect();
        shuffle_rng.shuffle(&mut order);
        for batch in order.chunks(cfg.batch_size) {
            let tape = Tape::new();
            let ev = enc.lift(&tape, true);
            let dv = dec.lift(&tape, true);
            let mut total: Option<Var> = None;
            for &idx in batch {
                let s = &prepared[idx];
                let out = encoder_forward(&tape, &ev, &cfg.encoder, &s.patches, None)?;
                let logits = decoder_forward(&tape, &dv, &cfg.encoder, out.tokens)?;
                let pred = tape.sigmoid(logits)?;
                let gt = tape.leaf(&s.gt);
                let loss = LossKind::Bce.apply(&tape, pred, gt)?;
                total = Some(match total {
                    None => loss,
                    Some(acc) => tape.add(acc, loss)?,
                });
            }
            let loss = tape.scale(total.expect("non-empty batch"), 1.0 / batch.len() as f64)?;
            let loss_value = tape.value(loss).item()?;
            let lr_now = opt.current_lr();
            let grads = tape.backward(loss)?;
            let mut vars = ev.flat_vars();
            vars.extend(dv.flat_vars());
            let mut params: Vec<&mut Param> = enc.params_mut();
            params.extend(dec.params_mut());
            assign_grads(&tape, &grads, &vars, &mut params)?;
            opt.step(&mut params)?;
            step += 1;
            log.push(TrainLogRow {
                step,
                epoch,
                loss: loss_value,
                lr: lr_now,
            });
        }
    }
    enc.frozen = true;
    // score the source task with the pretraining head before discarding it
    let model = AdaptedModel {
        encoder: enc.clone(),
        decoder: dec,
        adapters: None,
        feature: None,
        train_config: None,
    };
    let (agg, _) = evaluate(&model, heldout, "source")?;
    Ok(PretrainOutcome {
        encoder: enc,
        source_miou: agg.miou,
        log,
    })
}

// ---------------------------------------------------------------------------
// Adaptation
// ---------------------------------------------------------------------------

/// A frozen encoder with its trained decoder and (optionally) adapter stack.
#[derive(Clone, Debug)]
pub struct AdaptedModel {
    pub encoder: EncoderState,
    pub decoder: DecoderState,
    pub adapters: Option<AdapterStack>,
    pub feature: Option<FeatureSource>,
    /// Echo of the adaptation settings, for report provenance.
    pub train_config: Option<TrainConfig>,
}

#[derive(Debug)]
pub struct AdaptOutcome {
    pub model: AdaptedModel,
    pub log: Vec<TrainLogRow>,
}

/// Optimize decoder + adapters against the frozen encoder.
pub fn adapt_train(
    train: &[SynthSample],
    encoder: &EncoderState,
    cfg: &TrainConfig,
) -> Result<AdaptOutcome> {
    if !encoder.frozen {
        return Err(Error::contract(
            "adapt_train requires a frozen encoder (run pretraining first)",
        ));
    }
    let enc_cfg = encoder.cfg.clone();
    let root = Prng::new(cfg.seed);
    let mut dec = DecoderState::init(&enc_cfg, &mut root.derive(10));
    let mut adapters = match &cfg.feature {
        None => None,
        Some(feature) => {
            let acfg = AdapterConfig {
                gamma: cfg.gamma,
                num_layers: enc_cfg.depth,
                layer_channels: vec![enc_cfg.embed_dim; enc_cfg.depth],
                is_complex: feature.is_complex()?,
                patch_size: enc_cfg.patch_size,
            };
            Some(AdapterStack::init(
                acfg,
                enc_cfg.embed_dim,
                enc_cfg.patch_size * enc_cfg.patch_size * 3,
                &mut root.derive(11),
            )?)
        }
    };
    let prepared = prepare(train, &enc_cfg, cfg.feature.as_ref())?;
    let steps_per_epoch = prepared.len().div_ceil(cfg.batch_size);
    let total_steps = steps_per_epoch * cfg.epochs;
    let mut opt = {
        let mut refs: Vec<&Param> = dec.params();
        if let Some(a) = &adapters {
            refs.extend(a.params());
        }
        AdamW::new(&refs, cfg.lr, cfg.weight_decay, total_steps)
    };
    let mut log = Vec::new();
    let mut shuffle_rng = root.derive(12);
    let mut step = 0;
    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..prepared.len()).collect();
        shuffle_rng.shuffle(&mut order);
        for batch in order.chunks(cfg.batch_size) {
            let tape = Tape::new();
            let ev = encoder.lift(&tape, false);
            let dv = dec.lift(&tape, true);
            let av = adapters.as_ref().map(|a| a.lift(&tape, true));
            let mut total: Option<Var> = None;
            for &idx in batch {
                let s = &prepared[idx];
                let hooks = match (&av, &s.whf) {
                    (Some(stack), Some(whf)) => Some((stack, whf)),
                    _ => None,
                };
                let out = encoder_forward(&tape, &ev, &enc_cfg, &s.patches, hooks)?;
                let logits = decoder_forward(&tape, &dv, &enc_cfg, out.tokens)?;
                let pred = tape.sigmoid(logits)?;
                let gt = tape.leaf(&s.gt);
                let loss = cfg.loss.apply(&tape, pred, gt)?;
                total = Some(match total {
                    None => loss,
                    Some(acc) => tape.add(acc, loss)?,
                });
            }
            let loss = tape.scale(total.expect("non-empty batch"), 1.0 / batch.len() as f64)?;
            let loss_value = tape.value(loss).item()?;
            let lr_now = opt.current_lr();
            let grads = tape.backward(loss)?;
            let mut vars = dv.flat_vars();
            if let Some(stack) = &av {
                vars.extend(stack.flat_vars());
            }
            let mut params: Vec<&mut Param> = dec.params_mut();
            if let Some(a) = adapters.as_mut() {
                params.extend(a.params_mut());
            }
            assign_grads(&tape, &grads, &vars, &mut params)?;
            opt.step(&mut params)?;
            step += 1;
            log.push(TrainLogRow {
                step,
                epoch,
                loss: loss_value,
                lr: lr_now,
            });
        }
    }
    Ok(AdaptOutcome {
        model: AdaptedModel {
            encoder: encoder.clone(),
            decoder: dec,
            adapters,
            feature: cfg.feature.clone(),
            train_config: Some(cfg.clone()),
        },
        log,
    })
}

// ---------------------------------------------------------------------------
// Inference and evaluation
// ---------------------------------------------------------------------------

/// Mask probabilities for one image.
pub fn predict_mask(model: &AdaptedModel, image: &Tensor) -> Result<Mask> {
    let cfg = &model.encoder.cfg;
    let patches = image_patches(cfg, image)?;
    let whf = match (&model.adapters, &model.feature) {
        (Some(_), Some(feature)) => Some(feature.whf_patches(image, cfg.patch_size)?),
        _ => None,
    };
    let tape = Tape::new();
    let ev = model.encoder.lift(&tape, false);
    let dv = model.decoder.lift(&tape, false);
    let av = model.adapters.as_ref().map(|a| a.lift(&tape, false));
    let hooks = match (&av, &whf) {
        (Some(stack), Some(w)) => Some((stack, w)),
        _ => None,
    };
    let out = encoder_forward(&tape, &ev, cfg, &patches, hooks)?;
    let logits = decoder_forward(&tape, &dv, cfg, out.tokens)?;
    let pred = tape.sigmoid(logits)?;
    let values = tape.value(pred).reshape(vec![cfg.image_size, cfg.image_size])?;
    Mask::prediction(values)
}

fn worker_count() -> usize {
    let avail = std::thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(1);
    match std::env::var("SAMWAVE_THREADS") {
        Ok(v) => v.parse::<usize>().ok().filter(|&n| n >= 1).unwrap_or(avail),
        Err(_) => avail,
    }
}

/// Per-image metrics over a dataset plus their mean aggregate. Worker threads
/// process disjoint index ranges; results are reduced in index order.
pub fn evaluate(
    model: &AdaptedModel,
    samples: &[SynthSample],
    name: &str,
) -> Result<(DatasetMetrics, Vec<MaskMetrics>)> {
    let workers = worker_count().min(samples.len().max(1));
    let mut per_image: Vec<Option<MaskMetrics>> = vec![None; samples.len()];
    if workers <= 1 {
        for (slot, s) in per_image.iter_mut().zip(samples) {
            let pred = predict_mask(model, &s.image)?;
            let gt = Mask::ground_truth(s.gt.clone())?;
            *slot = Some(metrics(&pred, &gt, 0.5)?);
        }
    } else {
        let chunk = samples.len().div_ceil(workers);
        let results: Vec<Result<Vec<(usize, MaskMetrics)>>> = std::thread::scope(|scope| {
            let handles: Vec<_> = (0..workers)
                .map(|w| {
                    let lo = w * chunk;
                    let hi = ((w + 1) * chunk).min(samples.len());
                    scope.spawn(move || -> Result<Vec<(usize, MaskMetrics)>> {
                        let mut out = Vec::with_capacity(hi.saturating_sub(lo));
                        for idx in lo..hi {
                            let s = &samples[idx];
                            let pred = predict_mask(model, &s.image)?;
                            let gt = Mask::ground_truth(s.gt.clone())?;
                            out.push((idx, metrics(&pred, &gt, 0.5)?));
                        }
                        Ok(out)
                    })
                })
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("evaluation worker panicked"))
                .collect()
        });
        for r in results {
            for (idx, m) in r? {
                per_image[idx] = Some(m);
            }
        }
    }
    let per_image: Vec<MaskMetrics> = per_image
        .into_iter()
        .map(|m| m.expect("every index evaluated"))
        .collect();
    Ok((aggregate(name, &per_image), per_image))
}
