//! Controlled-comparison harnesses.
//!
//! `freq_analysis` trains two otherwise-identical adaptation runs that differ
//! only in the feature extractor feeding WHF-Tune (same seed, same schedule,
//! same data) and reports per-metric deltas. `ablate` trains one run per
//! subband-selection variant plus a decoder-only baseline, again under one
//! seed and schedule.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::freqfeat::SubbandSelection;
use crate::model::EncoderState;
use crate::objectives::DatasetMetrics;
use crate::synthdata::SynthSample;
use crate::train::{adapt_train, evaluate, AdaptedModel, FeatureSource, TrainConfig};
use crate::wavelets::WaveletName;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DeltaRow {
    pub dataset: String,
    pub metric: String,
    pub value_a: f64,
    pub value_b: f64,
    pub delta: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DeltaReport {
    pub extractor_a: String,
    pub extractor_b: String,
    pub rows: Vec<DeltaRow>,
    pub mean_abs_delta: f64,
    pub config: TrainConfig,
}

/// Train one adaptation run per extractor under identical settings and emit
/// per-(dataset, metric) deltas plus the mean absolute delta.
pub fn freq_analysis(
    train: &[SynthSample],
    test_sets: &[(String, Vec<SynthSample>)],
    encoder: &EncoderState,
    extractor_a: &FeatureSource,
    extractor_b: &FeatureSource,
    cfg: &TrainConfig,
) -> Result<DeltaReport> {
    if extractor_a.is_complex()? != extractor_b.is_complex()? {
        return Err(Error::contract(
            "extractors produce different map kinds (real vs complex); the comparison would not be controlled",
        ));
    }
    if cfg.feature.is_some() {
        return Err(Error::contract(
            "the base config must leave `feature` unset; the harness installs each extractor",
        ));
    }
    let run = |extractor: &FeatureSource| -> Result<Vec<DatasetMetrics>> {
        let leg_cfg = TrainConfig {
            feature: Some(extractor.clone()),
            ..cfg.clone()
        };
        let out = adapt_train(train, encoder, &leg_cfg)?;
        test_sets
            .iter()
            .map(|(name, data)| Ok(evaluate(&out.model, data, name)?.0))
            .collect()
    };
    let a = run(extractor_a)?;
    let b = run(extractor_b)?;
    let mut rows = Vec::new();
    for (ma, mb) in a.iter().zip(&b) {
        for ((name, va), (_, vb)) in ma.named_values().into_iter().zip(mb.named_values()) {
            rows.push(DeltaRow {
                dataset: ma.name.clone(),
                metric: name.to_string(),
                value_a: va,
                value_b: vb,
                delta: va - vb,
            });
        }
    }
    let mean_abs_delta = if rows.is_empty() {
        0.0
    } else {
        rows.iter().map(|r| r.delta.abs()).sum::<f64>() / rows.len() as f64
    };
    Ok(DeltaReport {
        extractor_a: extractor_a.label(),
        extractor_b: extractor_b.label(),
        rows,
        mean_abs_delta,
        config: cfg.clone(),
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: String,
    pub metrics: DatasetMetrics,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AblationReport {
    pub wavelet: String,
    pub seed: u64,
    pub rows: Vec<AblationRow>,
    pub config: TrainConfig,
}

/// The subband-selection variants, in report order, after the decoder-only
/// baseline: LL, HL, LH, HH, HL+LH+HH.
pub fn ablation_variants() -> Vec<SubbandSelection> {
    let single = |name: &str| SubbandSelection::single(name).expect("known subband");
    vec![
        single("ll"),
        single("hl"),
        single("lh"),
        single("hh"),
        SubbandSelection::DETAILS,
    ]
}

/// One adaptation run per variant (decoder-only, LL, HL, LH, HH, HL+LH+HH),
/// all under the base config's seed and schedule.
pub fn ablate(
    train: &[SynthSample],
    test: &[SynthSample],
    encoder: &EncoderState,
    cfg: &TrainConfig,
    wavelet: WaveletName,
) -> Result<AblationReport> {
    if cfg.feature.is_some() {
        return Err(Error::contract(
            "the base config must leave `feature` unset; the harness installs each variant",
        ));
    }
    let mut rows = Vec::with_capacity(6);
    let run = |variant: String, feature: Option<FeatureSource>| -> Result<AblationRow> {
        let leg_cfg = TrainConfig {
            feature,
            ..cfg.clone()
        };
        let out = adapt_train(train, encoder, &leg_cfg)?;
        let (metrics, _) = evaluate(&out.model, test, &variant)?;
        Ok(AblationRow { variant, metrics })
    };
    rows.push(run("decoder-only".into(), None)?);
    for sel in ablation_variants() {
        rows.push(run(
            sel.label(),
            Some(FeatureSource::subbands(wavelet, sel)),
        )?);
    }
    Ok(AblationReport {
        wavelet: wavelet.as_str().to_string(),
        seed: cfg.seed,
        rows,
        config: cfg.clone(),
    })
}

/// Convenience for consumers that need the trained model of a single variant.
pub fn train_variant(
    train: &[SynthSample],
    encoder: &EncoderState,
    cfg: &TrainConfig,
    feature: Option<FeatureSource>,
) -> Result<AdaptedModel> {
    let leg_cfg = TrainConfig {
        feature,
        ..cfg.clone()
    };
    Ok(adapt_train(train, encoder, &leg_cfg)?.model)
}
