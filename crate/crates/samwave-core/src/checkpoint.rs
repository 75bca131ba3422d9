//! Checkpoint directories: one WVT1 file per tensor plus a JSON manifest
//! holding the configs and the tensor-name -> file map with complex flags.
//!
//! Identical states serialize to identical bytes, so a seed determines the
//! checkpoint content exactly; freeze audits compare these bytes.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::adapters::{AdapterConfig, AdapterStack};
use crate::error::{Error, Result};
use crate::model::{DecoderState, EncoderConfig, EncoderState};
use crate::rng::Prng;
use crate::tensor::Param;
use crate::train::{AdaptedModel, FeatureSource, TrainConfig};
use crate::wvt1;

pub const CHECKPOINT_FORMAT: u32 = 1;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TensorEntry {
    pub file: String,
    pub is_complex: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub kind: String,
    pub format: u32,
    pub encoder_config: EncoderConfig,
    pub frozen: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub adapter_config: Option<AdapterConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub feature: Option<FeatureSource>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub train_config: Option<TrainConfig>,
    pub tensors: BTreeMap<String, TensorEntry>,
}

fn write_tensors(dir: &Path, named: &[(String, &Param)]) -> Result<BTreeMap<String, TensorEntry>> {
    let mut map = BTreeMap::new();
    for (name, p) in named {
        let file = format!("{name}.wvt1");
        wvt1::save_tensor(dir.join(&file), &p.value)?;
        map.insert(
            name.clone(),
            TensorEntry {
                file,
                // complex pairs are stored as their two real components
                is_complex: name.ends_with(".re") || name.ends_with(".im"),
            },
        );
    }
    Ok(map)
}

fn read_into(dir: &Path, manifest: &CheckpointManifest, named: Vec<(String, &mut Param)>) -> Result<()> {
    for (name, p) in named {
        let entry = manifest.tensors.get(&name).ok_or_else(|| {
            Error::Integrity(format!("checkpoint is missing tensor '{name}'"))
        })?;
        let t = wvt1::load_tensor(dir.join(&entry.file))?;
        if t.shape() != p.value.shape() {
            return Err(Error::Integrity(format!(
                "tensor '{name}' has shape {:?}, expected {:?}",
                t.shape(),
                p.value.shape()
            )));
        }
        p.value = t;
        p.grad = None;
    }
    Ok(())
}

fn zip_names<'a>(names: Vec<String>, params: Vec<&'a mut Param>) -> Vec<(String, &'a mut Param)> {
    debug_assert_eq!(names.len(), params.len());
    names.into_iter().zip(params).collect()
}

pub fn save_encoder(dir: impl AsRef<Path>, enc: &EncoderState) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    let manifest = CheckpointManifest {
        kind: "encoder".into(),
        format: CHECKPOINT_FORMAT,
        encoder_config: enc.cfg.clone(),
        frozen: enc.frozen,
        adapter_config: None,
        feature: None,
        train_config: None,
        tensors: write_tensors(dir, &enc.named_params())?,
    };
    std::fs::write(dir.join("manifest.json"), serde_json::to_vec_pretty(&manifest)?)?;
    Ok(())
}

fn load_manifest(dir: &Path, kind: &str) -> Result<CheckpointManifest> {
    let bytes = std::fs::read(dir.join("manifest.json"))
        .map_err(|e| Error::Integrity(format!("cannot read {}/manifest.json: {e}", dir.display())))?;
    let manifest: CheckpointManifest = serde_json::from_slice(&bytes)?;
    if manifest.kind != kind {
        return Err(Error::Integrity(format!(
            "checkpoint kind '{}', expected '{kind}'",
            manifest.kind
        )));
    }
    if manifest.format != CHECKPOINT_FORMAT {
        return Err(Error::Integrity(format!(
            "unsupported checkpoint format {}",
            manifest.format
        )));
    }
    Ok(manifest)
}

pub fn load_encoder(dir: impl AsRef<Path>) -> Result<EncoderState> {
    let dir = dir.as_ref();
    let manifest = load_manifest(dir, "encoder")?;
    let mut enc = EncoderState::init(manifest.encoder_config.clone(), &mut Prng::new(0))?;
    let names: Vec<String> = enc.named_params().into_iter().map(|(n, _)| n).collect();
    read_into(dir, &manifest, zip_names(names, enc.params_mut()))?;
    enc.frozen = manifest.frozen;
    Ok(enc)
}

pub fn save_model(dir: impl AsRef<Path>, model: &AdaptedModel) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    let mut named = model.encoder.named_params();
    named.extend(model.decoder.named_params());
    if let Some(a) = &model.adapters {
        named.extend(a.named_params());
    }
    let manifest = CheckpointManifest {
        kind: "model".into(),
        format: CHECKPOINT_FORMAT,
        encoder_config: model.encoder.cfg.clone(),
        frozen: model.encoder.frozen,
        adapter_config: model.adapters.as_ref().map(|a| a.cfg.clone()),
        feature: model.feature.clone(),
        train_config: model.train_config.clone(),
        tensors: write_tensors(dir, &named)?,
    };
    std::fs::write(dir.join("manifest.json"), serde_json::to_vec_pretty(&manifest)?)?;
    Ok(())
}

pub fn load_model(dir: impl AsRef<Path>) -> Result<AdaptedModel> {
    let dir = dir.as_ref();
    let manifest = load_manifest(dir, "model")?;
    let mut rng = Prng::new(0);
    let mut encoder = EncoderState::init(manifest.encoder_config.clone(), &mut rng)?;
    let names: Vec<String> = encoder.named_params().into_iter().map(|(n, _)| n).collect();
    read_into(dir, &manifest, zip_names(names, encoder.params_mut()))?;
    encoder.frozen = manifest.frozen;

    let mut decoder = DecoderState::init(&manifest.encoder_config, &mut rng);
    let names: Vec<String> = decoder.named_params().into_iter().map(|(n, _)| n).collect();
    read_into(dir, &manifest, zip_names(names, decoder.params_mut()))?;

    let adapters = match &manifest.adapter_config {
        None => None,
        Some(acfg) => {
            let mut stack = AdapterStack::init(
                acfg.clone(),
                manifest.encoder_config.embed_dim,
                manifest.encoder_config.patch_size * manifest.encoder_config.patch_size * 3,
                &mut rng,
            )?;
            let names: Vec<String> = stack.named_params().into_iter().map(|(n, _)| n).collect();
            read_into(dir, &manifest, zip_names(names, stack.params_mut()))?;
            Some(stack)
        }
    };
    Ok(AdaptedModel {
        encoder,
        decoder,
        adapters,
        feature: manifest.feature.clone(),
        train_config: manifest.train_config.clone(),
    })
}
