//! The TOML run configuration shared by the training and analysis commands.
//!
//! Every field has a default; unknown keys are rejected. The parsed document
//! is echoed verbatim into every report and meta file the commands produce.

use samwave_core::error::{Error, Result};
use samwave_core::freqfeat::{FreqMaskConfig, MaskMode};
use samwave_core::model::EncoderConfig;
use samwave_core::synthdata::Task;
use samwave_core::train::{FeatureSource, LossKind, PretrainConfig, TrainConfig};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub train: TrainSection,
    pub encoder: EncoderSection,
    pub pretrain: PretrainSection,
    pub data: DataSection,
    pub analysis: AnalysisSection,
    pub ablate: AblateSection,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub seed: u64,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    /// "auto" resolves from the dataset's task; otherwise "bce", "bbce",
    /// or "combined-cod".
    pub loss: String,
    pub gamma: usize,
    /// Wavelet feeding WHF-Tune; ignored when `adapters` is false.
    pub wavelet: String,
    pub adapters: bool,
}

impl Default for TrainSection {
    fn default() -> Self {
        let d = TrainConfig::default();
        TrainSection {
            seed: d.seed,
            epochs: d.epochs,
            batch_size: d.batch_size,
            lr: d.lr,
            weight_decay: d.weight_decay,
            loss: "auto".into(),
            gamma: d.gamma,
            wavelet: "haar".into(),
            adapters: true,
        }
    }
}

impl TrainSection {
    pub fn to_train_config(&self, task: Task) -> Result<TrainConfig> {
        let loss = match self.loss.as_str() {
            "auto" => LossKind::for_task(task),
            "bce" => LossKind::Bce,
            "bbce" => LossKind::Bbce,
            "combined-cod" => LossKind::CombinedCod,
            other => {
                return Err(Error::config(format!(
                    "unknown loss '{other}'; use auto, bce, bbce or combined-cod"
                )))
            }
        };
        let feature = if self.adapters {
            Some(FeatureSource::wavelet(&self.wavelet)?)
        } else {
            None
        };
        Ok(TrainConfig {
            seed: self.seed,
            epochs: self.epochs,
            batch_size: self.batch_size,
            lr: self.lr,
            weight_decay: self.weight_decay,
            loss,
            gamma: self.gamma,
            feature,
        })
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderSection {
    pub image_size: usize,
    pub patch_size: usize,
    pub embed_dim: usize,
    pub depth: usize,
    pub heads: usize,
    pub mlp_ratio: usize,
}

impl Default for EncoderSection {
    fn default() -> Self {
        let d = EncoderConfig::default();
        EncoderSection {
            image_size: d.image_size,
            patch_size: d.patch_size,
            embed_dim: d.embed_dim,
            depth: d.depth,
            heads: d.heads,
            mlp_ratio: d.mlp_ratio,
        }
    }
}

impl EncoderSection {
    pub fn to_encoder_config(&self) -> EncoderConfig {
        EncoderConfig {
            image_size: self.image_size,
            patch_size: self.patch_size,
            embed_dim: self.embed_dim,
            depth: self.depth,
            heads: self.heads,
            mlp_ratio: self.mlp_ratio,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PretrainSection {
    pub seed: u64,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
}

impl Default for PretrainSection {
    fn default() -> Self {
        let d = PretrainConfig::default();
        PretrainSection {
            seed: d.seed,
            epochs: d.epochs,
            batch_size: d.batch_size,
            lr: d.lr,
            weight_decay: d.weight_decay,
        }
    }
}

impl PretrainSection {
    pub fn to_pretrain_config(&self, encoder: EncoderConfig) -> PretrainConfig {
        PretrainConfig {
            seed: self.seed,
            epochs: self.epochs,
            batch_size: self.batch_size,
            lr: self.lr,
            weight_decay: self.weight_decay,
            encoder,
        }
    }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    /// Training dataset directory (from `samwave synth`). Empty means "use a
    /// freshly generated in-memory default" where the command supports it.
    pub train: String,
    /// Evaluation dataset directory.
    pub test: String,
    /// Encoder checkpoint directory; commands accept `--encoder` to override.
    pub encoder: String,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalysisSection {
    /// Side ratio of the fixed Fourier mask.
    pub tau: f64,
    /// "fourier-highpass", "fourier-lowpass", or a wavelet name.
    pub extractor_a: String,
    pub extractor_b: String,
}

impl Default for AnalysisSection {
    fn default() -> Self {
        AnalysisSection {
            tau: 0.25,
            extractor_a: "fourier-highpass".into(),
            extractor_b: "fourier-lowpass".into(),
        }
    }
}

impl AnalysisSection {
    pub fn extractor(&self, which: &str) -> Result<FeatureSource> {
        let name = match which {
            "a" => &self.extractor_a,
            _ => &self.extractor_b,
        };
        match name.as_str() {
            "fourier-highpass" => Ok(FeatureSource::fourier(FreqMaskConfig::new(
                self.tau,
                MaskMode::Highpass,
            )?)),
            "fourier-lowpass" => Ok(FeatureSource::fourier(FreqMaskConfig::new(
                self.tau,
                MaskMode::Lowpass,
            )?)),
            wavelet => FeatureSource::wavelet(wavelet),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblateSection {
    /// Real wavelet family whose subbands are ablated.
    pub wavelet: String,
}

impl Default for AblateSection {
    fn default() -> Self {
        AblateSection {
            wavelet: "coif2".into(),
        }
    }
}

pub fn load_config(path: &std::path::Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::config(format!("cannot read {}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| Error::config(format!("{}: {e}", path.display())))
}
