use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use egogaze::dataset::{ClipConfig, FrameFormat};
use egogaze::model::{BackboneKind, ModelConfig};
use egogaze::train::TrainConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    /// 64x64 input with reduced backbones.
    Desk,
    /// 224x224 input with the full backbone architectures.
    Full,
    /// 16x16 double-precision model with 4-frame clips.
    Miniature,
}

impl Preset {
    pub fn model(self, kind: BackboneKind) -> ModelConfig {
        match self {
            Preset::Desk => ModelConfig::desk(kind),
            Preset::Full => ModelConfig::full(kind),
            Preset::Miniature => ModelConfig::miniature(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSection {
    pub paths: usize,
    pub recordings_per_path: usize,
    /// Square frame size in pixels.
    pub size: usize,
    pub duration_s: f64,
    pub format: FrameFormat,
}

impl Default for SynthSection {
    fn default() -> Self {
        Self {
            paths: 8,
            recordings_per_path: 1,
            size: 64,
            duration_s: 8.0,
            format: FrameFormat::Png,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSection {
    pub ratio: f64,
}

impl Default for SplitSection {
    fn default() -> Self {
        Self { ratio: 0.7 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub preset: Preset,
    pub backbone: BackboneKind,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            preset: Preset::Desk,
            backbone: BackboneKind::X3d,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    /// Ground-truth blur; `None` means H/16.
    pub gt_sigma: Option<f64>,
    pub kld_eps: f64,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            gt_sigma: None,
            kld_eps: 1e-7,
        }
    }
}

/// Everything a command may read from a TOML file. Command-line flags are
/// applied on top after loading.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub synth: SynthSection,
    pub split: SplitSection,
    pub model: ModelSection,
    pub clips: ClipConfig,
    pub train: TrainConfig,
    pub eval: EvalSection,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    pub fn model_config(&self) -> Result<ModelConfig> {
        let cfg = self.model.preset.model(self.model.backbone);
        if cfg.clip_len != self.clips.clip_len {
            bail!(
                "model preset {:?} expects {}-frame clips but clips.clip_len is {}",
                self.model.preset,
                cfg.clip_len,
                self.clips.clip_len
            );
        }
        Ok(cfg)
    }

    /// Hex SHA-256 of the effective configuration's JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex_digest(&json)
    }
}

pub fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}
