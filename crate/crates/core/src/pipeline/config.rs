use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::data::synth::SceneConfig;
use crate::error::{Error, Result};
use crate::loss::{FeatureExtractorConfig, Stage1Weights, Stage2Weights};
use crate::nn::{Activation, DiscriminatorConfig, InpainterConfig, InpainterOutput, RefinerConfig, RefinerMode};
use crate::tensor::optim::{cosine_annealed, AdamConfig};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ablation {
    #[default]
    Full,
    NoDeform,
    RgbInpainting,
    NoTextures,
}

impl Ablation {
    pub const ALL: [Ablation; 4] = [Ablation::Full, Ablation::NoDeform, Ablation::RgbInpainting, Ablation::NoTextures];

    pub fn name(self) -> &'static str {
        match self {
            Ablation::Full => "full",
            Ablation::NoDeform => "no_deform",
            Ablation::RgbInpainting => "rgb_inpainting",
            Ablation::NoTextures => "no_textures",
        }
    }

    /// Whether stage 1 predicts coordinates (as opposed to colours).
    pub fn uses_coordinates(self) -> bool {
        self != Ablation::RgbInpainting
    }

    pub fn refiner_mode(self) -> RefinerMode {
        match self {
            Ablation::Full => RefinerMode::Deformable,
            _ => RefinerMode::Plain,
        }
    }

    pub fn inpainter_output(self) -> InpainterOutput {
        if self.uses_coordinates() {
            InpainterOutput::Coordinates
        } else {
            InpainterOutput::Colors
        }
    }

    /// Target-aligned refiner channels: warped texture, normalised warp
    /// field, target UV stack and meshgrid, minus what the mode lacks.
    pub fn target_channels(self) -> usize {
        match self {
            Ablation::Full | Ablation::NoDeform => 3 + 2 + 3 + 2,
            Ablation::RgbInpainting => 3 + 3 + 2,
            Ablation::NoTextures => 3 + 2,
        }
    }
}

impl std::str::FromStr for Ablation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ablation::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown ablation {s:?}")))
    }
}

/// Source image, source UV stack and meshgrid.
pub const SOURCE_CHANNELS: usize = 3 + 3 + 2;

/// Optimisation schedule of one stage.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Schedule {
    pub steps: usize,
    pub batch_size: usize,
    /// Write an intermediate checkpoint every this many steps (0: never).
    pub checkpoint_every: usize,
    pub adam: AdamConfig,
    /// Learning rate at the last step relative to the initial one (cosine decay).
    pub final_lr_fraction: f64,
}

impl Schedule {
    pub fn adam_at(&self, step: usize) -> AdamConfig {
        cosine_annealed(&self.adam, self.final_lr_fraction, step, self.steps)
    }
}

impl Default for Schedule {
    fn default() -> Self {
        Schedule {
            steps: 1000,
            batch_size: 4,
            checkpoint_every: 0,
            adam: AdamConfig::default(),
            final_lr_fraction: 1.0,
        }
    }
}

/// Refiner settings that do not depend on the ablation mode.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RefinerShape {
    pub widths: [usize; 4],
    pub res_blocks: usize,
    pub kernel: usize,
    pub activation: Activation,
}

impl Default for RefinerShape {
    fn default() -> Self {
        let d = RefinerConfig::default();
        RefinerShape {
            widths: d.widths,
            res_blocks: d.res_blocks,
            kernel: d.kernel,
            activation: d.activation,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub scene: SceneConfig,
    /// Directory of `<id>_<pose>.png/.uvm` files. Scenes are generated on
    /// the fly when absent.
    pub dataset: Option<PathBuf>,
    /// Size of the generated training pool.
    pub train_pairs: usize,
    /// Size of the generated held-out set.
    pub test_pairs: usize,
    /// Seed of the generated scenes, independent of `seed`.
    pub data_seed: u64,
    pub inpainter: InpainterConfig,
    pub refiner: RefinerShape,
    pub discriminator: DiscriminatorConfig,
    pub features: FeatureExtractorConfig,
    pub stage1_weights: Stage1Weights,
    pub stage2_weights: Stage2Weights,
    pub stage1: Schedule,
    pub stage2: Schedule,
    pub ablation: Ablation,
    pub garment_transfer: bool,
    /// Seed of initialisation and batch sampling.
    pub seed: u64,
    /// Prepared batches in flight ahead of training.
    pub prefetch: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            scene: SceneConfig::default(),
            dataset: None,
            train_pairs: 2000,
            test_pairs: 32,
            data_seed: 0,
            inpainter: InpainterConfig::default(),
            refiner: RefinerShape::default(),
            discriminator: DiscriminatorConfig::default(),
            features: FeatureExtractorConfig::default(),
            stage1_weights: Stage1Weights::default(),
            stage2_weights: Stage2Weights::default(),
            stage1: Schedule::default(),
            stage2: Schedule::default(),
            ablation: Ablation::Full,
            garment_transfer: false,
            seed: 0,
            prefetch: 2,
        }
    }
}

impl PipelineConfig {
    pub fn inpainter_config(&self) -> InpainterConfig {
        InpainterConfig {
            output: self.ablation.inpainter_output(),
            ..self.inpainter.clone()
        }
    }

    pub fn refiner_config(&self) -> RefinerConfig {
        RefinerConfig {
            mode: self.ablation.refiner_mode(),
            target_channels: self.ablation.target_channels(),
            source_channels: SOURCE_CHANNELS,
            identity_cond: self.garment_transfer,
            widths: self.refiner.widths,
            res_blocks: self.refiner.res_blocks,
            kernel: self.refiner.kernel,
            activation: self.refiner.activation,
        }
    }

    pub fn discriminator_config(&self) -> DiscriminatorConfig {
        DiscriminatorConfig {
            in_channels: 3 + 3,
            ..self.discriminator.clone()
        }
    }

    pub fn texture_extent(&self) -> (usize, usize) {
        (self.scene.texture_width, self.scene.texture_height)
    }

    pub fn image_extent(&self) -> (usize, usize) {
        self.scene.image_extent()
    }

    pub fn validate(&self) -> Result<()> {
        self.scene.validate()?;
        if self.stage1.batch_size == 0 || self.stage2.batch_size == 0 {
            return Err(Error::invalid("batch_size must be positive"));
        }
        if self.dataset.is_none() && (self.train_pairs == 0) {
            return Err(Error::invalid("dataset is empty: train_pairs is 0"));
        }
        for s in [&self.stage1, &self.stage2] {
            if !(0.0..=1.0).contains(&s.final_lr_fraction) {
                return Err(Error::invalid("final_lr_fraction must lie in [0, 1]"));
            }
        }
        if self.stage2_weights.nn_window.is_multiple_of(2) {
            return Err(Error::invalid("nn_window must be odd"));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Value {
        serde_json::to_value(self).expect("config serialises")
    }

    /// Applies `key=value` overrides with dotted keys. Values parse as
    /// JSON and fall back to plain strings.
    pub fn with_overrides<'a>(&self, overrides: impl IntoIterator<Item = &'a str>) -> Result<Self> {
        let mut v = self.to_json();
        for kv in overrides {
            let (key, raw) = kv
                .split_once('=')
                .ok_or_else(|| Error::invalid(format!("override {kv:?} is not key=value")))?;
            let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_owned()));
            set_path(&mut v, key, value)?;
        }
        Ok(serde_json::from_value(v)?)
    }
}

fn set_path(root: &mut Value, key: &str, value: Value) -> Result<()> {
    let mut cur = root;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let last = i + 1 == parts.len();
        cur = match cur {
            Value::Object(map) => {
                if !map.contains_key(*part) {
                    return Err(Error::invalid(format!("unknown config key {key:?}")));
                }
                let slot = map.get_mut(*part).expect("checked");
                if last {
                    *slot = value;
                    return Ok(());
                }
                slot
            }
            Value::Array(items) => {
                let idx: usize = part
                    .parse()
                    .map_err(|_| Error::invalid(format!("config key {key:?}: {part:?} is not an index")))?;
                let slot = items
                    .get_mut(idx)
                    .ok_or_else(|| Error::invalid(format!("config key {key:?}: index {idx} out of range")))?;
                if last {
                    *slot = value;
                    return Ok(());
                }
                slot
            }
            _ => return Err(Error::invalid(format!("config key {key:?} descends into a scalar"))),
        };
    }
    Err(Error::invalid("empty config key"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_reach_nested_fields() {
        let c = PipelineConfig::default()
            .with_overrides(["stage1.steps=7", "ablation=no_deform", "refiner.widths.0=5", "scene.mirror=false"])
            .unwrap();
        assert_eq!(c.stage1.steps, 7);
        assert_eq!(c.ablation, Ablation::NoDeform);
        assert_eq!(c.refiner.widths[0], 5);
        assert!(!c.scene.mirror);
        assert!(PipelineConfig::default().with_overrides(["nope=1"]).is_err());
        assert!(PipelineConfig::default().with_overrides(["stage1.steps"]).is_err());
    }

    #[test]
    fn rgb_inpainting_has_no_deformable_skips() {
        let c = PipelineConfig {
            ablation: Ablation::RgbInpainting,
            ..PipelineConfig::default()
        };
        assert_eq!(c.refiner_config().mode, RefinerMode::Plain);
        assert_eq!(c.inpainter_config().output, InpainterOutput::Colors);
    }
}
