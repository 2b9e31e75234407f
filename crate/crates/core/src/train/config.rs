//! Training configuration, read from TOML on top of a named preset.

use std::path::{Path, PathBuf};

use autograd::AdamConfig;
use serde::{Deserialize, Serialize};

use crate::depth_net::DepthNetConfig;
use crate::error::{Error, Result};
use crate::losses::{GanMode, LossWeights};
use crate::text::{SegmenterConfig, SegmenterTraining};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    /// Small network, learning rate 1e-3, 30 epochs.
    #[default]
    Toy,
    /// Full-size network, learning rate 1e-6, 100 epochs.
    Full,
}

/// Whether the translated branch is supervised with pseudo ground truth.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TranslatedSupervision {
    None,
    #[default]
    PseudoGt,
}

/// Where comics text masks come from.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskSource {
    /// Predicted by the segmenter trained during preparation.
    #[default]
    Segmenter,
    /// Read from `masks/<stem>.png` in the comics corpus.
    Corpus,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamParams {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SegmenterSection {
    pub model: SegmenterConfig,
    pub fixtures: usize,
    pub training: SegmenterTraining,
}

impl Default for SegmenterSection {
    fn default() -> Self {
        Self {
            model: SegmenterConfig::default(),
            fixtures: 50,
            training: SegmenterTraining {
                epochs: 10,
                ..SegmenterTraining::default()
            },
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    pub real_corpus: PathBuf,
    pub comics_corpus: PathBuf,
    pub cache: PathBuf,
    pub checkpoints: PathBuf,
    /// Loss log; defaults to `<checkpoints>/loss_log.csv`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub log: Option<PathBuf>,
    /// Precomputed depth files for the `from_directory` provider.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub depth_dir: Option<PathBuf>,
}

impl Paths {
    pub fn log_path(&self) -> PathBuf {
        self.log.clone().unwrap_or_else(|| self.checkpoints.join("loss_log.csv"))
    }

    fn resolve(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.real_corpus);
        fix(&mut self.comics_corpus);
        fix(&mut self.cache);
        fix(&mut self.checkpoints);
        self.log.as_mut().map(fix);
        self.depth_dir.as_mut().map(fix);
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub preset: Preset,
    pub epochs: usize,
    pub learning_rate: f64,
    pub adam: AdamParams,
    pub batch_size: usize,
    pub seed: u64,
    pub loss: LossWeights,
    pub gan_mode: GanMode,
    pub translated_supervision: TranslatedSupervision,
    pub translator: String,
    pub provider: String,
    pub mask_source: MaskSource,
    pub net: DepthNetConfig,
    pub segmenter: SegmenterSection,
    pub paths: Paths,
}

impl TrainConfig {
    pub fn preset(preset: Preset) -> Self {
        let (epochs, learning_rate, net) = match preset {
            Preset::Toy => (
                30,
                1e-3,
                DepthNetConfig {
                    levels: 3,
                    base_channels: 8,
                    ..DepthNetConfig::default()
                },
            ),
            Preset::Full => (100, 1e-6, DepthNetConfig::default()),
        };
        Self {
            preset,
            epochs,
            learning_rate,
            adam: AdamParams::default(),
            batch_size: 4,
            seed: 0,
            loss: LossWeights::default(),
            gan_mode: GanMode::default(),
            translated_supervision: TranslatedSupervision::default(),
            translator: "identity".into(),
            provider: "synthetic".into(),
            mask_source: MaskSource::default(),
            net,
            segmenter: SegmenterSection::default(),
            paths: Paths::default(),
        }
    }

    /// Parses TOML: the `preset` key (default `toy`) picks the defaults and
    /// every other key overrides them.
    pub fn from_toml(text: &str) -> Result<Self> {
        let user: toml::Table = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let preset = match user.get("preset") {
            None => Preset::default(),
            Some(v) => v
                .clone()
                .try_into()
                .map_err(|e: toml::de::Error| Error::Config(format!("preset: {e}")))?,
        };
        let mut merged = toml::Table::try_from(Self::preset(preset)).map_err(|e| Error::Config(e.to_string()))?;
        merge(&mut merged, user);
        let config: Self = toml::Value::Table(merged)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    /// Reads a config file; relative paths are taken from its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut config = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        config.paths.resolve(base);
        Ok(config)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning_rate {} must be positive", self.learning_rate)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        let AdamParams { beta1, beta2, eps } = self.adam;
        if !((0.0..1.0).contains(&beta1) && (0.0..1.0).contains(&beta2) && eps > 0.0) {
            return Err(Error::Config("adam betas must lie in [0, 1) and eps be positive".into()));
        }
        self.loss.validate()?;
        self.net.validate()?;
        self.segmenter.model.validate()
    }

    pub fn adam_config(&self) -> AdamConfig {
        AdamConfig {
            lr: self.learning_rate,
            beta1: self.adam.beta1,
            beta2: self.adam.beta2,
            eps: self.adam.eps,
        }
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::preset(Preset::default())
    }
}

/// Recursively overlays `over` onto `base`.
fn merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}
