//! Training configuration and its flat `key = value` file format.
//!
//! ```text
//! batch_size = 24
//! learning_rate = 0.01
//! momentum = 0.9
//! weight_decay = 0.0001
//! epochs = 150
//! lr_decay = 0.0001
//! kl_beta = 0.1
//! ce_weight = 0.4
//! dice_weight = 0.6
//! input_size = [224, 224]
//! output_size = [512, 512]
//! ```
//!
//! Every key is optional; omitted keys take the defaults below.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::Layout;
use crate::latent::KlReduction;
use crate::losses::LossConfig;
use crate::network::ModelConfig;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LrSchedule {
    /// `lr₀ · max((1 − t/T)^0.9, lr_decay)`.
    Poly,
    /// `lr₀ / (1 + lr_decay · t)`.
    InverseTime,
    Constant,
}

impl LrSchedule {
    pub fn rate(self, base: f64, decay: f64, step: usize, total: usize) -> f64 {
        match self {
            LrSchedule::Poly => {
                let frac = 1.0 - step as f64 / total.max(1) as f64;
                base * frac.max(0.0).powf(0.9).max(decay)
            }
            LrSchedule::InverseTime => base / (1.0 + decay * step as f64),
            LrSchedule::Constant => base,
        }
    }
}

/// Which annotation a multi-annotator case contributes per step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnnotatorPolicy {
    /// Uniformly random annotation each time the case is visited.
    Random,
    /// Always annotator `k` (clamped to the last available one).
    Fixed(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub lr_decay: f64,
    pub lr_schedule: LrSchedule,
    pub loss: LossConfig,
    pub model: ModelConfig,
    pub seed: u64,
    pub annotator: AnnotatorPolicy,
    /// Trailing fraction of the sorted cases held out for validation.
    pub val_fraction: f64,
    pub layout: Layout,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::multi_annotator()
    }
}

impl TrainConfig {
    pub fn multi_annotator() -> Self {
        Self {
            batch_size: 24,
            learning_rate: 0.01,
            momentum: 0.9,
            weight_decay: 1e-4,
            epochs: 150,
            lr_decay: 1e-4,
            lr_schedule: LrSchedule::Poly,
            loss: LossConfig::default(),
            model: ModelConfig::default(),
            seed: 0,
            annotator: AnnotatorPolicy::Random,
            val_fraction: 0.2,
            layout: Layout::MultiAnnotator,
        }
    }

    pub fn multi_class() -> Self {
        Self {
            learning_rate: 0.05,
            layout: Layout::MultiClass,
            ..Self::multi_annotator()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.loss.validate()?;
        let positive = [
            ("batch_size", self.batch_size as f64),
            ("learning_rate", self.learning_rate),
            ("epochs", self.epochs as f64),
        ];
        if let Some((k, _)) = positive.iter().find(|(_, v)| !(*v > 0.0)) {
            return Err(Error::Config(format!("{k} must be positive")));
        }
        if !(0.0..1.0).contains(&self.momentum) || self.weight_decay < 0.0 || self.lr_decay < 0.0 {
            return Err(Error::Config("momentum must be in [0, 1), decays non-negative".into()));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(Error::Config("val_fraction must be in [0, 1)".into()));
        }
        Ok(())
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_text(&text)
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let file: ConfigFile = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        file.into_config()
    }

    pub fn to_text(&self) -> String {
        let file = ConfigFile::from(self);
        toml::to_string(&file).expect("flat config serialises")
    }
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    layout: Option<String>,
    batch_size: Option<usize>,
    learning_rate: Option<f64>,
    momentum: Option<f64>,
    weight_decay: Option<f64>,
    epochs: Option<usize>,
    lr_decay: Option<f64>,
    lr_schedule: Option<LrSchedule>,
    kl_beta: Option<f64>,
    ce_weight: Option<f64>,
    dice_weight: Option<f64>,
    kl_reduction: Option<KlReduction>,
    level_count: Option<usize>,
    encoder_channels: Option<Vec<usize>>,
    latent_channels: Option<usize>,
    class_count: Option<usize>,
    in_channels: Option<usize>,
    input_size: Option<[usize; 2]>,
    output_size: Option<[usize; 2]>,
    seed: Option<u64>,
    /// `"random"` or an annotator index.
    annotator: Option<toml::Value>,
    val_fraction: Option<f64>,
}

impl ConfigFile {
    fn into_config(self) -> Result<TrainConfig> {
        let layout: Layout = match self.layout.as_deref() {
            Some(s) => s.parse()?,
            None => Layout::MultiAnnotator,
        };
        let base = match layout {
            Layout::MultiAnnotator => TrainConfig::multi_annotator(),
            Layout::MultiClass => TrainConfig::multi_class(),
        };
        let m = base.model.clone();
        let level_count = self.level_count.unwrap_or(m.level_count);
        let encoder_channels = match self.encoder_channels {
            Some(c) => c,
            // widths double per level from the default first width
            None if level_count != m.level_count => {
                (0..level_count).map(|i| m.encoder_channels[0] << i).collect()
            }
            None => m.encoder_channels.clone(),
        };
        let model = ModelConfig {
            level_count,
            encoder_channels,
            latent_channels: self.latent_channels.unwrap_or(m.latent_channels),
            class_count: self.class_count.unwrap_or(m.class_count),
            in_channels: self.in_channels.unwrap_or(m.in_channels),
            input_size: self.input_size.unwrap_or(m.input_size),
            output_size: self.output_size.unwrap_or(m.output_size),
            kl_reduction: self.kl_reduction.unwrap_or(m.kl_reduction),
        };
        let annotator = match self.annotator {
            None => base.annotator,
            Some(toml::Value::String(s)) if s == "random" => AnnotatorPolicy::Random,
            Some(toml::Value::Integer(k)) if k >= 0 => AnnotatorPolicy::Fixed(k as usize),
            Some(v) => return Err(Error::Config(format!("annotator must be \"random\" or an index, got {v}"))),
        };
        let cfg = TrainConfig {
            batch_size: self.batch_size.unwrap_or(base.batch_size),
            learning_rate: self.learning_rate.unwrap_or(base.learning_rate),
            momentum: self.momentum.unwrap_or(base.momentum),
            weight_decay: self.weight_decay.unwrap_or(base.weight_decay),
            epochs: self.epochs.unwrap_or(base.epochs),
            lr_decay: self.lr_decay.unwrap_or(base.lr_decay),
            lr_schedule: self.lr_schedule.unwrap_or(base.lr_schedule),
            loss: LossConfig {
                beta: self.kl_beta.unwrap_or(base.loss.beta),
                ce_weight: self.ce_weight.unwrap_or(base.loss.ce_weight),
                dice_weight: self.dice_weight.unwrap_or(base.loss.dice_weight),
            },
            model,
            seed: self.seed.unwrap_or(base.seed),
            annotator,
            val_fraction: self.val_fraction.unwrap_or(base.val_fraction),
            layout,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

impl From<&TrainConfig> for ConfigFile {
    fn from(c: &TrainConfig) -> Self {
        ConfigFile {
            layout: Some(
                match c.layout {
                    Layout::MultiAnnotator => "multi_annotator",
                    Layout::MultiClass => "multi_class",
                }
                .into(),
            ),
            batch_size: Some(c.batch_size),
            learning_rate: Some(c.learning_rate),
            momentum: Some(c.momentum),
            weight_decay: Some(c.weight_decay),
            epochs: Some(c.epochs),
            lr_decay: Some(c.lr_decay),
            lr_schedule: Some(c.lr_schedule),
            kl_beta: Some(c.loss.beta),
            ce_weight: Some(c.loss.ce_weight),
            dice_weight: Some(c.loss.dice_weight),
            kl_reduction: Some(c.model.kl_reduction),
            level_count: Some(c.model.level_count),
            encoder_channels: Some(c.model.encoder_channels.clone()),
            latent_channels: Some(c.model.latent_channels),
            class_count: Some(c.model.class_count),
            in_channels: Some(c.model.in_channels),
            input_size: Some(c.model.input_size),
            output_size: Some(c.model.output_size),
            seed: Some(c.seed),
            annotator: Some(match c.annotator {
                AnnotatorPolicy::Random => toml::Value::String("random".into()),
                AnnotatorPolicy::Fixed(k) => toml::Value::Integer(k as i64),
            }),
            val_fraction: Some(c.val_fraction),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_reference_hyperparameters() {
        let c = TrainConfig::default();
        assert_eq!(c.batch_size, 24);
        assert_eq!(c.learning_rate, 0.01);
        assert_eq!(TrainConfig::multi_class().learning_rate, 0.05);
        assert_eq!((c.momentum, c.weight_decay, c.epochs, c.lr_decay), (0.9, 1e-4, 150, 1e-4));
        assert_eq!(c.loss, LossConfig { beta: 0.1, ce_weight: 0.4, dice_weight: 0.6 });
        assert_eq!((c.model.input_size, c.model.output_size), ([224, 224], [512, 512]));
        c.validate().unwrap();
    }

    #[test]
    fn empty_file_gives_defaults() {
        assert_eq!(TrainConfig::from_text("").unwrap(), TrainConfig::default());
        let mc = TrainConfig::from_text("layout = \"multi_class\"").unwrap();
        assert_eq!(mc.learning_rate, 0.05);
    }

    #[test]
    fn text_round_trip() {
        let mut c = TrainConfig::default();
        c.annotator = AnnotatorPolicy::Fixed(2);
        c.model = ModelConfig::toy();
        assert_eq!(TrainConfig::from_text(&c.to_text()).unwrap(), c);
    }

    #[test]
    fn rejects_unknown_and_invalid_keys() {
        assert!(TrainConfig::from_text("batchsize = 3").is_err());
        assert!(TrainConfig::from_text("momentum = 1.5").is_err());
        assert!(TrainConfig::from_text("annotator = \"first\"").is_err());
    }

    #[test]
    fn poly_schedule_shape() {
        let s = LrSchedule::Poly;
        assert_eq!(s.rate(0.1, 1e-4, 0, 100), 0.1);
        assert!(s.rate(0.1, 1e-4, 50, 100) < 0.1);
        assert!((s.rate(0.1, 1e-4, 100, 100) - 1e-5).abs() < 1e-15);
        assert!((LrSchedule::InverseTime.rate(0.1, 0.5, 2, 10) - 0.05).abs() < 1e-15);
    }
}
