use serde::{Deserialize, Serialize};

use crate::latent::KlReduction;
use crate::{Error, Result};

/// Architecture of a VAE U-net.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Number of resolution levels, each with its own latent.
    pub level_count: usize,
    /// Feature width of each encoder level, finest first.
    pub encoder_channels: Vec<usize>,
    /// Latent channels per level.
    pub latent_channels: usize,
    pub class_count: usize,
    /// Image channels.
    pub in_channels: usize,
    /// `[height, width]` of network input.
    pub input_size: [usize; 2],
    /// `[height, width]` of predicted label maps.
    pub output_size: [usize; 2],
    #[serde(default)]
    pub kl_reduction: KlReduction,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            level_count: 3,
            encoder_channels: vec![64, 128, 256],
            latent_channels: 2,
            class_count: 2,
            in_channels: 1,
            input_size: [224, 224],
            output_size: [512, 512],
            kl_reduction: KlReduction::Mean,
        }
    }
}

impl ModelConfig {
    /// Small configuration for synthetic 32×32 data.
    pub fn toy() -> Self {
        Self {
            level_count: 3,
            encoder_channels: vec![8, 16, 32],
            latent_channels: 2,
            class_count: 2,
            in_channels: 1,
            input_size: [32, 32],
            output_size: [32, 32],
            kl_reduction: KlReduction::Mean,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.level_count == 0 {
            return Err(Error::Config("level_count must be at least 1".into()));
        }
        if self.encoder_channels.len() != self.level_count {
            return Err(Error::Config(format!(
                "encoder_channels has {} entries, level_count is {}",
                self.encoder_channels.len(),
                self.level_count
            )));
        }
        if self.encoder_channels.contains(&0) {
            return Err(Error::Config("encoder channel widths must be positive".into()));
        }
        if self.latent_channels == 0 {
            return Err(Error::Config("latent_channels must be at least 1".into()));
        }
        if self.class_count < 2 {
            return Err(Error::Config("class_count must be at least 2".into()));
        }
        if self.in_channels == 0 {
            return Err(Error::Config("in_channels must be at least 1".into()));
        }
        let div = 1usize << (self.level_count - 1);
        for (name, size) in [("input_size", self.input_size), ("output_size", self.output_size)] {
            if size.iter().any(|&s| s == 0 || s % div != 0) {
                return Err(Error::Config(format!(
                    "{name} {size:?} must be positive and divisible by {div}"
                )));
            }
        }
        Ok(())
    }

    /// Spatial size of level `i` in the network's working resolution.
    pub fn level_size(&self, level: usize) -> [usize; 2] {
        [self.input_size[0] >> level, self.input_size[1] >> level]
    }

    pub fn resizes_output(&self) -> bool {
        self.input_size != self.output_size
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }
}
