use serde::{Deserialize, Serialize};

use super::DiffusionError;
use crate::image::sha256_hex;

/// Shape and conditioning layout of a denoiser. The parameter count and the
/// initial parameters are pure functions of this value (plus an init seed).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiffusionConfig {
    pub resolution: usize,
    pub base_channels: usize,
    /// Channel multiplier per UNet level; one 2x downsampling between levels.
    pub channel_mult: Vec<usize>,
    /// 3 = image only, 6 = image plus an RGB conditioning raster.
    pub in_channels: usize,
    /// Number of location classes plus one null class (always the last row).
    pub class_count: usize,
    /// Secondary class table summed into the embedding (manipulation class for
    /// basemap models, zero when unused). Includes its own null row.
    #[serde(default)]
    pub aux_class_count: usize,
    pub cfg_dropout: f64,
}

impl DiffusionConfig {
    /// Laptop-scale model: 64 px, 32 base channels.
    pub fn toy(in_channels: usize, cities: usize) -> Self {
        Self {
            resolution: 64,
            base_channels: 32,
            channel_mult: vec![1, 2, 2, 2],
            in_channels,
            class_count: cities + 1,
            aux_class_count: 0,
            cfg_dropout: 0.1,
        }
    }

    /// Smallest useful model, for smoke runs: 32 px, 8 base channels.
    pub fn micro(in_channels: usize, cities: usize) -> Self {
        Self {
            resolution: 32,
            base_channels: 8,
            channel_mult: vec![1, 2, 2],
            in_channels,
            class_count: cities + 1,
            aux_class_count: 0,
            cfg_dropout: 0.1,
        }
    }

    /// Full-size configuration: 512 px with 128 base channels.
    pub fn full_scale(in_channels: usize, cities: usize) -> Self {
        Self {
            resolution: 512,
            base_channels: 128,
            channel_mult: vec![1, 1, 2, 2, 4, 4],
            in_channels,
            class_count: cities + 1,
            aux_class_count: 0,
            cfg_dropout: 0.1,
        }
    }

    pub fn preset(name: &str, in_channels: usize, cities: usize) -> Option<Self> {
        match name {
            "toy" => Some(Self::toy(in_channels, cities)),
            "micro" => Some(Self::micro(in_channels, cities)),
            "full" => Some(Self::full_scale(in_channels, cities)),
            _ => None,
        }
    }

    pub fn with_aux_classes(mut self, classes: usize) -> Self {
        self.aux_class_count = if classes == 0 { 0 } else { classes + 1 };
        self
    }

    pub fn validate(&self) -> Result<(), DiffusionError> {
        let bad = |msg: String| Err(DiffusionError::Config(msg));
        if self.in_channels != 3 && self.in_channels != 6 {
            return bad(format!("in_channels must be 3 or 6, got {}", self.in_channels));
        }
        if self.resolution == 0 || self.resolution % 8 != 0 {
            return bad(format!("resolution {} is not a positive multiple of 8", self.resolution));
        }
        if self.channel_mult.is_empty() || self.channel_mult.contains(&0) {
            return bad("channel_mult must be non-empty with positive entries".into());
        }
        let factor = 1usize << (self.channel_mult.len() - 1);
        if self.resolution % factor != 0 {
            return bad(format!(
                "resolution {} not divisible by 2^{} for {} levels",
                self.resolution,
                self.channel_mult.len() - 1,
                self.channel_mult.len()
            ));
        }
        if self.base_channels == 0 || self.base_channels % 2 != 0 {
            return bad("base_channels must be positive and even".into());
        }
        if self.class_count == 0 {
            return bad("class_count must include the null class".into());
        }
        if self.aux_class_count == 1 {
            return bad("aux_class_count must be 0 or at least 2".into());
        }
        if !(0.0..1.0).contains(&self.cfg_dropout) {
            return bad(format!("cfg_dropout {} outside [0, 1)", self.cfg_dropout));
        }
        Ok(())
    }

    pub fn null_class(&self) -> usize {
        self.class_count - 1
    }

    pub fn embed_dim(&self) -> usize {
        4 * self.base_channels
    }

    pub fn digest(&self) -> String {
        sha256_hex(&serde_json::to_vec(self).expect("config serializes"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        DiffusionConfig::toy(6, 4).validate().unwrap();
        DiffusionConfig::full_scale(3, 152).validate().unwrap();
        DiffusionConfig::micro(3, 1).validate().unwrap();
    }

    #[test]
    fn rejects_bad_shapes() {
        let mut c = DiffusionConfig::toy(6, 2);
        c.in_channels = 4;
        assert!(c.validate().is_err());
        let mut c = DiffusionConfig::toy(6, 2);
        c.resolution = 60;
        assert!(c.validate().is_err());
        let mut c = DiffusionConfig::toy(6, 2);
        c.cfg_dropout = 1.0;
        assert!(c.validate().is_err());
    }
}
