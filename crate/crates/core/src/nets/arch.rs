use serde::{Deserialize, Serialize};

use crate::chipstore::{CHIP_SIZE, N_CHANNELS};
use crate::error::{Error, Result};

/// Network sizes. Every channel count is multiplied by `width_scale`
/// (rounded, at least 1), so the CI variant and the full-size network share
/// one code path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchConfig {
    pub width_scale: f64,
    /// Stage-1 embedding channels before scaling.
    pub embedding_channels: usize,
    /// Number of downsampling stages in the encoder.
    pub encoder_depth: usize,
    /// Residual blocks per encoder stage (`encoder_depth` entries).
    pub blocks_per_stage: Vec<usize>,
    pub input_channels: usize,
    pub chip_size: usize,
    /// Width of the first encoder stage before scaling; doubles per stage.
    pub base_channels: usize,
    /// Hidden units of the stage-1 classification head before scaling.
    pub head_hidden: usize,
    /// Stage-2 feature CNN width before scaling.
    pub seg_channels: usize,
    /// Stage-2 fusion head width before scaling.
    pub fusion_channels: usize,
}

impl ArchConfig {
    /// Full-size configuration: ResNet-34 stage layout.
    pub fn full() -> Self {
        Self {
            width_scale: 1.0,
            embedding_channels: 64,
            encoder_depth: 4,
            blocks_per_stage: vec![3, 4, 6, 3],
            input_channels: N_CHANNELS,
            chip_size: CHIP_SIZE,
            base_channels: 64,
            head_hidden: 64,
            seg_channels: 192,
            fusion_channels: 128,
        }
    }

    /// Small configuration used by tests and CI runs.
    pub fn ci() -> Self {
        Self {
            width_scale: 0.125,
            encoder_depth: 2,
            blocks_per_stage: vec![1, 1],
            seg_channels: 64,
            fusion_channels: 64,
            ..Self::full()
        }
    }

    pub fn with_chip_size(mut self, chip_size: usize) -> Self {
        self.chip_size = chip_size;
        self
    }

    pub fn scaled(&self, channels: usize) -> usize {
        ((channels as f64 * self.width_scale).round() as usize).max(1)
    }

    pub fn embedding(&self) -> usize {
        self.scaled(self.embedding_channels)
    }

    /// Encoder stage widths.
    pub fn stage_channels(&self) -> Vec<usize> {
        (0..self.encoder_depth).map(|i| self.scaled(self.base_channels << i)).collect()
    }

    /// Decoder widths, one per encoder stage (half the stage width).
    pub fn decoder_channels(&self) -> Vec<usize> {
        (0..self.encoder_depth).map(|i| self.scaled((self.base_channels << i) / 2)).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.width_scale > 0.0 && self.width_scale <= 1.0) {
            return bad(format!("width_scale {} outside (0, 1]", self.width_scale));
        }
        if self.encoder_depth == 0 || self.blocks_per_stage.len() != self.encoder_depth {
            return bad(format!(
                "encoder_depth {} needs as many blocks_per_stage entries, got {:?}",
                self.encoder_depth, self.blocks_per_stage
            ));
        }
        if self.blocks_per_stage.contains(&0) {
            return bad("every encoder stage needs at least one block".into());
        }
        if self.input_channels != N_CHANNELS {
            return bad(format!("input_channels must be {N_CHANNELS}"));
        }
        let factor = 1usize << self.encoder_depth;
        if self.chip_size == 0 || !self.chip_size.is_multiple_of(factor) {
            return bad(format!("chip_size {} not divisible by 2^{}", self.chip_size, self.encoder_depth));
        }
        if [self.embedding_channels, self.base_channels, self.head_hidden, self.seg_channels, self.fusion_channels]
            .contains(&0)
        {
            return bad("channel counts must be >= 1".into());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        ArchConfig::full().validate().unwrap();
        ArchConfig::ci().validate().unwrap();
        assert_eq!(ArchConfig::full().embedding(), 64);
        assert_eq!(ArchConfig::full().stage_channels(), vec![64, 128, 256, 512]);
    }

    #[test]
    fn scaling_never_reaches_zero() {
        let a = ArchConfig { width_scale: 0.001, ..ArchConfig::full() };
        assert_eq!(a.embedding(), 1);
        assert!(a.stage_channels().iter().all(|&c| c >= 1));
    }

    #[test]
    fn rejects_bad_configs() {
        assert!(ArchConfig { chip_size: 100, ..ArchConfig::full() }.validate().is_err());
        assert!(ArchConfig { width_scale: 1.5, ..ArchConfig::full() }.validate().is_err());
        assert!(ArchConfig { blocks_per_stage: vec![1], ..ArchConfig::full() }.validate().is_err());
    }
}
