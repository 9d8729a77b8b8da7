//! Network architecture description.
//!
//! The stem and pooling reduce the 71-point frequency axis to 18 while
//! preserving the width (fiber) axis; four residual stages then halve
//! the frequency extent at each stage boundary (18 -> 18 -> 9 -> 5 ->
//! 3) and a full-extent head conv collapses it to a 1 x width BFS row.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub input_freq: usize,
    pub stem_channels: usize,
    /// (freq, width) stem kernel; stride (2,1), padding keeps width.
    pub stem_kernel: (usize, usize),
    pub stage_blocks: Vec<usize>,
    pub stage_channels: Vec<usize>,
    /// (freq, width) kernel of the residual-block convolutions.
    pub block_kernel: (usize, usize),
    /// Inference window width and the edge margin excluded from
    /// window outputs (mirrors the training loss mask).
    pub infer_window: usize,
    pub edge_margin: usize,
}

impl ModelConfig {
    /// Architecture matching the published design: 16 residual blocks
    /// in four stages, 540-wide inference windows.
    pub fn full() -> Self {
        ModelConfig {
            input_freq: 71,
            stem_channels: 64,
            stem_kernel: (7, 7),
            stage_blocks: vec![3, 4, 6, 3],
            stage_channels: vec![64, 128, 256, 512],
            block_kernel: (3, 3),
            infer_window: 540,
            edge_margin: 20,
        }
    }

    /// CPU-tractable variant: one block per stage, narrower channels,
    /// 128-wide windows. The stem is widened along the fiber axis so
    /// the width receptive field still covers the pump pulse extent.
    pub fn desk() -> Self {
        ModelConfig {
            input_freq: 71,
            stem_channels: 16,
            stem_kernel: (7, 61),
            stage_blocks: vec![1, 1, 1, 1],
            stage_channels: vec![16, 32, 64, 128],
            block_kernel: (3, 3),
            infer_window: 128,
            edge_margin: 20,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.stage_blocks.len() != self.stage_channels.len() {
            return Err(Error::InvalidInput(
                "stage block and channel lists must have equal length".into(),
            ));
        }
        if self.stage_blocks.is_empty()
            || self.stage_blocks.iter().any(|&b| b == 0)
            || self.stage_channels.iter().any(|&c| c == 0)
            || self.stem_channels == 0
        {
            return Err(Error::InvalidInput("all stage counts must be >= 1".into()));
        }
        if self.stem_kernel.0 % 2 == 0
            || self.stem_kernel.1 % 2 == 0
            || self.block_kernel.0 % 2 == 0
            || self.block_kernel.1 % 2 == 0
        {
            return Err(Error::InvalidInput(
                "kernels must be odd so padding preserves width".into(),
            ));
        }
        if self.frequency_extents().last().copied().unwrap_or(0) < 1 {
            return Err(Error::InvalidInput(
                "config collapses the frequency extent below 1".into(),
            ));
        }
        if self.receptive_field_width() < 40 {
            return Err(Error::InvalidInput(format!(
                "width receptive field {} is below the 40-sample pulse extent",
                self.receptive_field_width()
            )));
        }
        if self.infer_window <= 2 * self.edge_margin {
            return Err(Error::InvalidInput(
                "inference window must exceed twice the edge margin".into(),
            ));
        }
        Ok(())
    }

    fn down_extent(input: usize, kernel: usize, stride: usize, pad: usize) -> usize {
        (input + 2 * pad - kernel) / stride + 1
    }

    /// Frequency extents after stem, pool, and each stage.
    pub fn frequency_extents(&self) -> Vec<usize> {
        let mut extents = Vec::new();
        let mut f = Self::down_extent(self.input_freq, self.stem_kernel.0, 2, self.stem_kernel.0 / 2);
        extents.push(f);
        f = Self::down_extent(f, 3, 2, 1);
        extents.push(f);
        for stage in 0..self.stage_blocks.len() {
            if stage > 0 {
                f = Self::down_extent(f, self.block_kernel.0, 2, self.block_kernel.0 / 2);
            }
            extents.push(f);
        }
        extents
    }

    /// Receptive field along the width axis (all width strides are 1,
    /// so kernel extents add).
    pub fn receptive_field_width(&self) -> usize {
        let convs_per_block = 2;
        let blocks: usize = self.stage_blocks.iter().sum();
        1 + (self.stem_kernel.1 - 1)
            + 2 // 3-wide max pool
            + blocks * convs_per_block * (self.block_kernel.1 - 1)
    }

    /// Columns each training/inference window contributes: the window
    /// minus the edge margin on both sides.
    pub fn window_stride(&self) -> usize {
        self.infer_window - 2 * self.edge_margin
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_config_extents_match_waypoints() {
        let cfg = ModelConfig::full();
        cfg.validate().unwrap();
        // 71 -> 36 (stem) -> 18 (pool) -> 18 -> 9 -> 5 -> 3
        assert_eq!(cfg.frequency_extents(), vec![36, 18, 18, 9, 5, 3]);
    }

    #[test]
    fn desk_config_same_extents() {
        let cfg = ModelConfig::desk();
        cfg.validate().unwrap();
        assert_eq!(cfg.frequency_extents(), vec![36, 18, 18, 9, 5, 3]);
    }

    #[test]
    fn receptive_fields_exceed_pulse_extent() {
        assert_eq!(ModelConfig::full().receptive_field_width(), 73);
        assert_eq!(ModelConfig::desk().receptive_field_width(), 79);
        assert!(ModelConfig::full().receptive_field_width() >= 40);
        assert!(ModelConfig::desk().receptive_field_width() >= 40);
    }

    #[test]
    fn invalid_configs_rejected() {
        let mut cfg = ModelConfig::desk();
        cfg.stage_channels.pop();
        assert!(cfg.validate().is_err());
        let mut cfg = ModelConfig::desk();
        cfg.stem_kernel = (7, 7); // width receptive field too small
        assert!(cfg.validate().is_err());
        // same-padded stride-2 stages bottom out at extent 1 and stay valid
        let mut cfg = ModelConfig::full();
        cfg.stage_blocks = vec![3, 4, 6, 3, 3, 3, 3];
        cfg.stage_channels = vec![64; 7];
        cfg.validate().unwrap();
        assert_eq!(cfg.frequency_extents().last(), Some(&1));
    }
}
