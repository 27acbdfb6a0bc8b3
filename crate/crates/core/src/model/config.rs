use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Every hyperparameter of the network, its loss and its refinement stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Semantic categories, not counting the blank class 0.
    pub num_classes: usize,
    /// Dilation rates of the spatial pyramid; 0 means an ordinary convolution.
    pub spatial_rates: Vec<usize>,
    /// Channel multipliers of the representation pyramid.
    pub multipliers: Vec<usize>,
    /// Channel parameters of each convolution sequence.
    pub channel_params: Vec<usize>,
    pub kernel_size: usize,
    pub tau: f64,
    pub gamma: f64,
    pub alpha: f64,
    pub beta: f64,
    pub encoder_blocks: usize,
    pub decoder_blocks: usize,
    pub input_channels: usize,
    pub seed: u64,
    /// Width of the first encoder stage; later stages grow to twice this.
    pub base_width: usize,
    /// Number of leading encoder stages with stride 2.
    pub downsample_stages: usize,
    /// Output width of every squeeze gate and of the pair maps.
    pub pyramid_width: usize,
    /// Hidden width of the branch-weight perceptrons.
    pub perceptron_hidden: usize,
    /// Hidden width of the two refinement convolution series.
    pub atl_hidden: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            num_classes: 6,
            spatial_rates: vec![0, 6, 12],
            multipliers: vec![16, 32, 64],
            channel_params: vec![1, 2, 3, 4, 5],
            kernel_size: 3,
            tau: 0.5,
            gamma: 0.5,
            alpha: 1.0,
            beta: 1.0,
            encoder_blocks: 4,
            decoder_blocks: 4,
            input_channels: 3,
            seed: 0,
            base_width: 8,
            downsample_stages: 3,
            pyramid_width: 8,
            perceptron_hidden: 16,
            atl_hidden: 8,
        }
    }
}

impl ModelConfig {
    /// Small pyramids sized for single-core training on 64x64 scenes.
    pub fn toy(num_classes: usize) -> Self {
        Self {
            num_classes,
            spatial_rates: vec![0, 2, 4],
            multipliers: vec![1, 2, 4],
            channel_params: vec![1, 2],
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.num_classes == 0 || self.num_classes > 255 {
            return bad(format!("num_classes must be in 1..=255, got {}", self.num_classes));
        }
        if self.spatial_rates.is_empty() || self.multipliers.is_empty() || self.channel_params.is_empty() {
            return bad("spatial_rates, multipliers and channel_params must be nonempty".into());
        }
        if self.multipliers.contains(&0) || self.channel_params.contains(&0) {
            return bad("multipliers and channel_params must be positive".into());
        }
        if self.kernel_size == 0 || self.kernel_size % 2 == 0 {
            return bad(format!("kernel_size must be odd, got {}", self.kernel_size));
        }
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return bad(format!("tau must be in (0, 1), got {}", self.tau));
        }
        if !(self.gamma >= 0.0) || !(self.alpha >= 0.0) || !(self.beta >= 0.0) {
            return bad("gamma, alpha and beta must be >= 0".into());
        }
        if self.input_channels == 0 {
            return bad("input_channels must be >= 1".into());
        }
        if self.downsample_stages == 0 || self.encoder_blocks < self.downsample_stages {
            return bad(format!(
                "need 1 <= downsample_stages <= encoder_blocks, got {} and {}",
                self.downsample_stages, self.encoder_blocks
            ));
        }
        if self.decoder_blocks < self.downsample_stages {
            return bad(format!(
                "decoder_blocks ({}) must be >= downsample_stages ({})",
                self.decoder_blocks, self.downsample_stages
            ));
        }
        if self.base_width < 2 || self.pyramid_width == 0 || self.perceptron_hidden == 0 || self.atl_hidden == 0 {
            return bad("widths must be positive (base_width >= 2)".into());
        }
        Ok(())
    }

    pub fn n_d(&self) -> usize {
        self.spatial_rates.len()
    }

    pub fn n_r(&self) -> usize {
        self.multipliers.len()
    }

    pub fn n_c(&self) -> usize {
        self.channel_params.len()
    }

    /// Channels of the semantic heads: blank plus every category.
    pub fn semantic_channels(&self) -> usize {
        self.num_classes + 1
    }

    /// Input extents must be multiples of this.
    pub fn stride_product(&self) -> usize {
        1 << self.downsample_stages
    }

    /// Output width of encoder stage `s` (0-based).
    pub fn stage_width(&self, s: usize) -> usize {
        self.base_width * (2 + s).min(4) / 2
    }

    /// Width of the deepest features, where the pyramids operate.
    pub fn deep_width(&self) -> usize {
        self.stage_width(self.encoder_blocks - 1)
    }

    pub fn dilation(&self, j: usize) -> usize {
        self.spatial_rates[j].max(1)
    }
}
