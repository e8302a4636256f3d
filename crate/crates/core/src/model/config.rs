use serde::{Deserialize, Serialize};

use crate::error::{bail, Result};
use crate::nd::WeightInit;
use crate::quantizer::VqConfig;

/// Architecture of the encoder/quantizer/decoder stack.
///
/// Encoder block `i` has input width `base_channels * 2^i` and downsamples
/// by `rates[i]`; the latent width is `base_channels * 2^N`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub rates: Vec<usize>,
    /// Total downsampling the rates must multiply to.
    pub downsample: usize,
    pub base_channels: usize,
    pub vq: VqConfig,
    pub sample_rate: u32,
    pub lstm_layers: usize,
    pub residual_kernel: usize,
    pub dilations: Vec<usize>,
    /// Encoder and quantizer projection weights.
    pub encoder_init: WeightInit,
    pub decoder_init: WeightInit,
}

impl ModelConfig {
    fn preset(rates: Vec<usize>, base_channels: usize, code_dim: usize, codebook_size: usize) -> Self {
        let downsample = rates.iter().product();
        let latent = base_channels << rates.len();
        Self {
            rates,
            downsample,
            base_channels,
            vq: VqConfig { input_dim: latent, code_dim, codebook_size },
            sample_rate: 16000,
            lstm_layers: 2,
            residual_kernel: 7,
            dilations: vec![1, 3, 9],
            encoder_init: WeightInit::FanIn(1.0 / 3f64.sqrt()),
            decoder_init: WeightInit::Normal(0.02),
        }
    }

    /// Four blocks, 32 -> 512 channels, R = 200.
    pub fn base() -> Self {
        Self::preset(vec![2, 4, 5, 5], 32, 8, 8192)
    }

    /// Five blocks, 48 -> 1536 channels, R = 200.
    pub fn big() -> Self {
        Self::preset(vec![2, 2, 5, 5, 2], 48, 8, 8192)
    }

    /// Three blocks, 8 -> 64 channels, R = 40, 64 codes.
    pub fn toy() -> Self {
        Self::preset(vec![2, 4, 5], 8, 8, 64)
    }

    pub fn by_name(name: &str) -> Result<Self> {
        match name {
            "toy" => Ok(Self::toy()),
            "base" => Ok(Self::base()),
            "big" => Ok(Self::big()),
            other => bail!(Config, "unknown preset `{other}` (expected toy, base or big)"),
        }
    }

    /// Same architecture quantizing directly in the latent space.
    pub fn full_width(mut self) -> Self {
        self.vq.code_dim = self.vq.input_dim;
        self
    }

    pub fn n_blocks(&self) -> usize {
        self.rates.len()
    }

    /// Input width of each encoder block followed by the latent width.
    pub fn channels(&self) -> Vec<usize> {
        (0..=self.n_blocks()).map(|i| self.base_channels << i).collect()
    }

    pub fn latent_dim(&self) -> usize {
        self.base_channels << self.n_blocks()
    }

    pub fn frame_rate(&self) -> f64 {
        self.sample_rate as f64 / self.downsample as f64
    }

    pub fn validate(&self) -> Result<()> {
        if self.rates.is_empty() || self.rates.iter().any(|&r| r < 2) {
            bail!(Config, "rates must be a non-empty list of factors of at least 2, got {:?}", self.rates);
        }
        let product: usize = self.rates.iter().product();
        if product != self.downsample {
            bail!(Config, "rates {:?} multiply to {product}, not the requested R = {}", self.rates, self.downsample);
        }
        if self.base_channels == 0 || self.lstm_layers == 0 || self.residual_kernel % 2 == 0 {
            bail!(Config, "need positive channels and LSTM depth and an odd residual kernel");
        }
        if self.vq.input_dim != self.latent_dim() {
            bail!(Config, "quantizer input width {} differs from latent width {}", self.vq.input_dim, self.latent_dim());
        }
        if self.sample_rate == 0 {
            bail!(Config, "sample rate must be positive");
        }
        self.encoder_init.validate()?;
        self.decoder_init.validate()?;
        self.vq.validate()
    }
}
