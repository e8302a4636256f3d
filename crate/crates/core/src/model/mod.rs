//! Convolutional + recurrent encoder and decoder around a single-codebook
//! quantizer.

mod config;
pub(crate) mod layers;
mod snake;

pub use config::ModelConfig;
pub use snake::{snake, SNAKE_EPS};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::bitstream::{EncodedStream, StreamHeader};
use crate::checkpoint::{Checkpoint, DType};
use crate::error::{bail, Error, Result};
use crate::nd::{Bound, ParamStore, Tape, Tensor, Var};
use crate::quantizer::Quantizer;
use layers::{Builder, Conv, LstmStack, ResidualUnit, Snake, Upsample};

#[derive(Clone, Debug)]
struct EncoderBlock {
    units: Vec<ResidualUnit>,
    act: Snake,
    down: Conv,
}

#[derive(Clone, Debug)]
struct DecoderBlock {
    act: Snake,
    up: Upsample,
    units: Vec<ResidualUnit>,
}

#[derive(Clone, Debug)]
struct Encoder {
    conv_in: Conv,
    blocks: Vec<EncoderBlock>,
    lstm: LstmStack,
}

#[derive(Clone, Debug)]
struct Decoder {
    lstm: LstmStack,
    blocks: Vec<DecoderBlock>,
    act_out: Snake,
    conv_out: Conv,
}

/// Result of one differentiable pass through the whole generator.
pub struct ForwardOutput<'t> {
    /// `[B, 1, T]`
    pub x_hat: Var<'t>,
    /// `b`-major code indices, `frames` per item.
    pub indices: Vec<usize>,
    pub frames: usize,
    pub codebook_loss: Var<'t>,
    pub commitment_loss: Var<'t>,
}

/// Encoder, quantizer and decoder with their parameters.
#[derive(Clone, Debug)]
pub struct GeneratorModel {
    pub config: ModelConfig,
    pub params: ParamStore,
    pub quantizer: Quantizer,
    encoder: Encoder,
    decoder: Decoder,
}

impl GeneratorModel {
    /// Builds a freshly initialized model; the same `(config, seed)` always
    /// gives bit-identical parameters.
    pub fn build(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let ch = config.channels();
        let k = config.residual_kernel;
        let (encoder, decoder) = {
            let mut bld = Builder { store: &mut store, rng: &mut rng, init: config.encoder_init };
            let units = |bld: &mut Builder<'_, ChaCha8Rng>, name: &str, c: usize| {
                config
                    .dilations
                    .iter()
                    .enumerate()
                    .map(|(j, &d)| ResidualUnit::new(bld, &format!("{name}.res{j}"), c, k, d))
                    .collect::<Vec<_>>()
            };
            let conv_in = Conv::new(&mut bld, "enc.conv_in", 1, ch[0], k, 1, 1, k / 2);
            let mut blocks = Vec::new();
            for (i, &r) in config.rates.iter().enumerate() {
                let name = format!("enc.block{i}");
                blocks.push(EncoderBlock {
                    units: units(&mut bld, &name, ch[i]),
                    act: Snake::new(&mut bld, &format!("{name}.act"), ch[i]),
                    down: Conv::new(&mut bld, &format!("{name}.down"), ch[i], ch[i + 1], 2 * r, r, 1, r.div_ceil(2)),
                });
            }
            let latent = config.latent_dim();
            let lstm = LstmStack::new(&mut bld, "enc.lstm", latent, config.lstm_layers);
            let encoder = Encoder { conv_in, blocks, lstm };

            bld.init = config.decoder_init;
            let lstm = LstmStack::new(&mut bld, "dec.lstm", latent, config.lstm_layers);
            let mut blocks = Vec::new();
            for (j, i) in (0..config.n_blocks()).rev().enumerate() {
                let name = format!("dec.block{j}");
                blocks.push(DecoderBlock {
                    act: Snake::new(&mut bld, &format!("{name}.act"), ch[i + 1]),
                    up: Upsample::new(&mut bld, &format!("{name}.up"), ch[i + 1], ch[i], config.rates[i]),
                    units: units(&mut bld, &name, ch[i]),
                });
            }
            let act_out = Snake::new(&mut bld, "dec.act_out", ch[0]);
            let conv_out = Conv::new(&mut bld, "dec.conv_out", ch[0], 1, k, 1, 1, k / 2);
            (encoder, Decoder { lstm, blocks, act_out, conv_out })
        };
        let quantizer = Quantizer::new(config.vq.clone(), &mut store, "vq", config.encoder_init, &mut rng)?;
        Ok(Self { config, params: store, quantizer, encoder, decoder })
    }

    pub fn count_params(&self) -> usize {
        self.params.numel()
    }

    /// Codes per second of audio.
    pub fn frame_rate(&self) -> f64 {
        self.config.frame_rate()
    }

    fn check_input(&self, shape: &[usize]) -> Result<()> {
        if shape.len() != 3 || shape[1] != 1 {
            bail!(Shape, "generator expects [B, 1, T] audio, got {shape:?}");
        }
        let r = self.config.downsample;
        if shape[2] == 0 || shape[2] % r != 0 {
            bail!(Contract, "signal length {} is not a positive multiple of the frame size {r}", shape[2]);
        }
        Ok(())
    }

    /// `[B, 1, T] -> [B, latent, T / R]` before quantization.
    pub fn encode_latent<'t>(&self, p: &Bound<'t>, x: Var<'t>) -> Result<Var<'t>> {
        self.check_input(&x.shape())?;
        let enc = &self.encoder;
        let mut y = enc.conv_in.forward(p, x)?;
        for block in &enc.blocks {
            for unit in &block.units {
                y = unit.forward(p, y)?;
            }
            y = block.act.forward(p, y)?;
            y = block.down.forward(p, y)?;
        }
        enc.lstm.forward(p, y)
    }

    /// `[B, latent, F] -> [B, 1, F * R]`.
    pub fn decode_latent<'t>(&self, p: &Bound<'t>, z: Var<'t>) -> Result<Var<'t>> {
        let dec = &self.decoder;
        let mut y = dec.lstm.forward(p, z)?;
        for block in &dec.blocks {
            y = block.act.forward(p, y)?;
            y = block.up.forward(p, y)?;
            for unit in &block.units {
                y = unit.forward(p, y)?;
            }
        }
        let y = dec.act_out.forward(p, y)?;
        dec.conv_out.forward(p, y)
    }

    pub fn forward<'t>(&self, p: &Bound<'t>, x: Var<'t>) -> Result<ForwardOutput<'t>> {
        let h = self.encode_latent(p, x)?;
        let frames = h.shape()[2];
        let vq = self.quantizer.forward(p, h)?;
        let x_hat = self.decode_latent(p, vq.z_d)?;
        Ok(ForwardOutput {
            x_hat,
            indices: vq.indices,
            frames,
            codebook_loss: vq.codebook_loss,
            commitment_loss: vq.commitment_loss,
        })
    }

    /// Code indices of a mono signal whose length is a multiple of `R`.
    pub fn encode(&self, signal: &[f64]) -> Result<Vec<usize>> {
        Ok(self.encode_batch(&Tensor::new(&[1, 1, signal.len()], signal.to_vec())?)?.remove(0))
    }

    /// Code indices for each item of a `[B, 1, T]` batch.
    pub fn encode_batch(&self, x: &Tensor) -> Result<Vec<Vec<usize>>> {
        self.check_input(x.shape())?;
        let tape = Tape::new();
        let p = self.params.bind(&tape, false);
        let h = self.encode_latent(&p, tape.constant(x.clone()))?;
        let frames = h.shape()[2];
        let vq = self.quantizer.forward(&p, h)?;
        Ok(vq.indices.chunks(frames).map(<[usize]>::to_vec).collect())
    }

    /// Waveform of `indices.len() * R` samples.
    pub fn decode(&self, indices: &[usize]) -> Result<Vec<f64>> {
        let k = self.config.vq.codebook_size;
        if let Some(&bad) = indices.iter().find(|&&i| i >= k) {
            bail!(Contract, "code index {bad} is outside a codebook of {k} entries");
        }
        if indices.is_empty() {
            return Ok(Vec::new());
        }
        let tape = Tape::new();
        let p = self.params.bind(&tape, false);
        let z = self.quantizer.lookup(&p, indices, 1, indices.len())?;
        let y = self.decode_latent(&p, z)?;
        Ok(y.value().data().to_vec())
    }

    /// Checkpoint holding the config under `meta.model` and weights under `gen.`.
    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        let mut c = Checkpoint::new(serde_json::json!({ "model": serde_json::to_value(&self.config)? }));
        c.add_store("gen.", &self.params);
        Ok(c)
    }

    pub fn from_checkpoint(c: &Checkpoint) -> Result<Self> {
        let Some(cfg) = c.meta.get("model") else {
            return Err(Error::Format("checkpoint metadata has no model config".into()));
        };
        let config: ModelConfig = serde_json::from_value(cfg.clone())?;
        let mut m = Self::build(config, 0)?;
        c.load_store("gen.", &mut m.params)?;
        Ok(m)
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        self.to_checkpoint()?.save(path, DType::F64)
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }

    /// Zero-pads `signal` to whole frames and encodes it, recording the
    /// original length in the header.
    pub fn encode_stream(&self, signal: &[f64]) -> Result<EncodedStream> {
        let cfg = &self.config;
        let r = cfg.downsample;
        let frames = signal.len().div_ceil(r);
        let indices = if frames == 0 {
            Vec::new()
        } else {
            let mut padded = signal.to_vec();
            padded.resize(frames * r, 0.0);
            self.encode(&padded)?
        };
        let header = StreamHeader::new(cfg.sample_rate, r, cfg.vq.codebook_size, frames, signal.len())?;
        Ok(EncodedStream { header, indices })
    }

    /// Fails unless the stream was produced with this model's geometry.
    pub fn check_stream(&self, h: &StreamHeader) -> Result<()> {
        let cfg = &self.config;
        if h.codebook_size() != cfg.vq.codebook_size {
            bail!(Contract, "stream codebook size K={} but checkpoint has K={}", h.codebook_size(), cfg.vq.codebook_size);
        }
        if h.downsample as usize != cfg.downsample {
            bail!(Contract, "stream frame size R={} but checkpoint has R={}", h.downsample, cfg.downsample);
        }
        if h.sample_rate != cfg.sample_rate {
            bail!(Contract, "stream sample rate {} Hz but checkpoint uses {} Hz", h.sample_rate, cfg.sample_rate);
        }
        Ok(())
    }

    /// Inverse of [`Self::encode_stream`]: exactly `original_len` samples.
    pub fn decode_stream(&self, s: &EncodedStream) -> Result<Vec<f64>> {
        self.check_stream(&s.header)?;
        let mut y = self.decode(&s.indices)?;
        y.truncate(s.header.original_len as usize);
        Ok(y)
    }

    /// Encode then decode without gradient tracking.
    pub fn reconstruct(&self, signal: &[f64]) -> Result<Vec<f64>> {
        self.decode(&self.encode(signal)?)
    }
}

#[cfg(test)]
mod tests;
