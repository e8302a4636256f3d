//! 16-bit PCM mono WAV input and output.

use std::path::Path;

use anyhow::{bail, Context, Result};
use hound::{SampleFormat, WavReader, WavSpec, WavWriter};

const FULL_SCALE: f64 = 32768.0;

#[derive(Clone, Debug, PartialEq)]
pub struct WavAudio {
    pub sample_rate: u32,
    /// Samples in `[-1, 1)`.
    pub samples: Vec<f64>,
}

impl WavAudio {
    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    /// Fails unless the file was recorded at `rate`.
    pub fn require_rate(&self, rate: u32, path: &Path) -> Result<()> {
        if self.sample_rate != rate {
            bail!("{}: sample rate is {} Hz, the codec requires {rate} Hz", path.display(), self.sample_rate);
        }
        Ok(())
    }
}

pub fn read_wav(path: &Path) -> Result<WavAudio> {
    let reader = WavReader::open(path).with_context(|| format!("cannot read WAV file {}", path.display()))?;
    let spec = reader.spec();
    if spec.channels != 1 {
        bail!("{}: has {} channels, only mono is supported", path.display(), spec.channels);
    }
    if spec.sample_format != SampleFormat::Int || spec.bits_per_sample != 16 {
        bail!("{}: only 16-bit integer PCM is supported", path.display());
    }
    let samples = reader
        .into_samples::<i16>()
        .map(|s| s.map(|v| v as f64 / FULL_SCALE))
        .collect::<std::result::Result<Vec<_>, _>>()
        .with_context(|| format!("{}: truncated sample data", path.display()))?;
    Ok(WavAudio { sample_rate: spec.sample_rate, samples })
}

/// Writes samples clipped to `[-1, 1]` as 16-bit PCM mono.
pub fn write_wav(path: &Path, sample_rate: u32, samples: &[f64]) -> Result<()> {
    let spec = WavSpec { channels: 1, sample_rate, bits_per_sample: 16, sample_format: SampleFormat::Int };
    let mut w = WavWriter::create(path, spec).with_context(|| format!("cannot create {}", path.display()))?;
    for &s in samples {
        let v = (s.clamp(-1.0, 1.0) * FULL_SCALE).round().clamp(i16::MIN as f64, i16::MAX as f64);
        w.write_sample(v as i16)?;
    }
    w.finalize()?;
    Ok(())
}
