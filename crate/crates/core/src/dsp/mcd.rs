use std::f64::consts::{LN_10, PI};

use super::mel::{log_mel_rows, MelScaleSpec};
use crate::error::{bail, Result};
use crate::nd::{Tape, Tensor};

/// Mel-cepstral distortion analysis settings.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct McdConfig {
    pub sample_rate: f64,
    pub n_fft: usize,
    pub hop: usize,
    pub n_mels: usize,
    /// Cepstral coefficients compared, starting from c1.
    pub n_coeffs: usize,
}

impl Default for McdConfig {
    fn default() -> Self {
        Self { sample_rate: 16000.0, n_fft: 1024, hop: 256, n_mels: 80, n_coeffs: 13 }
    }
}

/// Per-frame cepstra `c1..=c_n` (orthonormal DCT-II of the natural-log mel
/// spectrum), `frames x n_coeffs` row-major.
pub fn mel_cepstrum(signal: &[f64], cfg: &McdConfig) -> Result<Vec<Vec<f64>>> {
    if cfg.n_coeffs >= cfg.n_mels {
        bail!(Config, "need fewer cepstral coefficients ({}) than mel bands ({})", cfg.n_coeffs, cfg.n_mels);
    }
    let tape = Tape::new();
    let x = tape.constant(Tensor::new(&[1, signal.len()], signal.to_vec())?);
    let spec = MelScaleSpec::new(cfg.n_fft, cfg.n_mels, cfg.sample_rate);
    let logmel = log_mel_rows(x, &spec, cfg.hop)?.value();
    let m = cfg.n_mels;
    let rows = logmel.numel() / m;
    let norm = (2.0 / m as f64).sqrt();
    Ok((0..rows)
        .map(|r| {
            let row = &logmel.data()[r * m..(r + 1) * m];
            (1..=cfg.n_coeffs)
                .map(|k| {
                    norm * row
                        .iter()
                        .enumerate()
                        .map(|(n, v)| v * (PI * k as f64 * (2 * n + 1) as f64 / (2 * m) as f64).cos())
                        .sum::<f64>()
                })
                .collect()
        })
        .collect())
}

/// Mean over frames of `(10 / ln 10) * sqrt(2 * sum_c (a_c - b_c)^2)`, in dB.
pub fn mcd(reference: &[f64], degraded: &[f64]) -> Result<f64> {
    mcd_with(reference, degraded, &McdConfig::default())
}

pub fn mcd_with(reference: &[f64], degraded: &[f64], cfg: &McdConfig) -> Result<f64> {
    if reference.len() != degraded.len() {
        bail!(Contract, "mcd inputs differ in length: {} vs {}", reference.len(), degraded.len());
    }
    if reference.is_empty() {
        bail!(Contract, "mcd of empty signals");
    }
    let (a, b) = (mel_cepstrum(reference, cfg)?, mel_cepstrum(degraded, cfg)?);
    let k = 10.0 / LN_10 * 2f64.sqrt();
    let total: f64 = a
        .iter()
        .zip(&b)
        .map(|(fa, fb)| k * fa.iter().zip(fb).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt())
        .sum();
    Ok(total / a.len() as f64)
}
