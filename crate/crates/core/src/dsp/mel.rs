use std::cell::RefCell;
use std::collections::HashMap;
use std::rc::Rc;

use serde::{Deserialize, Serialize};

use super::stft::{stft_rows, StftConfig};
use crate::error::{bail, Result};
use crate::nd::{Tensor, Var};

/// HTK mel scale.
pub fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

pub fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MelScaleSpec {
    pub n_fft: usize,
    pub n_mels: usize,
    pub sample_rate: f64,
    pub f_min: f64,
    pub f_max: f64,
    pub log_eps: f64,
}

impl MelScaleSpec {
    /// Full band `0..sample_rate/2` with the default log floor.
    pub fn new(n_fft: usize, n_mels: usize, sample_rate: f64) -> Self {
        Self { n_fft, n_mels, sample_rate, f_min: 0.0, f_max: sample_rate / 2.0, log_eps: 1e-5 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_mels == 0 {
            bail!(Config, "n_mels must be >= 1");
        }
        if !(self.f_min >= 0.0 && self.f_min < self.f_max && self.f_max <= self.sample_rate / 2.0) {
            bail!(Config, "need 0 <= f_min < f_max <= sample_rate/2, got {}..{} at {} Hz", self.f_min, self.f_max, self.sample_rate);
        }
        if self.log_eps <= 0.0 {
            bail!(Config, "log floor must be positive");
        }
        Ok(())
    }

    /// Band edges and centres in Hz: `n_mels + 2` points equally spaced in mel.
    pub fn hz_points(&self) -> Vec<f64> {
        let (lo, hi) = (hz_to_mel(self.f_min), hz_to_mel(self.f_max));
        let step = (hi - lo) / (self.n_mels + 1) as f64;
        (0..self.n_mels + 2).map(|i| mel_to_hz(lo + step * i as f64)).collect()
    }

    pub fn center_frequencies(&self) -> Vec<f64> {
        let p = self.hz_points();
        p[1..=self.n_mels].to_vec()
    }
}

/// Triangular filters `[n_mels, n_fft/2 + 1]`, peak height 1.
pub fn mel_filterbank(spec: &MelScaleSpec) -> Result<Tensor> {
    spec.validate()?;
    let bins = spec.n_fft / 2 + 1;
    let pts = spec.hz_points();
    let mut data = vec![0.0; spec.n_mels * bins];
    for m in 0..spec.n_mels {
        let (l, c, r) = (pts[m], pts[m + 1], pts[m + 2]);
        let row = &mut data[m * bins..(m + 1) * bins];
        for (j, w) in row.iter_mut().enumerate() {
            let f = j as f64 * spec.sample_rate / spec.n_fft as f64;
            let up = (f - l) / (c - l);
            let down = (r - f) / (r - c);
            *w = up.min(down).max(0.0);
        }
        if row.iter().all(|&w| w == 0.0) {
            bail!(Config, "mel filter {m} of {} is empty at n_fft {}", spec.n_mels, spec.n_fft);
        }
    }
    Tensor::new(&[spec.n_mels, bins], data)
}

thread_local! {
    static FILTERS: RefCell<HashMap<(usize, usize, u64), Rc<Tensor>>> = RefCell::new(HashMap::new());
}

/// Transposed filterbank `[F, n_mels]`, cached per thread.
fn filterbank_t(spec: &MelScaleSpec) -> Result<Rc<Tensor>> {
    let key = (spec.n_fft, spec.n_mels, spec.sample_rate.to_bits() ^ spec.f_min.to_bits().rotate_left(1) ^ spec.f_max.to_bits().rotate_left(2));
    if let Some(t) = FILTERS.with(|c| c.borrow().get(&key).cloned()) {
        return Ok(t);
    }
    let fb = mel_filterbank(spec)?;
    let (m, f) = (spec.n_mels, spec.n_fft / 2 + 1);
    let mut t = vec![0.0; f * m];
    for i in 0..m {
        for j in 0..f {
            t[j * m + i] = fb.data()[i * f + j];
        }
    }
    let t = Rc::new(Tensor::new(&[f, m], t)?);
    FILTERS.with(|c| c.borrow_mut().insert(key, t.clone()));
    Ok(t)
}

/// Log-mel spectrogram rows `[B * frames, n_mels]` of a `[B, T]` signal.
pub(crate) fn log_mel_rows<'t>(signal: Var<'t>, spec: &MelScaleSpec, hop: usize) -> Result<Var<'t>> {
    let (mag, _) = stft_rows(signal, StftConfig::new(spec.n_fft, hop)?)?;
    let fb = signal.tape().constant_rc(filterbank_t(spec)?);
    mag.matmul(fb)?.add_scalar(spec.log_eps).log()
}

/// Multi-resolution log-mel L1 reconstruction loss.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MelLoss {
    pub sample_rate: f64,
    /// `(n_fft, n_mels)` per resolution; hop is `n_fft / 4`.
    pub scales: Vec<(usize, usize)>,
    pub log_eps: f64,
}

impl MelLoss {
    pub fn new(sample_rate: f64, scales: Vec<(usize, usize)>) -> Self {
        Self { sample_rate, scales, log_eps: 1e-5 }
    }

    /// Windows 64..=2048 with `n_mels = n_fft / 16`, at least 5.
    pub fn desk_scale(sample_rate: f64) -> Self {
        let scales = [64, 128, 256, 512, 1024, 2048].iter().map(|&n| (n, (n / 16).max(5))).collect();
        Self::new(sample_rate, scales)
    }

    fn spec(&self, n_fft: usize, n_mels: usize) -> MelScaleSpec {
        MelScaleSpec { log_eps: self.log_eps, ..MelScaleSpec::new(n_fft, n_mels, self.sample_rate) }
    }

    pub fn validate(&self) -> Result<()> {
        if self.scales.is_empty() {
            bail!(Config, "multi-scale mel loss needs at least one scale");
        }
        for &(n, m) in &self.scales {
            StftConfig::quarter(n)?;
            self.spec(n, m).validate()?;
        }
        Ok(())
    }

    /// Sum over scales of the mean absolute log-mel difference.
    pub fn loss<'t>(&self, x: Var<'t>, x_hat: Var<'t>) -> Result<Var<'t>> {
        self.validate()?;
        if x.shape() != x_hat.shape() {
            bail!(Shape, "mel loss inputs differ in shape: {:?} vs {:?}", x.shape(), x_hat.shape());
        }
        let mut total: Option<Var<'t>> = None;
        for &(n, m) in &self.scales {
            let spec = self.spec(n, m);
            let a = log_mel_rows(x, &spec, n / 4)?;
            let b = log_mel_rows(x_hat, &spec, n / 4)?;
            let term = b.sub(a)?.abs().mean();
            total = Some(match total {
                None => term,
                Some(t) => t.add(term)?,
            });
        }
        Ok(total.expect("non-empty scales"))
    }
}
