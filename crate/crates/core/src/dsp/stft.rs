use std::cell::RefCell;
use std::collections::HashMap;
use std::f64::consts::PI;
use std::rc::Rc;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::error::{bail, Result};
use crate::nd::{PadMode, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StftConfig {
    pub n_fft: usize,
    pub hop: usize,
}

impl StftConfig {
    pub fn new(n_fft: usize, hop: usize) -> Result<Self> {
        let cfg = Self { n_fft, hop };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Quarter-window hop.
    pub fn quarter(n_fft: usize) -> Result<Self> {
        Self::new(n_fft, n_fft / 4)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_fft < 2 || !self.n_fft.is_power_of_two() {
            bail!(Config, "n_fft must be a power of two >= 2, got {}", self.n_fft);
        }
        if self.hop == 0 || self.hop > self.n_fft {
            bail!(Config, "hop must lie in 1..={}, got {}", self.n_fft, self.hop);
        }
        Ok(())
    }

    pub fn bins(&self) -> usize {
        self.n_fft / 2 + 1
    }

    /// Frame count for a centre-padded signal of `len` samples.
    pub fn frames(&self, len: usize) -> usize {
        len / self.hop + 1
    }
}

/// Periodic Hann window.
pub fn hann_window(n: usize) -> Vec<f64> {
    (0..n).map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos()).collect()
}

thread_local! {
    static PLANS: RefCell<HashMap<usize, Plan>> = RefCell::new(HashMap::new());
}

#[derive(Clone)]
struct Plan {
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
    window: Rc<Vec<f64>>,
}

fn plan(n_fft: usize) -> Plan {
    PLANS.with(|cache| {
        cache
            .borrow_mut()
            .entry(n_fft)
            .or_insert_with(|| {
                let mut planner = FftPlanner::new();
                Plan {
                    forward: planner.plan_fft_forward(n_fft),
                    inverse: planner.plan_fft_inverse(n_fft),
                    window: Rc::new(hann_window(n_fft)),
                }
            })
            .clone()
    })
}

/// Hann-windowed one-sided DFT of each row: `[R, n_fft] -> [R, 2F]`, real
/// parts in columns `0..F` and imaginary parts in `F..2F`.
pub fn windowed_rfft<'t>(frames: Var<'t>, n_fft: usize) -> Result<Var<'t>> {
    let xv = frames.value();
    let s = xv.shape();
    if s.len() != 2 || s[1] != n_fft || !n_fft.is_power_of_two() {
        bail!(Shape, "windowed_rfft expects [R, {n_fft}] rows with a power-of-two size, got {s:?}");
    }
    let (rows, f) = (s[0], n_fft / 2 + 1);
    let p = plan(n_fft);
    let mut buf: Vec<Complex<f64>> =
        xv.data().chunks(n_fft).flat_map(|r| r.iter().zip(p.window.iter()).map(|(x, w)| Complex::new(x * w, 0.0))).collect();
    if rows > 0 {
        p.forward.process(&mut buf);
    }
    let mut out = vec![0.0; rows * 2 * f];
    for (o, b) in out.chunks_mut(2 * f).zip(buf.chunks(n_fft)) {
        for k in 0..f {
            o[k] = b[k].re;
            o[f + k] = b[k].im;
        }
    }
    let out = Tensor::new(&[rows, 2 * f], out)?;
    Ok(frames.tape().push_op(out, &[frames], move |g, _| {
        let mut buf = vec![Complex::new(0.0, 0.0); rows * n_fft];
        for (b, gr) in buf.chunks_mut(n_fft).zip(g.chunks(2 * f)) {
            for k in 0..f {
                b[k] = Complex::new(gr[k], gr[f + k]);
            }
        }
        if rows > 0 {
            p.inverse.process(&mut buf);
        }
        let dx = buf.chunks(n_fft).flat_map(|b| b.iter().zip(p.window.iter()).map(|(c, w)| c.re * w)).collect();
        vec![Some(dx)]
    }))
}

/// Magnitude spectrogram laid out frame-major: `[B, T] -> [B * frames, F]`.
pub fn stft_rows<'t>(signal: Var<'t>, cfg: StftConfig) -> Result<(Var<'t>, usize)> {
    cfg.validate()?;
    let shape = signal.shape();
    let (batch, len) = match shape[..] {
        [b, t] => (b, t),
        [b, 1, t] => (b, t),
        _ => bail!(Shape, "stft expects [B, T] or [B, 1, T], got {shape:?}"),
    };
    if len == 0 {
        bail!(Shape, "stft of an empty signal");
    }
    let half = cfg.n_fft / 2;
    let frames = signal
        .reshape(&[batch, len])?
        .pad_last(half, half, PadMode::Reflect)?
        .frame(cfg.n_fft, cfg.hop)?;
    let n_frames = frames.shape()[1];
    debug_assert_eq!(n_frames, cfg.frames(len));
    let spec = windowed_rfft(frames.reshape(&[batch * n_frames, cfg.n_fft])?, cfg.n_fft)?;
    Ok((spec.complex_magnitude()?, n_frames))
}

/// `[B, T] -> [B, n_fft/2 + 1, frames]` with reflect centre padding.
pub fn stft_magnitude<'t>(signal: Var<'t>, cfg: StftConfig) -> Result<Var<'t>> {
    let batch = signal.shape()[0];
    let (rows, frames) = stft_rows(signal, cfg)?;
    rows.reshape(&[batch, frames, cfg.bins()])?.transpose(1, 2)
}
