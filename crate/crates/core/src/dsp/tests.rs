use std::f64::consts::PI;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::nd::{pad_source, GradCheck, PadMode, Tape, Tensor};
use crate::Error;

fn noise(n: usize, std: f64, seed: u64) -> Vec<f64> {
    Tensor::randn(&[n], std, &mut ChaCha8Rng::seed_from_u64(seed)).into_data()
}

fn sine(n: usize, freq: f64, sr: f64, amp: f64) -> Vec<f64> {
    (0..n).map(|i| amp * (2.0 * PI * freq * i as f64 / sr).sin()).collect()
}

fn spectrogram(x: &[f64], cfg: StftConfig) -> Tensor {
    let tape = Tape::new();
    let v = tape.constant(Tensor::new(&[1, x.len()], x.to_vec()).unwrap());
    (*stft_magnitude(v, cfg).unwrap().value()).clone()
}

/// Naive centre-padded magnitude STFT, `frames x bins`.
fn stft_oracle(x: &[f64], n_fft: usize, hop: usize) -> Vec<Vec<f64>> {
    let half = n_fft as isize / 2;
    let win: Vec<f64> = (0..n_fft).map(|i| 0.5 * (1.0 - (2.0 * PI * i as f64 / n_fft as f64).cos())).collect();
    (0..x.len() / hop + 1)
        .map(|f| {
            let frame: Vec<f64> = (0..n_fft)
                .map(|i| x[pad_source(f as isize * hop as isize + i as isize - half, x.len(), PadMode::Reflect).unwrap()] * win[i])
                .collect();
            (0..=n_fft / 2)
                .map(|k| {
                    let (mut re, mut im) = (0.0, 0.0);
                    for (n, v) in frame.iter().enumerate() {
                        let a = 2.0 * PI * (k * n) as f64 / n_fft as f64;
                        re += v * a.cos();
                        im -= v * a.sin();
                    }
                    re.hypot(im)
                })
                .collect()
        })
        .collect()
}

fn mel_oracle(n_fft: usize, n_mels: usize, sr: f64) -> Vec<Vec<f64>> {
    let mel = |f: f64| 2595.0 * (1.0 + f / 700.0).log10();
    let hz = |m: f64| 700.0 * (10f64.powf(m / 2595.0) - 1.0);
    let top = mel(sr / 2.0);
    let pts: Vec<f64> = (0..n_mels + 2).map(|i| hz(top * i as f64 / (n_mels + 1) as f64)).collect();
    (0..n_mels)
        .map(|m| {
            (0..=n_fft / 2)
                .map(|j| {
                    let f = j as f64 * sr / n_fft as f64;
                    let v = if f <= pts[m + 1] { (f - pts[m]) / (pts[m + 1] - pts[m]) } else { (pts[m + 2] - f) / (pts[m + 2] - pts[m + 1]) };
                    v.max(0.0)
                })
                .collect()
        })
        .collect()
}

fn log_mel_oracle(x: &[f64], n_fft: usize, n_mels: usize, sr: f64) -> Vec<Vec<f64>> {
    let fb = mel_oracle(n_fft, n_mels, sr);
    stft_oracle(x, n_fft, n_fft / 4)
        .iter()
        .map(|frame| fb.iter().map(|row| (row.iter().zip(frame).map(|(a, b)| a * b).sum::<f64>() + 1e-5).ln()).collect())
        .collect()
}

#[test]
fn stft_zero_signal_is_zero() {
    let s = spectrogram(&vec![0.0; 300], StftConfig::quarter(64).unwrap());
    assert_eq!(s.shape(), &[1, 33, 300 / 16 + 1]);
    assert!(s.data().iter().all(|&v| v == 0.0));
}

#[test]
fn stft_matches_naive_dft() {
    let x = noise(500, 1.0, 3);
    let s = spectrogram(&x, StftConfig::new(64, 20).unwrap());
    let o = stft_oracle(&x, 64, 20);
    let frames = o.len();
    for (f, row) in o.iter().enumerate() {
        for (k, v) in row.iter().enumerate() {
            assert!((s.data()[k * frames + f] - v).abs() < 1e-9);
        }
    }
}

#[test]
fn stft_sine_at_bin_peaks_at_bin() {
    let k = 19;
    let x: Vec<f64> = (0..4096).map(|n| (2.0 * PI * (k * n) as f64 / 256.0).sin()).collect();
    let s = spectrogram(&x, StftConfig::quarter(256).unwrap());
    let (bins, frames) = (s.shape()[1], s.shape()[2]);
    for f in 4..frames - 4 {
        let best = (0..bins).max_by(|&a, &b| s.data()[a * frames + f].total_cmp(&s.data()[b * frames + f])).unwrap();
        assert_eq!(best, k);
    }
}

#[test]
fn stft_energy_is_quadratic_in_amplitude() {
    let x = noise(1000, 0.3, 4);
    let x2: Vec<f64> = x.iter().map(|v| 2.0 * v).collect();
    let cfg = StftConfig::quarter(128).unwrap();
    let e = |s: Tensor| s.data().iter().map(|v| v * v).sum::<f64>();
    let (a, b) = (e(spectrogram(&x, cfg)), e(spectrogram(&x2, cfg)));
    assert!((b / a - 4.0).abs() < 1e-12);
}

#[test]
fn stft_is_translation_covariant() {
    let cfg = StftConfig::quarter(128).unwrap();
    let x = noise(2000, 1.0, 5);
    let shifted = &x[cfg.hop..];
    let (a, b) = (spectrogram(&x, cfg), spectrogram(shifted, cfg));
    let (fa, fb) = (a.shape()[2], b.shape()[2]);
    for k in 0..cfg.bins() {
        for f in 2..fb - 2 {
            assert!((a.data()[k * fa + f + 1] - b.data()[k * fb + f]).abs() < 1e-9);
        }
    }
}

#[test]
fn stft_rejects_bad_hop() {
    assert!(matches!(StftConfig::new(64, 0), Err(Error::Config(_))));
    assert!(StftConfig::new(60, 15).is_err());
}

#[test]
fn filterbank_rows_are_unimodal_and_cover_band() {
    for (n_fft, n_mels) in [(64, 5), (256, 16), (1024, 80), (2048, 128)] {
        let spec = MelScaleSpec::new(n_fft, n_mels, 16000.0);
        let fb = mel_filterbank(&spec).unwrap();
        let bins = n_fft / 2 + 1;
        for m in 0..n_mels {
            let row = &fb.data()[m * bins..(m + 1) * bins];
            assert!(row.iter().all(|&v| v >= 0.0));
            let peak = (0..bins).max_by(|&a, &b| row[a].total_cmp(&row[b])).unwrap();
            assert!(row[..=peak].windows(2).all(|w| w[0] <= w[1]));
            assert!(row[peak..].windows(2).all(|w| w[0] >= w[1]));
        }
        for j in 1..bins - 1 {
            let s: f64 = (0..n_mels).map(|m| fb.data()[m * bins + j]).sum();
            assert!(s > 0.0, "bin {j} uncovered at n_fft {n_fft}");
        }
    }
}

#[test]
fn filterbank_matches_scalar_oracle() {
    let spec = MelScaleSpec::new(256, 16, 16000.0);
    let fb = mel_filterbank(&spec).unwrap();
    for (m, row) in mel_oracle(256, 16, 16000.0).iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            assert!((fb.data()[m * 129 + j] - v).abs() < 1e-12);
        }
    }
    // first centre is one mel step above f_min
    let step = 2595.0 * (1.0f64 + 8000.0 / 700.0).log10() / 17.0;
    let want = 700.0 * (10f64.powf(step / 2595.0) - 1.0);
    assert!((spec.center_frequencies()[0] - want).abs() < 1e-9);
    assert!((mel_to_hz(hz_to_mel(1234.5)) - 1234.5).abs() < 1e-9);
}

#[test]
fn filterbank_too_many_bands_is_config_error() {
    assert!(matches!(mel_filterbank(&MelScaleSpec::new(64, 64, 16000.0)), Err(Error::Config(_))));
    let mut bad = MelScaleSpec::new(64, 5, 16000.0);
    bad.f_max = 9000.0;
    assert!(bad.validate().is_err());
}

fn mel_loss_value(x: &[f64], y: &[f64], loss: &MelLoss) -> f64 {
    let tape = Tape::new();
    let a = tape.constant(Tensor::new(&[1, x.len()], x.to_vec()).unwrap());
    let b = tape.constant(Tensor::new(&[1, y.len()], y.to_vec()).unwrap());
    loss.loss(a, b).unwrap().item()
}

#[test]
fn mel_loss_identity_and_positivity() {
    let loss = MelLoss::desk_scale(16000.0);
    let x = sine(4000, 440.0, 16000.0, 0.5);
    assert_eq!(mel_loss_value(&x, &x, &loss), 0.0);
    assert!(mel_loss_value(&x, &vec![0.0; 4000], &loss) > 0.0);
    let empty = MelLoss::new(16000.0, vec![]);
    let tape = Tape::new();
    let v = tape.constant(Tensor::zeros(&[1, 100]));
    assert!(matches!(empty.loss(v, v), Err(Error::Config(_))));
}

#[test]
fn mel_loss_matches_direct_reimplementation() {
    let (x, y) = (noise(600, 0.5, 10), noise(600, 0.5, 11));
    let loss = MelLoss::new(16000.0, vec![(64, 10), (128, 20)]);
    let want: f64 = [(64, 10), (128, 20)]
        .iter()
        .map(|&(n, m)| {
            let (a, b) = (log_mel_oracle(&x, n, m, 16000.0), log_mel_oracle(&y, n, m, 16000.0));
            let cells = (a.len() * m) as f64;
            a.iter().flatten().zip(b.iter().flatten()).map(|(p, q)| (p - q).abs()).sum::<f64>() / cells
        })
        .sum();
    let got = mel_loss_value(&x, &y, &loss);
    assert!((got - want).abs() < 1e-9 * want, "{got} vs {want}");
}

#[test]
fn mel_loss_gradient_passes_finite_differences() {
    let x = Tensor::new(&[1, 300], noise(300, 0.5, 12)).unwrap();
    let y = Tensor::new(&[1, 300], noise(300, 0.5, 13)).unwrap();
    let loss = MelLoss::new(16000.0, vec![(64, 10), (128, 20)]);
    let target = x.clone();
    let r = GradCheck::new(1e-4)
        .max_coords(60)
        .run(move |tape, v| loss.loss(tape.constant(target.clone()), v[0]), &[y])
        .unwrap();
    assert!(r.pass, "{r:?}");
}

#[test]
fn mcd_identical_is_zero_and_symmetric() {
    let x = noise(4000, 0.3, 20);
    let y = noise(4000, 0.3, 21);
    assert_eq!(mcd(&x, &x).unwrap(), 0.0);
    let (a, b) = (mcd(&x, &y).unwrap(), mcd(&y, &x).unwrap());
    assert!(a > 0.0 && (a - b).abs() < 1e-12);
    assert!(matches!(mcd(&x, &y[..100]), Err(Error::Contract(_))));
}

#[test]
fn mcd_single_frame_hand_pipeline() {
    // 200 samples with hop 256 yield exactly one centre-padded frame
    let x = noise(200, 0.3, 22);
    let half: Vec<f64> = x.iter().map(|v| 0.5 * v).collect();
    let ceps = |s: &[f64]| {
        let lm = &log_mel_oracle_hop(s, 1024, 80, 256)[0];
        (1..=13)
            .map(|k| {
                (2.0 / 80.0f64).sqrt() * lm.iter().enumerate().map(|(n, v)| v * (PI * k as f64 * (2 * n + 1) as f64 / 160.0).cos()).sum::<f64>()
            })
            .collect::<Vec<f64>>()
    };
    let (a, b) = (ceps(&x), ceps(&half));
    let want = 10.0 / 10f64.ln() * (2.0 * a.iter().zip(&b).map(|(p, q)| (p - q).powi(2)).sum::<f64>()).sqrt();
    let got = mcd(&x, &half).unwrap();
    assert!((got - want).abs() < 1e-9, "{got} vs {want}");
}

fn log_mel_oracle_hop(x: &[f64], n_fft: usize, n_mels: usize, hop: usize) -> Vec<Vec<f64>> {
    let fb = mel_oracle(n_fft, n_mels, 16000.0);
    stft_oracle(x, n_fft, hop)
        .iter()
        .map(|frame| fb.iter().map(|row| (row.iter().zip(frame).map(|(a, b)| a * b).sum::<f64>() + 1e-5).ln()).collect())
        .collect()
}

#[test]
fn mcd_grows_with_noise_level() {
    for seed in 0..50 {
        let x = sine(3000, 300.0 + seed as f64 * 17.0, 16000.0, 0.4);
        let add = |std: f64| -> Vec<f64> { x.iter().zip(noise(3000, std, 1000 + seed)).map(|(a, b)| a + b).collect() };
        let (lo, hi) = (mcd(&x, &add(0.005)).unwrap(), mcd(&x, &add(0.05)).unwrap());
        assert!(hi >= lo, "seed {seed}: {hi} < {lo}");
    }
}
