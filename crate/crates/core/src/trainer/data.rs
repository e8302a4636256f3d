use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{bail, Result};
use crate::nd::Tensor;

/// Seeded mixtures of 2-5 enveloped sinusoids (80-3000 Hz) with a low noise
/// floor, 2-4 s each, peak below 0.9.
pub fn synthetic_dataset(count: usize, sample_rate: u32, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sr = sample_rate as f64;
    (0..count)
        .map(|_| {
            let len = (rng.gen_range(2.0..4.0) * sr) as usize;
            let partials: Vec<(f64, f64, f64, f64, f64)> = (0..rng.gen_range(2..=5))
                .map(|_| {
                    (
                        rng.gen_range(80.0..3000.0),
                        rng.gen_range(0.1..1.0),
                        rng.gen_range(0.0..std::f64::consts::TAU),
                        rng.gen_range(0.5..4.0),
                        rng.gen_range(0.0..std::f64::consts::TAU),
                    )
                })
                .collect();
            let mut x: Vec<f64> = (0..len)
                .map(|i| {
                    let t = i as f64 / sr;
                    let tone: f64 = partials
                        .iter()
                        .map(|&(f, a, ph, rate, eph)| {
                            let env = 0.5 + 0.5 * (std::f64::consts::TAU * rate * t + eph).sin();
                            a * env * (std::f64::consts::TAU * f * t + ph).sin()
                        })
                        .sum();
                    tone + 0.003 * rng.gen_range(-1.0..1.0)
                })
                .collect();
            let peak = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            let gain = if peak > 0.0 { 0.8 / peak } else { 1.0 };
            x.iter_mut().for_each(|v| *v *= gain);
            x
        })
        .collect()
}

/// `[batch, 1, segment]` of random crops drawn uniformly over utterances.
pub fn random_crops<R: Rng>(dataset: &[Vec<f64>], batch: usize, segment: usize, rng: &mut R) -> Result<Tensor> {
    if dataset.is_empty() {
        bail!(Config, "training dataset is empty");
    }
    if let Some(short) = dataset.iter().position(|x| x.len() < segment) {
        bail!(Config, "utterance {short} has {} samples, shorter than the {segment}-sample segment", dataset[short].len());
    }
    let mut data = Vec::with_capacity(batch * segment);
    for _ in 0..batch {
        let x = &dataset[rng.gen_range(0..dataset.len())];
        let start = rng.gen_range(0..=x.len() - segment);
        data.extend_from_slice(&x[start..start + segment]);
    }
    Tensor::new(&[batch, 1, segment], data)
}
