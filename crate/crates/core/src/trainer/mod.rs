//! Loss weighting, optimization and the alternating adversarial loop.

mod data;
mod optim;

pub use data::{random_crops, synthetic_dataset};
pub use optim::{clip_grad_norm, AdamW, AdamWConfig};

use std::io::Write;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::adversary::{feature_matching, lsgan_d_loss, lsgan_g_loss, DiscConfig, Discriminators};
use crate::checkpoint::{Checkpoint, DType};
use crate::dsp::MelLoss;
use crate::error::{bail, Error, Result};
use crate::model::{GeneratorModel, ModelConfig};
use crate::nd::{Tape, Tensor, Var};
use crate::quantizer::{approx_bitrate, utilization};

/// Abort threshold on the weighted generator loss.
pub const DIVERGENCE_LIMIT: f64 = 1e4;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub mel: f64,
    pub commit: f64,
    pub codebook: f64,
    pub adv: f64,
    pub fm: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { mel: 15.0, commit: 0.25, codebook: 1.0, adv: 1.0, fm: 1.0 }
    }
}

/// Unweighted generator loss terms.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossComponents {
    pub mel: f64,
    pub commit: f64,
    pub codebook: f64,
    pub adv_g: f64,
    pub fm: f64,
}

impl LossComponents {
    fn named(&self) -> [(&'static str, f64); 5] {
        [("mel", self.mel), ("commit", self.commit), ("codebook", self.codebook), ("adv_g", self.adv_g), ("fm", self.fm)]
    }
}

/// `w.mel*mel + w.commit*commit + w.codebook*codebook + w.adv*adv_g + w.fm*fm`.
pub fn total_generator_loss(c: &LossComponents, w: &LossWeights, step: u64) -> Result<f64> {
    if let Some((name, v)) = c.named().into_iter().find(|(_, v)| !v.is_finite()) {
        return Err(Error::Training { step, msg: format!("{name} loss is {v}") });
    }
    Ok(w.mel * c.mel + w.commit * c.commit + w.codebook * c.codebook + w.adv * c.adv_g + w.fm * c.fm)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub weights: LossWeights,
    pub adamw: AdamWConfig,
    pub lr_start: f64,
    pub lr_end: f64,
    pub warmup_steps: u64,
    pub total_steps: u64,
    pub batch_size: usize,
    pub segment_seconds: f64,
    pub seed: u64,
    pub log_interval: u64,
    /// Optional global-norm clip on generator and discriminator gradients.
    pub grad_clip: Option<f64>,
    pub mel_loss: MelLoss,
}

impl TrainConfig {
    pub fn new(total_steps: u64, sample_rate: u32) -> Self {
        Self {
            weights: LossWeights::default(),
            adamw: AdamWConfig::default(),
            lr_start: 1e-4,
            lr_end: 1e-5,
            warmup_steps: 1000,
            total_steps,
            batch_size: 8,
            segment_seconds: 1.0,
            seed: 0,
            log_interval: 1,
            grad_clip: None,
            mel_loss: MelLoss::desk_scale(sample_rate as f64),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let w = &self.weights;
        if [w.mel, w.commit, w.codebook, w.adv, w.fm].iter().any(|v| !(*v >= 0.0)) {
            bail!(Config, "loss weights must be non-negative");
        }
        if !(self.lr_end > 0.0 && self.lr_end <= self.lr_start) {
            bail!(Config, "need 0 < lr_end <= lr_start, got {} and {}", self.lr_end, self.lr_start);
        }
        if self.batch_size == 0 || self.log_interval == 0 || !(self.segment_seconds > 0.0) {
            bail!(Config, "batch size, log interval and segment length must be positive");
        }
        self.mel_loss.validate()
    }

    /// Segment length in samples, rounded down to whole frames.
    pub fn segment_samples(&self, sample_rate: u32, frame: usize) -> usize {
        let n = (self.segment_seconds * sample_rate as f64).round() as usize;
        (n / frame).max(1) * frame
    }
}

/// Linear warmup from 0 to `lr_start`, then linear decay to `lr_end` at
/// `total_steps`, held there afterwards.
pub fn lr_at(step: u64, cfg: &TrainConfig) -> f64 {
    let (w, total) = (cfg.warmup_steps, cfg.total_steps);
    if step < w {
        return cfg.lr_start * step as f64 / w as f64;
    }
    if step >= total {
        return cfg.lr_end;
    }
    let frac = (step - w) as f64 / (total - w) as f64;
    cfg.lr_start + (cfg.lr_end - cfg.lr_start) * frac
}

/// Per-step telemetry. `step` counts completed updates.
#[derive(Clone, Debug, PartialEq)]
pub struct LossReport {
    pub step: u64,
    pub mel: f64,
    pub commit: f64,
    pub codebook: f64,
    pub adv_g: f64,
    pub fm: f64,
    pub total_g: f64,
    pub d_loss: f64,
    pub lr: f64,
    pub utilization: f64,
    pub approx_bitrate: f64,
}

impl LossReport {
    pub fn components(&self) -> LossComponents {
        LossComponents { mel: self.mel, commit: self.commit, codebook: self.codebook, adv_g: self.adv_g, fm: self.fm }
    }

    /// One `key=value` metrics line.
    pub fn log_line(&self) -> String {
        format!(
            "step={} mel={:.6e} commit={:.6e} codebook={:.6e} adv_g={:.6e} fm={:.6e} total_g={:.6e} d_loss={:.6e} lr={:.6e} utilization={:.6} approx_bitrate={:.6}",
            self.step, self.mel, self.commit, self.codebook, self.adv_g, self.fm, self.total_g, self.d_loss, self.lr,
            self.utilization, self.approx_bitrate
        )
    }
}

fn sum_vars<'t>(terms: &[Var<'t>]) -> Result<Var<'t>> {
    let mut total = terms[0];
    for t in &terms[1..] {
        total = total.add(*t)?;
    }
    Ok(total)
}

/// Generator, discriminators and both optimizer states.
#[derive(Clone, Debug)]
pub struct Trainer {
    pub cfg: TrainConfig,
    pub gen: GeneratorModel,
    pub disc: Discriminators,
    pub opt_g: AdamW,
    pub opt_d: AdamW,
    /// Completed updates.
    pub step: u64,
}

impl Trainer {
    pub fn new(model: ModelConfig, disc: DiscConfig, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let gen = GeneratorModel::build(model, cfg.seed)?;
        let disc = Discriminators::build(disc, cfg.seed.wrapping_add(1))?;
        let opt_g = AdamW::new(cfg.adamw, &gen.params);
        let opt_d = AdamW::new(cfg.adamw, &disc.params);
        Ok(Self { cfg, gen, disc, opt_g, opt_d, step: 0 })
    }

    pub fn segment_samples(&self) -> usize {
        self.cfg.segment_samples(self.gen.config.sample_rate, self.gen.config.downsample)
    }

    /// Deterministic RNG for the crop sampling of update `step + 1`.
    pub fn step_rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed);
        rng.set_stream(self.step);
        rng
    }

    fn clip(&self, grads: &mut [Tensor]) {
        if let Some(c) = self.cfg.grad_clip {
            clip_grad_norm(grads, c);
        }
    }

    /// One discriminator update on real audio and a fixed reconstruction.
    /// Generator parameters are not touched.
    pub fn discriminator_step(&mut self, real: &Tensor, fake: &Tensor, lr: f64) -> Result<f64> {
        let tape = Tape::new();
        let p = self.disc.params.bind(&tape, true);
        let r = self.disc.forward(&p, tape.constant(real.clone()))?;
        let f = self.disc.forward(&p, tape.constant(fake.clone()))?;
        let rl: Vec<_> = r.iter().map(|o| o.logits).collect();
        let fl: Vec<_> = f.iter().map(|o| o.logits).collect();
        let loss = lsgan_d_loss(&rl, &fl)?;
        let value = loss.item();
        if !value.is_finite() {
            return Err(Error::Training { step: self.step + 1, msg: format!("discriminator loss is {value}") });
        }
        tape.backward(loss)?;
        let mut grads = p.grads();
        self.clip(&mut grads);
        self.opt_d.step(&mut self.disc.params, &grads, lr)?;
        Ok(value)
    }

    /// Discriminator update followed by a generator update on `batch`.
    pub fn train_step(&mut self, batch: &Tensor) -> Result<LossReport> {
        let step = self.step + 1;
        let lr = lr_at(step, &self.cfg);
        let w = self.cfg.weights;
        let tape = Tape::new();
        let pg = self.gen.params.bind(&tape, true);
        let x = tape.constant(batch.clone());
        let out = self.gen.forward(&pg, x)?;
        let x_hat = out.x_hat.value();

        let d_loss = self.discriminator_step(batch, &x_hat, lr)?;

        let pd = self.disc.params.bind(&tape, false);
        let mel = self.cfg.mel_loss.loss(x, out.x_hat)?;
        let (adv, fm) = if w.adv > 0.0 || w.fm > 0.0 {
            let real = self.disc.forward(&pd, x)?;
            let fake = self.disc.forward(&pd, out.x_hat)?;
            let fl: Vec<_> = fake.iter().map(|o| o.logits).collect();
            let adv = lsgan_g_loss(&fl)?;
            let fm = feature_matching(
                &real.into_iter().map(|o| o.features).collect::<Vec<_>>(),
                &fake.into_iter().map(|o| o.features).collect::<Vec<_>>(),
            )?;
            (Some(adv), Some(fm))
        } else {
            (None, None)
        };
        let c = LossComponents {
            mel: mel.item(),
            commit: out.commitment_loss.item(),
            codebook: out.codebook_loss.item(),
            adv_g: adv.map_or(0.0, |v| v.item()),
            fm: fm.map_or(0.0, |v| v.item()),
        };
        let total_g = total_generator_loss(&c, &w, step)?;
        if !(total_g <= DIVERGENCE_LIMIT) {
            return Err(Error::Training { step, msg: format!("generator loss {total_g:.4e} exceeds {DIVERGENCE_LIMIT:e}") });
        }
        let mut terms = vec![
            mel.scale(w.mel),
            out.commitment_loss.scale(w.commit),
            out.codebook_loss.scale(w.codebook),
        ];
        terms.extend(adv.map(|v| v.scale(w.adv)));
        terms.extend(fm.map(|v| v.scale(w.fm)));
        tape.backward(sum_vars(&terms)?)?;
        let mut grads = pg.grads();
        self.clip(&mut grads);
        self.opt_g.step(&mut self.gen.params, &grads, lr)?;
        self.step = step;

        let k = self.gen.config.vq.codebook_size;
        Ok(LossReport {
            step,
            mel: c.mel,
            commit: c.commit,
            codebook: c.codebook,
            adv_g: c.adv_g,
            fm: c.fm,
            total_g,
            d_loss,
            lr,
            utilization: utilization(&out.indices, k),
            approx_bitrate: approx_bitrate(&out.indices, self.gen.frame_rate())?,
        })
    }

    /// Runs the remaining updates up to `total_steps` on random crops of
    /// `dataset`, writing a metrics line every `log_interval` updates.
    pub fn fit(&mut self, dataset: &[Vec<f64>], mut log: Option<&mut dyn Write>) -> Result<Vec<LossReport>> {
        let segment = self.segment_samples();
        random_crops(dataset, 1, segment, &mut self.step_rng())?;
        let mut history = Vec::new();
        while self.step < self.cfg.total_steps {
            let batch = random_crops(dataset, self.cfg.batch_size, segment, &mut self.step_rng())?;
            let report = self.train_step(&batch)?;
            if report.step % self.cfg.log_interval == 0 {
                if let Some(w) = log.as_mut() {
                    writeln!(w, "{}", report.log_line())?;
                }
            }
            history.push(report);
        }
        Ok(history)
    }

    /// Full training state, weights and moments stored at f64.
    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        let mut c = Checkpoint::new(json!({
            "model": serde_json::to_value(&self.gen.config)?,
            "disc": serde_json::to_value(&self.disc.config)?,
            "train": serde_json::to_value(&self.cfg)?,
            "step": self.step,
            "opt_g_t": self.opt_g.t,
            "opt_d_t": self.opt_d.t,
        }));
        c.add_store("gen.", &self.gen.params);
        c.add_store("disc.", &self.disc.params);
        for (prefix, store, opt) in [("opt.gen", &self.gen.params, &self.opt_g), ("opt.disc", &self.disc.params, &self.opt_d)] {
            for ((p, m), v) in store.iter().zip(&opt.m).zip(&opt.v) {
                c.push(format!("{prefix}.m.{}", p.name), m.clone());
                c.push(format!("{prefix}.v.{}", p.name), v.clone());
            }
        }
        Ok(c)
    }

    pub fn from_checkpoint(c: &Checkpoint) -> Result<Self> {
        let field = |k: &str| c.meta.get(k).cloned().ok_or_else(|| Error::Format(format!("checkpoint metadata has no `{k}`")));
        let model: ModelConfig = serde_json::from_value(field("model")?)?;
        let disc: DiscConfig = serde_json::from_value(field("disc")?)?;
        let cfg: TrainConfig = serde_json::from_value(field("train")?)?;
        let mut t = Self::new(model, disc, cfg)?;
        c.load_store("gen.", &mut t.gen.params)?;
        c.load_store("disc.", &mut t.disc.params)?;
        t.step = serde_json::from_value(field("step")?)?;
        t.opt_g.t = serde_json::from_value(field("opt_g_t")?)?;
        t.opt_d.t = serde_json::from_value(field("opt_d_t")?)?;
        for (prefix, store, opt) in [("opt.gen", &t.gen.params, &mut t.opt_g), ("opt.disc", &t.disc.params, &mut t.opt_d)] {
            for ((p, m), v) in store.iter().zip(&mut opt.m).zip(&mut opt.v) {
                for (kind, slot) in [("m", m), ("v", v)] {
                    let key = format!("{prefix}.{kind}.{}", p.name);
                    match c.get(&key) {
                        Some(x) if x.shape() == p.value.shape() => *slot = x.clone(),
                        _ => bail!(Format, "checkpoint is missing optimizer state `{key}`"),
                    }
                }
            }
        }
        Ok(t)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_checkpoint()?.save(path, DType::F64)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }
}

#[cfg(test)]
mod tests;
