//! Single-codebook vector quantizer with low-dimensional, L2-normalized lookup.
//!
//! Frames of the encoder output are linearly projected to `code_dim`,
//! normalized, and replaced by the nearest normalized codeword. Gradients
//! reach the encoder through a straight-through estimator; the codebook
//! itself is learned only through the codebook loss.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{bail, Result};
use crate::nd::{Bound, ParamId, ParamStore, Tensor, Var, WeightInit};

/// Norm floor shared by every normalization in the quantizer.
pub const NORM_EPS: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VqConfig {
    pub input_dim: usize,
    pub code_dim: usize,
    pub codebook_size: usize,
}

impl VqConfig {
    pub fn new(input_dim: usize, code_dim: usize, codebook_size: usize) -> Result<Self> {
        let cfg = Self { input_dim, code_dim, codebook_size };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.code_dim == 0 || self.code_dim > self.input_dim {
            bail!(Config, "code_dim {} must lie in 1..={}", self.code_dim, self.input_dim);
        }
        if self.codebook_size < 2 {
            bail!(Config, "codebook needs at least 2 entries, got {}", self.codebook_size);
        }
        Ok(())
    }

    /// Quantization happens directly in the latent space, without projections.
    pub fn is_full_width(&self) -> bool {
        self.code_dim == self.input_dim
    }
}

/// Unit-Gaussian draws normalized onto the sphere.
pub fn init_codebook<R: Rng>(k: usize, d: usize, rng: &mut R) -> Tensor {
    let mut t = Tensor::randn(&[k, d], 1.0, rng);
    normalize_rows(t.data_mut(), d);
    t
}

/// In-place `row / max(‖row‖, eps)`.
pub fn normalize_rows(data: &mut [f64], d: usize) {
    for row in data.chunks_mut(d) {
        let n = row.iter().map(|v| v * v).sum::<f64>().sqrt().max(NORM_EPS);
        row.iter_mut().for_each(|v| *v /= n);
    }
}

/// Index of the nearest row of `codebook` (`K x d`) for each row of `frames`,
/// by squared Euclidean distance; ties go to the lowest index.
pub fn nearest_codes(frames: &[f64], codebook: &[f64], d: usize) -> Vec<usize> {
    frames
        .chunks(d)
        .map(|f| {
            let mut best = (0, f64::INFINITY);
            for (k, c) in codebook.chunks(d).enumerate() {
                let dist: f64 = f.iter().zip(c).map(|(a, b)| (a - b) * (a - b)).sum();
                if dist < best.1 {
                    best = (k, dist);
                }
            }
            best.0
        })
        .collect()
}

/// Nearest-codeword lookup of `[B, d, T]` latents against a raw `[K, d]`
/// codebook. Returns frame indices (`b`-major) and the normalized codewords
/// laid out as `[B, d, T]`.
pub fn quantize(z_e: &Tensor, codebook: &Tensor) -> Result<(Vec<usize>, Tensor)> {
    let (zs, cs) = (z_e.shape(), codebook.shape());
    if zs.len() != 3 || cs.len() != 2 || zs[1] != cs[1] {
        bail!(Shape, "quantize: latents {zs:?} incompatible with codebook {cs:?}");
    }
    let (b, d, t) = (zs[0], zs[1], zs[2]);
    let mut frames = vec![0.0; b * t * d];
    for bi in 0..b {
        for di in 0..d {
            for ti in 0..t {
                frames[(bi * t + ti) * d + di] = z_e.data()[(bi * d + di) * t + ti];
            }
        }
    }
    normalize_rows(&mut frames, d);
    let mut cb = codebook.data().to_vec();
    normalize_rows(&mut cb, d);
    let idx = nearest_codes(&frames, &cb, d);
    let mut zq = vec![0.0; b * d * t];
    for bi in 0..b {
        for ti in 0..t {
            let k = idx[bi * t + ti];
            for di in 0..d {
                zq[(bi * d + di) * t + ti] = cb[k * d + di];
            }
        }
    }
    Ok((idx, Tensor::new(&[b, d, t], zq)?))
}

/// Per-frame linear map `[B, C_in, T] -> [B, C_out, T]` (kernel-size-1 conv).
pub fn project<'t>(x: Var<'t>, weight: Var<'t>, bias: Option<Var<'t>>) -> Result<Var<'t>> {
    let w = weight.shape();
    let weight = if w.len() == 2 { weight.reshape(&[w[0], w[1], 1])? } else { weight };
    x.conv1d(weight, bias, 1, 1, 0)
}

pub fn project_down<'t>(h: Var<'t>, weight: Var<'t>, bias: Option<Var<'t>>) -> Result<Var<'t>> {
    project(h, weight, bias)
}

pub fn project_up<'t>(z_q: Var<'t>, weight: Var<'t>, bias: Option<Var<'t>>) -> Result<Var<'t>> {
    project(z_q, weight, bias)
}

/// Forward value of `z_q`, gradient passed to `z_e` unchanged.
pub fn straight_through<'t>(z_e: Var<'t>, z_q: Var<'t>) -> Result<Var<'t>> {
    z_e.add(z_q.sub(z_e)?.detach())
}

/// `(codebook_loss, commitment_loss)` as mean absolute differences between the
/// normalized latents and their codewords, each with one side held constant.
pub fn vq_losses<'t>(z_e_normalized: Var<'t>, z_q: Var<'t>) -> Result<(Var<'t>, Var<'t>)> {
    let codebook = z_e_normalized.detach().sub(z_q)?.abs().mean();
    let commitment = z_e_normalized.sub(z_q.detach())?.abs().mean();
    Ok((codebook, commitment))
}

/// Fraction of the `k` codes that occur in `indices`.
pub fn utilization(indices: &[usize], k: usize) -> f64 {
    if indices.is_empty() || k == 0 {
        return 0.0;
    }
    let mut seen = vec![false; k];
    indices.iter().filter(|&&i| i < k).for_each(|&i| seen[i] = true);
    seen.iter().filter(|&&s| s).count() as f64 / k as f64
}

/// Empirical Shannon entropy of the index histogram, in bits per code.
/// Summed in index order, so the result is bit-reproducible.
pub fn entropy_bits(indices: &[usize]) -> f64 {
    let mut counts = std::collections::BTreeMap::new();
    indices.iter().for_each(|&i| *counts.entry(i).or_insert(0usize) += 1);
    let n = indices.len() as f64;
    -counts.values().map(|&c| c as f64 / n).map(|p| p * p.log2()).sum::<f64>()
}

/// `frame_rate * H / 1000` kbps.
pub fn approx_bitrate(indices: &[usize], frame_rate: f64) -> Result<f64> {
    if indices.is_empty() {
        bail!(Contract, "approximate bitrate of an empty index set");
    }
    Ok(frame_rate * entropy_bits(indices) / 1000.0)
}

pub struct VqOutput<'t> {
    /// Decoder input `[B, input_dim, T_h]`.
    pub z_d: Var<'t>,
    /// `b`-major frame indices.
    pub indices: Vec<usize>,
    pub codebook_loss: Var<'t>,
    pub commitment_loss: Var<'t>,
}

/// Parameter handles of one quantizer.
#[derive(Clone, Debug)]
pub struct Quantizer {
    pub cfg: VqConfig,
    pub codebook: ParamId,
    proj: Option<Projections>,
}

#[derive(Clone, Debug)]
struct Projections {
    down_w: ParamId,
    down_b: ParamId,
    up_w: ParamId,
    up_b: ParamId,
}

impl Quantizer {
    pub fn new<R: Rng>(cfg: VqConfig, store: &mut ParamStore, prefix: &str, init: WeightInit, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let (c, d) = (cfg.input_dim, cfg.code_dim);
        let proj = (!cfg.is_full_width()).then(|| Projections {
            down_w: store.add(format!("{prefix}.down.weight"), Tensor::trunc_normal(&[d, c, 1], init.std(c), rng), true),
            down_b: store.add(format!("{prefix}.down.bias"), Tensor::zeros(&[d]), false),
            up_w: store.add(format!("{prefix}.up.weight"), Tensor::trunc_normal(&[c, d, 1], init.std(d), rng), true),
            up_b: store.add(format!("{prefix}.up.bias"), Tensor::zeros(&[c]), false),
        });
        let codebook = store.add(format!("{prefix}.codebook"), init_codebook(cfg.codebook_size, d, rng), false);
        Ok(Self { cfg, codebook, proj })
    }

    /// `[B, input_dim, T] -> [B, code_dim, T]`.
    pub fn down<'t>(&self, p: &Bound<'t>, h: Var<'t>) -> Result<Var<'t>> {
        match &self.proj {
            Some(pr) => project_down(h, p.get(pr.down_w), Some(p.get(pr.down_b))),
            None => Ok(h),
        }
    }

    /// `[B, code_dim, T] -> [B, input_dim, T]`.
    pub fn up<'t>(&self, p: &Bound<'t>, z: Var<'t>) -> Result<Var<'t>> {
        match &self.proj {
            Some(pr) => project_up(z, p.get(pr.up_w), Some(p.get(pr.up_b))),
            None => Ok(z),
        }
    }

    pub fn forward<'t>(&self, p: &Bound<'t>, h: Var<'t>) -> Result<VqOutput<'t>> {
        let s = h.shape();
        if s.len() != 3 || s[1] != self.cfg.input_dim {
            bail!(Shape, "quantizer expects [B, {}, T], got {s:?}", self.cfg.input_dim);
        }
        let (b, t, d) = (s[0], s[2], self.cfg.code_dim);
        let z_e = self.down(p, h)?;
        let rows = z_e.transpose(1, 2)?.reshape(&[b * t, d])?.l2_normalize(1, NORM_EPS)?;
        let table = p.get(self.codebook).l2_normalize(1, NORM_EPS)?;
        let indices = nearest_codes(rows.value().data(), table.value().data(), d);
        let z_q = table.index_select(&indices)?;
        let (codebook_loss, commitment_loss) = vq_losses(rows, z_q)?;
        let st = straight_through(rows, z_q)?.reshape(&[b, t, d])?.transpose(1, 2)?;
        let z_d = self.up(p, st)?;
        Ok(VqOutput { z_d, indices, codebook_loss, commitment_loss })
    }

    /// Decoder input for known indices, `b`-major over `batch x frames`.
    pub fn lookup<'t>(&self, p: &Bound<'t>, indices: &[usize], batch: usize, frames: usize) -> Result<Var<'t>> {
        if indices.len() != batch * frames {
            bail!(Contract, "{} indices for {batch} x {frames} frames", indices.len());
        }
        let table = p.get(self.codebook).l2_normalize(1, NORM_EPS)?;
        let z_q = table.index_select(indices)?;
        let z = z_q.reshape(&[batch, frames, self.cfg.code_dim])?.transpose(1, 2)?;
        self.up(p, z)
    }
}
