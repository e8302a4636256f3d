//! Multi-period and multi-resolution STFT discriminators with least-squares
//! adversarial and L1 feature-matching losses.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dsp::{stft_magnitude, StftConfig};
use crate::error::{bail, Result};
use crate::nd::{Bound, PadMode, ParamId, ParamStore, Tensor, Var};

const LEAKY_SLOPE: f64 = 0.1;

/// Channel/kernel layout shared by every sub-discriminator of one family.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvStackSpec {
    pub channels: Vec<usize>,
    pub kernel: (usize, usize),
    pub stride: (usize, usize),
    pub final_kernel: (usize, usize),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MpdConfig {
    pub periods: Vec<usize>,
    pub stack: ConvStackSpec,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MsStftConfig {
    pub n_ffts: Vec<usize>,
    pub hops: Vec<usize>,
    pub stack: ConvStackSpec,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscConfig {
    pub mpd: MpdConfig,
    pub msstft: MsStftConfig,
}

impl Default for MpdConfig {
    fn default() -> Self {
        Self {
            periods: vec![2, 3, 5, 7, 11],
            stack: ConvStackSpec { channels: vec![16, 32, 64, 128], kernel: (5, 3), stride: (3, 1), final_kernel: (3, 1) },
        }
    }
}

impl Default for MsStftConfig {
    fn default() -> Self {
        let n_ffts = vec![512, 1024, 2048];
        Self {
            hops: n_ffts.iter().map(|n| n / 4).collect(),
            n_ffts,
            stack: ConvStackSpec { channels: vec![16, 32, 64, 128], kernel: (3, 3), stride: (2, 2), final_kernel: (3, 3) },
        }
    }
}

impl Default for DiscConfig {
    fn default() -> Self {
        Self { mpd: MpdConfig::default(), msstft: MsStftConfig::default() }
    }
}

impl ConvStackSpec {
    fn validate(&self) -> Result<()> {
        let odd = |(a, b): (usize, usize)| a % 2 == 1 && b % 2 == 1;
        if self.channels.is_empty() || self.channels.contains(&0) {
            bail!(Config, "conv stack needs at least one non-empty layer");
        }
        if !odd(self.kernel) || !odd(self.final_kernel) || self.stride.0 == 0 || self.stride.1 == 0 {
            bail!(Config, "conv stack kernels must be odd and strides positive");
        }
        Ok(())
    }
}

impl MpdConfig {
    pub fn validate(&self) -> Result<()> {
        let mut p = self.periods.clone();
        p.sort_unstable();
        p.dedup();
        if p.len() != self.periods.len() || p.iter().any(|&x| x < 2) {
            bail!(Config, "periods must be distinct and at least 2, got {:?}", self.periods);
        }
        self.stack.validate()
    }
}

impl MsStftConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_ffts.len() != self.hops.len() {
            bail!(Config, "{} STFT sizes but {} hops", self.n_ffts.len(), self.hops.len());
        }
        for (&n, &h) in self.n_ffts.iter().zip(&self.hops) {
            StftConfig::new(n, h)?;
        }
        self.stack.validate()
    }
}

impl DiscConfig {
    /// Half-width stacks for the toy preset.
    pub fn toy() -> Self {
        let mut c = Self::default();
        c.mpd.stack.channels = vec![8, 16, 32, 64];
        c.msstft.stack.channels = vec![8, 16, 32, 64];
        c
    }

    pub fn validate(&self) -> Result<()> {
        if self.mpd.periods.is_empty() && self.msstft.n_ffts.is_empty() {
            bail!(Config, "no discriminators configured");
        }
        self.mpd.validate()?;
        self.msstft.validate()
    }

    /// Shortest input every sub-discriminator accepts.
    pub fn min_len(&self) -> usize {
        let p = self.mpd.periods.iter().max().map_or(1, |p| p + 1);
        p.max(self.msstft.n_ffts.iter().copied().max().unwrap_or(1))
    }
}

/// Logits and hidden activations of one sub-discriminator.
pub struct DiscOutput<'t> {
    pub logits: Var<'t>,
    pub features: Vec<Var<'t>>,
}

#[derive(Clone, Debug)]
struct Layer {
    w: ParamId,
    b: ParamId,
    stride: (usize, usize),
    padding: (usize, usize),
}

#[derive(Clone, Debug)]
struct ConvStack {
    hidden: Vec<Layer>,
    out: Layer,
}

impl ConvStack {
    fn new<R: Rng>(spec: &ConvStackSpec, store: &mut ParamStore, name: &str, rng: &mut R) -> Self {
        let mut layer = |i: String, cin: usize, cout: usize, k: (usize, usize), stride| {
            let fan_in = (cin * k.0 * k.1) as f64;
            let bound = fan_in.sqrt().recip();
            Layer {
                w: store.add(format!("{name}.{i}.weight"), Tensor::uniform(&[cout, cin, k.0, k.1], -bound, bound, rng), true),
                b: store.add(format!("{name}.{i}.bias"), Tensor::zeros(&[cout]), false),
                stride,
                padding: (k.0 / 2, k.1 / 2),
            }
        };
        let mut cin = 1;
        let mut hidden = Vec::new();
        for (i, &c) in spec.channels.iter().enumerate() {
            hidden.push(layer(i.to_string(), cin, c, spec.kernel, spec.stride));
            cin = c;
        }
        let out = layer("out".into(), cin, 1, spec.final_kernel, (1, 1));
        Self { hidden, out }
    }

    fn forward<'t>(&self, p: &Bound<'t>, x: Var<'t>) -> Result<DiscOutput<'t>> {
        let mut y = x;
        let mut features = Vec::with_capacity(self.hidden.len());
        for l in &self.hidden {
            y = y.conv2d(p.get(l.w), Some(p.get(l.b)), l.stride, l.padding)?.leaky_relu(LEAKY_SLOPE);
            features.push(y);
        }
        let o = &self.out;
        let logits = y.conv2d(p.get(o.w), Some(p.get(o.b)), o.stride, o.padding)?;
        Ok(DiscOutput { logits, features })
    }
}

/// `[B, 1, T]` right-padded by reflection to a multiple of `period` and
/// folded to `[B, 1, T' / period, period]`.
pub fn fold_period<'t>(x: Var<'t>, period: usize) -> Result<Var<'t>> {
    let s = x.shape();
    if s.len() != 3 || s[1] != 1 {
        bail!(Shape, "period folding expects [B, 1, T], got {s:?}");
    }
    if s[2] <= period {
        bail!(Shape, "signal of {} samples is too short for period {period}", s[2]);
    }
    let pad = (period - s[2] % period) % period;
    let y = if pad > 0 { x.pad_last(0, pad, PadMode::Reflect)? } else { x };
    y.reshape(&[s[0], 1, (s[2] + pad) / period, period])
}

/// Both discriminator families and their parameters.
#[derive(Clone, Debug)]
pub struct Discriminators {
    pub config: DiscConfig,
    pub params: ParamStore,
    mpd: Vec<ConvStack>,
    msstft: Vec<ConvStack>,
}

impl Discriminators {
    pub fn build(config: DiscConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let mpd = config
            .mpd
            .periods
            .iter()
            .map(|p| ConvStack::new(&config.mpd.stack, &mut params, &format!("mpd.p{p}"), &mut rng))
            .collect();
        let msstft = config
            .msstft
            .n_ffts
            .iter()
            .map(|n| ConvStack::new(&config.msstft.stack, &mut params, &format!("msstft.n{n}"), &mut rng))
            .collect();
        Ok(Self { config, params, mpd, msstft })
    }

    pub fn count(&self) -> usize {
        self.mpd.len() + self.msstft.len()
    }

    pub fn mpd_forward<'t>(&self, p: &Bound<'t>, x: Var<'t>) -> Result<Vec<DiscOutput<'t>>> {
        self.config.mpd.periods.iter().zip(&self.mpd).map(|(&period, stack)| stack.forward(p, fold_period(x, period)?)).collect()
    }

    pub fn msstft_forward<'t>(&self, p: &Bound<'t>, x: Var<'t>) -> Result<Vec<DiscOutput<'t>>> {
        let cfg = &self.config.msstft;
        let s = x.shape();
        let mut out = Vec::with_capacity(self.msstft.len());
        for ((&n, &h), stack) in cfg.n_ffts.iter().zip(&cfg.hops).zip(&self.msstft) {
            if s[s.len() - 1] < n {
                bail!(Shape, "signal of {} samples is shorter than STFT size {n}", s[s.len() - 1]);
            }
            let mag = stft_magnitude(x, StftConfig::new(n, h)?)?;
            let ms = mag.shape();
            out.push(stack.forward(p, mag.reshape(&[ms[0], 1, ms[1], ms[2]])?)?);
        }
        Ok(out)
    }

    /// Every sub-discriminator, periods first.
    pub fn forward<'t>(&self, p: &Bound<'t>, x: Var<'t>) -> Result<Vec<DiscOutput<'t>>> {
        let mut out = self.mpd_forward(p, x)?;
        out.extend(self.msstft_forward(p, x)?);
        Ok(out)
    }
}

fn check_pairing(real: usize, fake: usize) -> Result<()> {
    if real != fake || real == 0 {
        bail!(Contract, "need matching non-empty sub-discriminator lists, got {real} real and {fake} fake");
    }
    Ok(())
}

/// Discriminator objective `sum_k mean((D_k(x) - 1)^2) + mean(D_k(x_hat)^2)`.
pub fn lsgan_d_loss<'t>(real: &[Var<'t>], fake: &[Var<'t>]) -> Result<Var<'t>> {
    check_pairing(real.len(), fake.len())?;
    let mut total: Option<Var<'t>> = None;
    for (r, f) in real.iter().zip(fake) {
        let term = r.add_scalar(-1.0).sqr().mean().add(f.sqr().mean())?;
        total = Some(match total {
            Some(t) => t.add(term)?,
            None => term,
        });
    }
    Ok(total.expect("non-empty"))
}

/// Generator objective `sum_k mean((D_k(x_hat) - 1)^2)`.
pub fn lsgan_g_loss<'t>(fake: &[Var<'t>]) -> Result<Var<'t>> {
    check_pairing(fake.len(), fake.len())?;
    let mut total = fake[0].add_scalar(-1.0).sqr().mean();
    for f in &fake[1..] {
        total = total.add(f.add_scalar(-1.0).sqr().mean())?;
    }
    Ok(total)
}

/// `(d_loss, g_loss)` for paired logits.
pub fn lsgan_losses<'t>(real: &[Var<'t>], fake: &[Var<'t>]) -> Result<(Var<'t>, Var<'t>)> {
    Ok((lsgan_d_loss(real, fake)?, lsgan_g_loss(fake)?))
}

/// Mean over sub-discriminators and layers of the mean absolute difference
/// between feature maps. Real features are treated as constants.
pub fn feature_matching<'t>(real: &[Vec<Var<'t>>], fake: &[Vec<Var<'t>>]) -> Result<Var<'t>> {
    check_pairing(real.len(), fake.len())?;
    let mut terms = Vec::new();
    for (rs, fs) in real.iter().zip(fake) {
        if rs.len() != fs.len() || rs.is_empty() {
            bail!(Contract, "feature lists differ in depth ({} vs {})", rs.len(), fs.len());
        }
        for (r, f) in rs.iter().zip(fs) {
            if r.shape() != f.shape() {
                bail!(Contract, "feature maps differ in shape ({:?} vs {:?})", r.shape(), f.shape());
            }
            terms.push(f.sub(r.detach())?.abs().mean());
        }
    }
    let n = terms.len() as f64;
    let mut total = terms[0];
    for t in &terms[1..] {
        total = total.add(*t)?;
    }
    Ok(total.scale(1.0 / n))
}
