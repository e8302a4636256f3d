//! Registered finite-difference suites, grouped by subsystem.
//!
//! Every check draws small random shapes and values from its seed, so a
//! sweep over seeds exercises many geometries.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::adversary::{feature_matching, lsgan_d_loss, lsgan_g_loss, DiscConfig, Discriminators, MpdConfig, MsStftConfig};
use crate::dsp::{stft_magnitude, windowed_rfft, MelLoss, StftConfig};
use crate::error::{Error, Result};
use crate::model::layers::{Builder, LstmStack, ResidualUnit, Upsample};
use crate::model::{snake, GeneratorModel, ModelConfig, SNAKE_EPS};
use crate::nd::{Bound, GradCheck, GradCheckReport, LstmWeights, PadMode, ParamStore, Tape, Tensor, Var, WeightInit};
use crate::quantizer::{Quantizer, VqConfig, VqOutput, NORM_EPS};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Suite {
    NdCore,
    Quantizer,
    Dsp,
    Model,
    Adversary,
}

impl Suite {
    pub const ALL: [Suite; 5] = [Suite::NdCore, Suite::Quantizer, Suite::Dsp, Suite::Model, Suite::Adversary];

    pub fn name(self) -> &'static str {
        match self {
            Suite::NdCore => "nd-core",
            Suite::Quantizer => "quantizer",
            Suite::Dsp => "dsp",
            Suite::Model => "model",
            Suite::Adversary => "adversary",
        }
    }
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Suite::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown gradient suite `{s}`")))
    }
}

#[derive(Clone, Debug)]
pub struct CheckResult {
    pub suite: Suite,
    pub name: &'static str,
    pub seed: u64,
    pub report: GradCheckReport,
}

type CheckFn = fn(&mut ChaCha8Rng, &GradCheck) -> Result<GradCheckReport>;

/// `sum(y * r)` for a fixed random `r`, so no coordinate's gradient cancels by symmetry.
pub(crate) fn probe<'t>(y: Var<'t>, rng: &mut ChaCha8Rng) -> Result<Var<'t>> {
    let r = Tensor::randn(&y.shape(), 1.0, rng);
    y.mul(y.tape().constant(r)).map(|v| v.sum())
}

fn dim(rng: &mut ChaCha8Rng, lo: usize, hi: usize) -> usize {
    rng.gen_range(lo..=hi)
}

macro_rules! check {
    ($gc:expr, $rng:expr, $inputs:expr, |$v:ident, $r:ident| $body:expr) => {{
        let seed: u64 = $rng.gen();
        let inputs: Vec<Tensor> = $inputs;
        $gc.run(
            move |_tape, $v| {
                let mut $r = ChaCha8Rng::seed_from_u64(seed);
                let y = $body?;
                probe(y, &mut $r)
            },
            &inputs,
        )
    }};
}

fn nd_checks() -> Vec<(&'static str, CheckFn)> {
    vec![
        ("add", |rng, gc| {
            let s = [dim(rng, 1, 3), dim(rng, 1, 5)];
            check!(gc, rng, vec![Tensor::randn(&s, 1.0, rng), Tensor::randn(&s, 1.0, rng)], |v, r| v[0].add(v[1]))
        }),
        ("sub", |rng, gc| {
            let s = [dim(rng, 1, 4)];
            check!(gc, rng, vec![Tensor::randn(&s, 1.0, rng), Tensor::randn(&s, 1.0, rng)], |v, r| v[0].sub(v[1]))
        }),
        ("mul", |rng, gc| {
            let s = [dim(rng, 1, 3), dim(rng, 1, 4)];
            check!(gc, rng, vec![Tensor::randn(&s, 1.0, rng), Tensor::randn(&s, 1.0, rng)], |v, r| v[0].mul(v[1]))
        }),
        ("scale", |rng, gc| {
            let c: f64 = rng.gen_range(-3.0..3.0);
            check!(gc, rng, vec![Tensor::randn(&[dim(rng, 1, 6)], 1.0, rng)], |v, r| Ok::<_, Error>(v[0].scale(c)))
        }),
        ("sin", |rng, gc| check!(gc, rng, vec![Tensor::randn(&[dim(rng, 1, 6)], 2.0, rng)], |v, r| Ok::<_, Error>(v[0].sin()))),
        ("abs", |rng, gc| check!(gc, rng, vec![away_from_zero(&[dim(rng, 1, 6)], rng)], |v, r| Ok::<_, Error>(v[0].abs()))),
        ("log", |rng, gc| check!(gc, rng, vec![Tensor::uniform(&[dim(rng, 1, 6)], 0.2, 3.0, rng)], |v, r| v[0].log())),
        ("exp", |rng, gc| check!(gc, rng, vec![Tensor::randn(&[dim(rng, 1, 6)], 1.0, rng)], |v, r| Ok::<_, Error>(v[0].exp()))),
        ("pow", |rng, gc| {
            let p: f64 = rng.gen_range(-1.5..2.5);
            check!(gc, rng, vec![Tensor::uniform(&[dim(rng, 1, 6)], 0.3, 2.0, rng)], |v, r| v[0].pow(p))
        }),
        ("tanh", |rng, gc| check!(gc, rng, vec![Tensor::randn(&[dim(rng, 1, 6)], 1.0, rng)], |v, r| Ok::<_, Error>(v[0].tanh()))),
        ("sigmoid", |rng, gc| check!(gc, rng, vec![Tensor::randn(&[dim(rng, 1, 6)], 1.0, rng)], |v, r| Ok::<_, Error>(v[0].sigmoid()))),
        ("leaky_relu", |rng, gc| {
            check!(gc, rng, vec![away_from_zero(&[dim(rng, 1, 6)], rng)], |v, r| Ok::<_, Error>(v[0].leaky_relu(0.1)))
        }),
        ("mean", |rng, gc| {
            let x = Tensor::randn(&[dim(rng, 1, 3), dim(rng, 1, 4)], 1.0, rng);
            gc.run(|_, v| Ok(v[0].mean()), &[x])
        }),
        ("sum", |rng, gc| {
            let x = Tensor::randn(&[dim(rng, 1, 5)], 1.0, rng);
            gc.run(|_, v| Ok(v[0].sqr().sum()), &[x])
        }),
        ("l2_normalize", |rng, gc| {
            let s = [dim(rng, 1, 3), dim(rng, 2, 5), dim(rng, 1, 3)];
            let axis = rng.gen_range(0..3);
            check!(gc, rng, vec![Tensor::randn(&s, 1.0, rng)], |v, r| v[0].l2_normalize(axis, 1e-12))
        }),
        ("matmul", |rng, gc| {
            let (m, k, n) = (dim(rng, 1, 4), dim(rng, 1, 4), dim(rng, 1, 4));
            check!(gc, rng, vec![Tensor::randn(&[m, k], 1.0, rng), Tensor::randn(&[k, n], 1.0, rng)], |v, r| v[0].matmul(v[1]))
        }),
        ("permute", |rng, gc| {
            let s = [dim(rng, 1, 3), dim(rng, 1, 3), dim(rng, 1, 3)];
            check!(gc, rng, vec![Tensor::randn(&s, 1.0, rng)], |v, r| v[0].permute(&[2, 0, 1]))
        }),
        ("narrow", |rng, gc| {
            let n = dim(rng, 3, 7);
            check!(gc, rng, vec![Tensor::randn(&[2, n], 1.0, rng)], |v, r| v[0].narrow(1, 1, n - 2))
        }),
        ("pad_reflect", |rng, gc| {
            let n = dim(rng, 2, 6);
            let (l, rr) = (dim(rng, 0, 7), dim(rng, 0, 7));
            check!(gc, rng, vec![Tensor::randn(&[2, n], 1.0, rng)], |v, r| v[0].pad_last(l, rr, PadMode::Reflect))
        }),
        ("frame", |rng, gc| {
            let (size, hop) = (dim(rng, 2, 5), dim(rng, 1, 3));
            let n = size + dim(rng, 0, 8);
            check!(gc, rng, vec![Tensor::randn(&[2, n], 1.0, rng)], |v, r| v[0].frame(size, hop))
        }),
        ("index_select", |rng, gc| {
            let (k, d) = (dim(rng, 2, 6), dim(rng, 1, 4));
            let idx: Vec<usize> = (0..dim(rng, 1, 8)).map(|_| rng.gen_range(0..k)).collect();
            check!(gc, rng, vec![Tensor::randn(&[k, d], 1.0, rng)], |v, r| v[0].index_select(&idx))
        }),
        ("complex_magnitude", |rng, gc| {
            let f = dim(rng, 1, 5);
            check!(gc, rng, vec![away_from_zero(&[3, 2 * f], rng)], |v, r| v[0].complex_magnitude())
        }),
        ("conv1d", |rng, gc| {
            let (cin, cout, k) = (dim(rng, 1, 3), dim(rng, 1, 3), dim(rng, 1, 5));
            let (stride, dil) = (dim(rng, 1, 3), dim(rng, 1, 3));
            let pad = dim(rng, 0, 4);
            let len = (dil * (k - 1) + 1).saturating_sub(2 * pad).max(1) + dim(rng, 0, 8);
            let inputs = vec![
                Tensor::randn(&[2, cin, len], 1.0, rng),
                Tensor::randn(&[cout, cin, k], 1.0, rng),
                Tensor::randn(&[cout], 1.0, rng),
            ];
            check!(gc, rng, inputs, |v, r| v[0].conv1d(v[1], Some(v[2]), stride, dil, pad))
        }),
        ("conv_transpose1d", |rng, gc| {
            let (cin, cout) = (dim(rng, 1, 3), dim(rng, 1, 3));
            let stride = dim(rng, 1, 4);
            let k = dim(rng, 1, 2 * stride);
            let len = dim(rng, 2, 6);
            let pad = dim(rng, 0, ((len - 1) * stride + k - 1) / 2);
            let inputs = vec![
                Tensor::randn(&[2, cin, len], 1.0, rng),
                Tensor::randn(&[cin, cout, k], 1.0, rng),
                Tensor::randn(&[cout], 1.0, rng),
            ];
            check!(gc, rng, inputs, |v, r| v[0].conv_transpose1d(v[1], Some(v[2]), stride, pad))
        }),
        ("conv2d", |rng, gc| {
            let (cin, cout) = (dim(rng, 1, 2), dim(rng, 1, 3));
            let (kh, kw) = (dim(rng, 1, 3), dim(rng, 1, 3));
            let stride = (dim(rng, 1, 2), dim(rng, 1, 2));
            let pad = (dim(rng, 0, 1), dim(rng, 0, 1));
            let (h, w) = (kh + dim(rng, 0, 4), kw + dim(rng, 0, 4));
            let inputs = vec![
                Tensor::randn(&[2, cin, h, w], 1.0, rng),
                Tensor::randn(&[cout, cin, kh, kw], 1.0, rng),
                Tensor::randn(&[cout], 1.0, rng),
            ];
            check!(gc, rng, inputs, |v, r| v[0].conv2d(v[1], Some(v[2]), stride, pad))
        }),
        ("lstm", |rng, gc| {
            let (b, t, d, h) = (dim(rng, 1, 2), dim(rng, 1, 5), dim(rng, 1, 3), dim(rng, 1, 3));
            let inputs = vec![
                Tensor::randn(&[b, t, d], 1.0, rng),
                Tensor::randn(&[4 * h, d], 0.7, rng),
                Tensor::randn(&[4 * h, h], 0.7, rng),
                Tensor::randn(&[4 * h], 0.5, rng),
                Tensor::randn(&[4 * h], 0.5, rng),
            ];
            check!(gc, rng, inputs, |v, r| v[0].lstm_layer(LstmWeights { w_ih: v[1], w_hh: v[2], b_ih: v[3], b_hh: v[4] }))
        }),
    ]
}

/// Standard-normal entries pushed at least 0.1 away from zero, keeping
/// kinked ops away from their non-differentiable points.
pub(crate) fn away_from_zero(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let mut t = Tensor::randn(shape, 1.0, rng);
    t.data_mut().iter_mut().for_each(|v| *v += 0.1f64.copysign(*v));
    t
}

/// Quantizer state at a base point, used to freeze every stop-gradient.
pub(crate) struct FrozenVq {
    pub indices: Vec<usize>,
    pub rows: Tensor,
    pub z_q: Tensor,
}

fn vq_rows<'t>(q: &Quantizer, p: &Bound<'t>, h: Var<'t>) -> Result<Var<'t>> {
    let s = h.shape();
    q.down(p, h)?.transpose(1, 2)?.reshape(&[s[0] * s[2], q.cfg.code_dim])?.l2_normalize(1, NORM_EPS)
}

impl FrozenVq {
    /// `params` are the values of the store `q` was registered in, in order.
    pub(crate) fn capture(q: &Quantizer, params: &[Tensor], h: &Tensor) -> Result<Self> {
        let tape = Tape::new();
        let p = constants(&tape, params);
        let h = tape.constant(h.clone());
        let indices = q.forward(&p, h)?.indices;
        let rows = vq_rows(q, &p, h)?;
        let z_q = p.get(q.codebook).l2_normalize(1, NORM_EPS)?.index_select(&indices)?;
        Ok(Self { indices, rows: (*rows.value()).clone(), z_q: (*z_q.value()).clone() })
    }
}

fn constants<'t>(tape: &'t Tape, params: &[Tensor]) -> Bound<'t> {
    Bound::from_vars(params.iter().map(|t| tape.constant(t.clone())).collect())
}

/// The quantizer graph with each stop-gradient replaced by its base-point value.
pub(crate) fn vq_surrogate<'t>(q: &Quantizer, p: &Bound<'t>, h: Var<'t>, f: &FrozenVq) -> Result<VqOutput<'t>> {
    let tape = h.tape();
    let s = h.shape();
    let (b, t, d) = (s[0], s[2], q.cfg.code_dim);
    let rows = vq_rows(q, p, h)?;
    let z_q = p.get(q.codebook).l2_normalize(1, NORM_EPS)?.index_select(&f.indices)?;
    let offset = Tensor::new(f.z_q.shape(), f.z_q.data().iter().zip(f.rows.data()).map(|(a, b)| a - b).collect())?;
    let st = rows.add(tape.constant(offset))?.reshape(&[b, t, d])?.transpose(1, 2)?;
    Ok(VqOutput {
        z_d: q.up(p, st)?,
        indices: f.indices.clone(),
        codebook_loss: tape.constant(f.rows.clone()).sub(z_q)?.abs().mean(),
        commitment_loss: rows.sub(tape.constant(f.z_q.clone()))?.abs().mean(),
    })
}

/// `sum(y * probe) + codebook + 0.25 commitment`.
pub(crate) fn vq_objective<'t>(out: VqOutput<'t>, y: Var<'t>, probe: &Tensor) -> Result<Var<'t>> {
    let fit = y.mul(y.tape().constant(probe.clone()))?.sum();
    fit.add(out.codebook_loss)?.add(out.commitment_loss.scale(0.25))
}

fn store_values(store: &ParamStore) -> Vec<Tensor> {
    store.iter().map(|p| p.value.clone()).collect()
}

fn vq_check(rng: &mut ChaCha8Rng, gc: &GradCheck, full_width: bool) -> Result<GradCheckReport> {
    let c = dim(rng, 2, 5);
    let d = if full_width { c } else { dim(rng, 1, c - 1) };
    let cfg = VqConfig::new(c, d, dim(rng, 2, 8))?;
    let mut store = ParamStore::new();
    let q = Quantizer::new(cfg, &mut store, "vq", WeightInit::Normal(0.6), rng)?;
    let h = Tensor::randn(&[dim(rng, 1, 2), c, dim(rng, 1, 5)], 1.0, rng);
    let probe = Tensor::randn(h.shape(), 1.0, rng);
    let mut inputs = store_values(&store);
    let base = FrozenVq::capture(&q, &inputs, &h)?;
    inputs.push(h);
    let n = store.len();
    gc.run_against(
        |_, v| {
            let out = q.forward(&Bound::from_vars(v[..n].to_vec()), v[n])?;
            let y = out.z_d;
            vq_objective(out, y, &probe)
        },
        |_, v| {
            let out = vq_surrogate(&q, &Bound::from_vars(v[..n].to_vec()), v[n], &base)?;
            let y = out.z_d;
            vq_objective(out, y, &probe)
        },
        &inputs,
    )
}

fn quantizer_checks() -> Vec<(&'static str, CheckFn)> {
    vec![
        ("vq_projected_ste", |rng, gc| vq_check(rng, gc, false)),
        ("vq_full_width_ste", |rng, gc| vq_check(rng, gc, true)),
        ("vq_losses", |rng, gc| {
            let s = [dim(rng, 1, 6), dim(rng, 1, 4)];
            let inputs = vec![away_from_zero(&s, rng), Tensor::randn(&s, 1.0, rng)];
            let (r0, q0) = (inputs[0].clone(), inputs[1].clone());
            gc.run_against(
                |_, v| {
                    let (cb, commit) = crate::quantizer::vq_losses(v[0], v[1])?;
                    cb.add(commit.scale(0.25))
                },
                move |tape, v| {
                    let cb = tape.constant(r0.clone()).sub(v[1])?.abs().mean();
                    let commit = v[0].sub(tape.constant(q0.clone()))?.abs().mean();
                    cb.add(commit.scale(0.25))
                },
                &inputs,
            )
        }),
        ("projection", |rng, gc| {
            let (c, d) = (dim(rng, 1, 5), dim(rng, 1, 5));
            let inputs = vec![
                Tensor::randn(&[dim(rng, 1, 2), c, dim(rng, 1, 4)], 1.0, rng),
                Tensor::randn(&[d, c], 1.0, rng),
                Tensor::randn(&[d], 1.0, rng),
            ];
            check!(gc, rng, inputs, |v, r| crate::quantizer::project(v[0], v[1], Some(v[2])))
        }),
    ]
}

fn dsp_checks() -> Vec<(&'static str, CheckFn)> {
    vec![
        ("windowed_rfft", |rng, gc| {
            let n = [4, 8, 16][dim(rng, 0, 2)];
            check!(gc, rng, vec![Tensor::randn(&[dim(rng, 1, 3), n], 1.0, rng)], |v, r| windowed_rfft(v[0], n))
        }),
        ("stft_magnitude", |rng, gc| {
            let n = [8, 16, 32][dim(rng, 0, 2)];
            let hop = n / [4, 2][dim(rng, 0, 1)];
            let len = n + dim(rng, 0, 40);
            check!(gc, rng, vec![Tensor::randn(&[dim(rng, 1, 2), len], 1.0, rng)], |v, r| stft_magnitude(v[0], StftConfig::new(n, hop)?))
        }),
        ("multi_scale_mel", |rng, gc| {
            let all = [(32, 4), (64, 8), (128, 12)];
            let scales: Vec<_> = all.iter().copied().filter(|_| rng.gen_bool(0.6)).collect();
            let scales = if scales.is_empty() { vec![all[dim(rng, 0, 2)]] } else { scales };
            let loss = MelLoss::new(16000.0, scales);
            let len = 128 + dim(rng, 0, 128);
            let target = Tensor::randn(&[1, len], 0.5, rng);
            let y = Tensor::randn(&[1, len], 0.5, rng);
            gc.clone().max_coords(40).run(|tape, v| loss.loss(tape.constant(target.clone()), v[0]), &[y])
        }),
    ]
}

/// Settings for whole-network graphs: a sample of coordinates per tensor,
/// a floor sized for the rounding noise thousands of ops accumulate
/// (about `1e-10` per difference quotient at unit loss scale), and a
/// narrower retry for stencils that straddle a LeakyReLU or |x| kink.
fn deep(gc: &GradCheck, coords: usize) -> GradCheck {
    GradCheck { floor: gc.floor.max(1e-5), kink_retry: true, ..gc.clone() }.max_coords(coords)
}

fn tiny_generator(rng: &mut ChaCha8Rng) -> Result<GeneratorModel> {
    let rates = vec![2, dim(rng, 2, 3)];
    let base = dim(rng, 1, 2);
    let latent = base << rates.len();
    let cfg = ModelConfig {
        downsample: rates.iter().product(),
        rates,
        base_channels: base,
        vq: VqConfig::new(latent, dim(rng, 1, 3), dim(rng, 2, 8))?,
        sample_rate: 16000,
        lstm_layers: 1,
        residual_kernel: 3,
        dilations: vec![1, 2],
        encoder_init: WeightInit::Normal(0.3),
        decoder_init: WeightInit::Normal(0.3),
    };
    GeneratorModel::build(cfg, rng.gen())
}

trait Layer {
    fn apply<'t>(&self, p: &Bound<'t>, x: Var<'t>) -> Result<Var<'t>>;
}

macro_rules! impl_layer {
    ($($t:ty),*) => {$(
        impl Layer for $t {
            fn apply<'t>(&self, p: &Bound<'t>, x: Var<'t>) -> Result<Var<'t>> {
                self.forward(p, x)
            }
        }
    )*};
}

impl_layer!(ResidualUnit, LstmStack, Upsample);

/// Gradients with respect to the input and every parameter of one layer.
fn layer_check<L: Layer>(rng: &mut ChaCha8Rng, gc: &GradCheck, x_shape: &[usize], build: impl FnOnce(&mut Builder<'_, ChaCha8Rng>) -> L) -> Result<GradCheckReport> {
    let mut store = ParamStore::new();
    let layer = build(&mut Builder { store: &mut store, rng, init: WeightInit::Normal(0.6) });
    let mut inputs = vec![Tensor::randn(x_shape, 1.0, rng)];
    inputs.extend(store_values(&store));
    // zero-initialized biases and unit alphas would hide sign errors
    for t in inputs.iter_mut().skip(1) {
        t.data_mut().iter_mut().for_each(|v| *v += rng.gen_range(-0.3..0.3));
    }
    let seed: u64 = rng.gen();
    gc.run(
        |_, v| {
            let y = layer.apply(&Bound::from_vars(v[1..].to_vec()), v[0])?;
            probe(y, &mut ChaCha8Rng::seed_from_u64(seed))
        },
        &inputs,
    )
}

/// Perturbed copies of every generator parameter.
fn jittered(model: &GeneratorModel, rng: &mut ChaCha8Rng) -> Vec<Tensor> {
    let mut v = store_values(&model.params);
    for t in &mut v {
        t.data_mut().iter_mut().for_each(|x| *x += rng.gen_range(-0.1..0.1));
    }
    v
}

fn model_checks() -> Vec<(&'static str, CheckFn)> {
    vec![
        ("snake", |rng, gc| {
            let c = dim(rng, 1, 3);
            let inputs = vec![Tensor::randn(&[dim(rng, 1, 2), c, dim(rng, 1, 6)], 1.5, rng), Tensor::uniform(&[c], 0.2, 2.0, rng)];
            check!(gc, rng, inputs, |v, r| snake(v[0], v[1], SNAKE_EPS))
        }),
        ("residual_unit", |rng, gc| {
            let (ch, k, d) = (dim(rng, 1, 3), [1, 3, 5][dim(rng, 0, 2)], dim(rng, 1, 3));
            let shape = [dim(rng, 1, 2), ch, dim(rng, 2, 8)];
            layer_check(rng, gc, &shape, |b| ResidualUnit::new(b, "res", ch, k, d))
        }),
        ("lstm_stack", |rng, gc| {
            let (ch, depth) = (dim(rng, 1, 3), dim(rng, 1, 2));
            let shape = [dim(rng, 1, 2), ch, dim(rng, 1, 5)];
            layer_check(rng, gc, &shape, |b| LstmStack::new(b, "lstm", ch, depth))
        }),
        ("upsample", |rng, gc| {
            let (cin, cout, rate) = (dim(rng, 1, 3), dim(rng, 1, 3), dim(rng, 1, 4));
            let shape = [dim(rng, 1, 2), cin, dim(rng, 1, 4)];
            layer_check(rng, gc, &shape, |b| Upsample::new(b, "up", cin, cout, rate))
        }),
        ("encoder", |rng, gc| {
            let model = tiny_generator(rng)?;
            let mut inputs = jittered(&model, rng);
            let n = inputs.len();
            inputs.push(Tensor::randn(&[1, 1, model.config.downsample * dim(rng, 1, 3)], 0.5, rng));
            let seed: u64 = rng.gen();
            deep(gc, 4).run(
                |_, v| {
                    let h = model.encode_latent(&Bound::from_vars(v[..n].to_vec()), v[n])?;
                    probe(h, &mut ChaCha8Rng::seed_from_u64(seed))
                },
                &inputs,
            )
        }),
        ("decoder", |rng, gc| {
            let model = tiny_generator(rng)?;
            let mut inputs = jittered(&model, rng);
            let n = inputs.len();
            inputs.push(Tensor::randn(&[1, model.config.latent_dim(), dim(rng, 1, 3)], 1.0, rng));
            let seed: u64 = rng.gen();
            deep(gc, 4).run(
                |_, v| {
                    let y = model.decode_latent(&Bound::from_vars(v[..n].to_vec()), v[n])?;
                    probe(y, &mut ChaCha8Rng::seed_from_u64(seed))
                },
                &inputs,
            )
        }),
        ("generator_through_ste", |rng, gc| {
            let model = tiny_generator(rng)?;
            let mut inputs = jittered(&model, rng);
            let n = inputs.len();
            let x = Tensor::randn(&[1, 1, model.config.downsample * dim(rng, 1, 3)], 0.5, rng);
            let h = {
                let tape = Tape::new();
                let h = model.encode_latent(&constants(&tape, &inputs), tape.constant(x.clone()))?;
                (*h.value()).clone()
            };
            let base = FrozenVq::capture(&model.quantizer, &inputs, &h)?;
            let probe_t = Tensor::randn(x.shape(), 1.0, rng);
            inputs.push(x);
            deep(gc, 4).run_against(
                |_, v| {
                    let out = model.forward(&Bound::from_vars(v[..n].to_vec()), v[n])?;
                    let fit = out.x_hat.mul(v[n].tape().constant(probe_t.clone()))?.sum();
                    fit.add(out.codebook_loss)?.add(out.commitment_loss.scale(0.25))
                },
                |_, v| {
                    let p = Bound::from_vars(v[..n].to_vec());
                    let h = model.encode_latent(&p, v[n])?;
                    let vq = vq_surrogate(&model.quantizer, &p, h, &base)?;
                    let x_hat = model.decode_latent(&p, vq.z_d)?;
                    vq_objective(vq, x_hat, &probe_t)
                },
                &inputs,
            )
        }),
    ]
}

fn tiny_discriminators(rng: &mut ChaCha8Rng) -> Result<Discriminators> {
    let mut cfg = DiscConfig {
        mpd: MpdConfig { periods: vec![2, 3], ..Default::default() },
        msstft: MsStftConfig { n_ffts: vec![16], hops: vec![4], ..Default::default() },
    };
    cfg.mpd.stack.channels = vec![2, 3];
    cfg.msstft.stack.channels = vec![2, 3];
    Discriminators::build(cfg, rng.gen())
}

fn logit_list(rng: &mut ChaCha8Rng, k: usize) -> Vec<Tensor> {
    (0..k).map(|_| Tensor::randn(&[1, 1, dim(rng, 1, 3), dim(rng, 1, 3)], 1.0, rng)).collect()
}

fn adversary_checks() -> Vec<(&'static str, CheckFn)> {
    vec![
        ("lsgan_d", |rng, gc| {
            let k = dim(rng, 1, 3);
            let mut inputs = logit_list(rng, k);
            // real and fake logits of one sub-discriminator share a shape
            let fake: Vec<Tensor> = inputs.iter().map(|t| Tensor::randn(t.shape(), 1.0, rng)).collect();
            inputs.extend(fake);
            gc.run(|_, v| lsgan_d_loss(&v[..k], &v[k..]), &inputs)
        }),
        ("lsgan_g", |rng, gc| {
            let k = dim(rng, 1, 3);
            let inputs = logit_list(rng, k);
            gc.run(|_, v| lsgan_g_loss(v), &inputs)
        }),
        ("feature_matching", |rng, gc| {
            let (k, depth) = (dim(rng, 1, 3), dim(rng, 1, 3));
            let fake: Vec<Tensor> = (0..k * depth).map(|_| Tensor::randn(&[1, dim(rng, 1, 3), dim(rng, 1, 4)], 1.0, rng)).collect();
            // keep every |fake - real| away from the kink
            let real: Vec<Tensor> = fake
                .iter()
                .map(|f| {
                    let off = away_from_zero(f.shape(), rng);
                    Tensor::new(f.shape(), f.data().iter().zip(off.data()).map(|(a, b)| a + b).collect()).expect("shape")
                })
                .collect();
            gc.run(
                |tape, v| {
                    let r: Vec<Var> = real.iter().map(|t| tape.constant(t.clone())).collect();
                    let r: Vec<Vec<Var>> = r.chunks(depth).map(|c| c.to_vec()).collect();
                    let f: Vec<Vec<Var>> = v.chunks(depth).map(|c| c.to_vec()).collect();
                    feature_matching(&r, &f)
                },
                &fake,
            )
        }),
        ("discriminator_losses", |rng, gc| {
            let d = tiny_discriminators(rng)?;
            let mut inputs = store_values(&d.params);
            inputs.iter_mut().for_each(|t| t.data_mut().iter_mut().for_each(|x| *x += rng.gen_range(-0.2..0.2)));
            let n = inputs.len();
            let len = 16 + dim(rng, 0, 24);
            let real = Tensor::randn(&[1, 1, len], 0.5, rng);
            inputs.push(Tensor::randn(&[1, 1, len], 0.5, rng));
            // real features enter feature matching detached, so the reference
            // holds them at their base-point values
            let frozen: Vec<Vec<Tensor>> = {
                let tape = Tape::new();
                let out = d.forward(&constants(&tape, &inputs[..n]), tape.constant(real.clone()))?;
                out.iter().map(|o| o.features.iter().map(|f| (*f.value()).clone()).collect()).collect()
            };
            deep(gc, 6).run_against(
                |tape, v| disc_objective(&d, &v[..n], tape.constant(real.clone()), v[n], None),
                |tape, v| disc_objective(&d, &v[..n], tape.constant(real.clone()), v[n], Some(&frozen)),
                &inputs,
            )
        }),
    ]
}

/// LSGAN terms of both players plus feature matching. With `frozen` set,
/// the real features are those constants instead of live activations.
fn disc_objective<'t>(d: &Discriminators, params: &[Var<'t>], real: Var<'t>, fake: Var<'t>, frozen: Option<&[Vec<Tensor>]>) -> Result<Var<'t>> {
    let tape = fake.tape();
    let p = Bound::from_vars(params.to_vec());
    let fr = d.forward(&p, real)?;
    let ff = d.forward(&p, fake)?;
    let rl: Vec<_> = fr.iter().map(|o| o.logits).collect();
    let fl: Vec<_> = ff.iter().map(|o| o.logits).collect();
    let loss = lsgan_d_loss(&rl, &fl)?.add(lsgan_g_loss(&fl)?)?;
    let real_features: Vec<Vec<Var<'t>>> = match frozen {
        Some(fz) => fz.iter().map(|l| l.iter().map(|t| tape.constant(t.clone())).collect()).collect(),
        None => fr.into_iter().map(|o| o.features).collect(),
    };
    loss.add(feature_matching(&real_features, &ff.into_iter().map(|o| o.features).collect::<Vec<_>>())?)
}

fn checks(suite: Suite) -> Vec<(&'static str, CheckFn)> {
    match suite {
        Suite::NdCore => nd_checks(),
        Suite::Quantizer => quantizer_checks(),
        Suite::Dsp => dsp_checks(),
        Suite::Model => model_checks(),
        Suite::Adversary => adversary_checks(),
    }
}

/// Names of the checks registered under `suite`.
pub fn check_names(suite: Suite) -> Vec<&'static str> {
    checks(suite).into_iter().map(|(n, _)| n).collect()
}

/// Runs every check of `suite` once with the given seed.
pub fn run_suite(suite: Suite, seed: u64, tol: f64) -> Result<Vec<CheckResult>> {
    let gc = GradCheck::new(tol);
    checks(suite)
        .into_iter()
        .enumerate()
        .map(|(i, (name, f))| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9e37_79b9).wrapping_add(i as u64));
            let report = f(&mut rng, &gc)?;
            Ok(CheckResult { suite, name, seed, report })
        })
        .collect()
}
