use rand::Rng;

use super::snake::{snake, SNAKE_EPS};
use crate::error::Result;
use crate::nd::{Bound, LstmWeights, ParamId, ParamStore, Tensor, Var, WeightInit};

/// Parameter factory with a name prefix and a shared initializer.
pub(crate) struct Builder<'a, R> {
    pub store: &'a mut ParamStore,
    pub rng: &'a mut R,
    pub init: WeightInit,
}

impl<R: Rng> Builder<'_, R> {
    pub fn weight(&mut self, name: String, shape: &[usize], fan_in: usize) -> ParamId {
        let t = Tensor::trunc_normal(shape, self.init.std(fan_in), self.rng);
        self.store.add(name, t, true)
    }

    pub fn zeros(&mut self, name: String, shape: &[usize]) -> ParamId {
        self.store.add(name, Tensor::zeros(shape), false)
    }

    pub fn ones(&mut self, name: String, shape: &[usize]) -> ParamId {
        self.store.add(name, Tensor::ones(shape), false)
    }
}

#[derive(Clone, Debug)]
pub(crate) struct Conv {
    w: ParamId,
    b: ParamId,
    stride: usize,
    dilation: usize,
    padding: usize,
}

impl Conv {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng>(bld: &mut Builder<'_, R>, name: &str, cin: usize, cout: usize, k: usize, stride: usize, dilation: usize, padding: usize) -> Self {
        Self {
            w: bld.weight(format!("{name}.weight"), &[cout, cin, k], cin * k),
            b: bld.zeros(format!("{name}.bias"), &[cout]),
            stride,
            dilation,
            padding,
        }
    }

    pub fn forward<'t>(&self, p: &Bound<'t>, x: Var<'t>) -> Result<Var<'t>> {
        x.conv1d(p.get(self.w), Some(p.get(self.b)), self.stride, self.dilation, self.padding)
    }
}

/// Transposed conv with kernel `2r`, stride `r`, cropped to exactly `r * T`.
#[derive(Clone, Debug)]
pub(crate) struct Upsample {
    w: ParamId,
    b: ParamId,
    rate: usize,
}

impl Upsample {
    pub fn new<R: Rng>(bld: &mut Builder<'_, R>, name: &str, cin: usize, cout: usize, rate: usize) -> Self {
        Self {
            w: bld.weight(format!("{name}.weight"), &[cin, cout, 2 * rate], 2 * cin),
            b: bld.zeros(format!("{name}.bias"), &[cout]),
            rate,
        }
    }

    pub fn forward<'t>(&self, p: &Bound<'t>, x: Var<'t>) -> Result<Var<'t>> {
        let t = x.shape()[2];
        let y = x.conv_transpose1d(p.get(self.w), Some(p.get(self.b)), self.rate, 0)?;
        y.narrow(2, self.rate / 2, self.rate * t)
    }
}

#[derive(Clone, Debug)]
pub(crate) struct Snake {
    alpha: ParamId,
}

impl Snake {
    pub fn new<R: Rng>(bld: &mut Builder<'_, R>, name: &str, channels: usize) -> Self {
        Self { alpha: bld.ones(format!("{name}.alpha"), &[channels]) }
    }

    pub fn forward<'t>(&self, p: &Bound<'t>, x: Var<'t>) -> Result<Var<'t>> {
        snake(x, p.get(self.alpha), SNAKE_EPS)
    }
}

/// `x + conv_1(snake(conv_k,d(snake(x))))`
#[derive(Clone, Debug)]
pub(crate) struct ResidualUnit {
    act1: Snake,
    conv1: Conv,
    act2: Snake,
    conv2: Conv,
}

impl ResidualUnit {
    pub fn new<R: Rng>(bld: &mut Builder<'_, R>, name: &str, ch: usize, k: usize, dilation: usize) -> Self {
        Self {
            act1: Snake::new(bld, &format!("{name}.act1"), ch),
            conv1: Conv::new(bld, &format!("{name}.conv1"), ch, ch, k, 1, dilation, dilation * (k - 1) / 2),
            act2: Snake::new(bld, &format!("{name}.act2"), ch),
            conv2: Conv::new(bld, &format!("{name}.conv2"), ch, ch, 1, 1, 1, 0),
        }
    }

    pub fn forward<'t>(&self, p: &Bound<'t>, x: Var<'t>) -> Result<Var<'t>> {
        let y = self.act1.forward(p, x)?;
        let y = self.conv1.forward(p, y)?;
        let y = self.act2.forward(p, y)?;
        let y = self.conv2.forward(p, y)?;
        x.add(y)
    }
}

/// Residual stack of LSTM layers over `[B, C, T]`, hidden size `C`.
#[derive(Clone, Debug)]
pub(crate) struct LstmStack {
    layers: Vec<[ParamId; 4]>,
}

impl LstmStack {
    pub fn new<R: Rng>(bld: &mut Builder<'_, R>, name: &str, ch: usize, depth: usize) -> Self {
        let layers = (0..depth)
            .map(|l| {
                [
                    bld.weight(format!("{name}.{l}.w_ih"), &[4 * ch, ch], ch),
                    bld.weight(format!("{name}.{l}.w_hh"), &[4 * ch, ch], ch),
                    bld.zeros(format!("{name}.{l}.b_ih"), &[4 * ch]),
                    bld.zeros(format!("{name}.{l}.b_hh"), &[4 * ch]),
                ]
            })
            .collect();
        Self { layers }
    }

    pub fn forward<'t>(&self, p: &Bound<'t>, x: Var<'t>) -> Result<Var<'t>> {
        let seq = x.transpose(1, 2)?;
        let mut y = seq;
        for [w_ih, w_hh, b_ih, b_hh] in &self.layers {
            y = y.lstm_layer(LstmWeights { w_ih: p.get(*w_ih), w_hh: p.get(*w_hh), b_ih: p.get(*b_ih), b_hh: p.get(*b_hh) })?;
        }
        y.add(seq)?.transpose(1, 2)
    }
}
