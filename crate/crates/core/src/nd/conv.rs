use std::rc::Rc;

use super::kernels::{correlate, weight_grad, Corr};
use super::linalg::{gemm, rm, tr};
use super::{Tensor, Var};
use crate::error::{bail, Result};

/// Largest `C_in * K` routed to the blocked kernel; wider convs go through gemm.
const TAP_KERNEL_MAX: usize = 128;

/// Geometry of a 1-D sliding window.
#[derive(Clone, Copy, Debug)]
struct Win1d {
    channels: usize,
    len: usize,
    k: usize,
    stride: usize,
    dilation: usize,
    padding: usize,
    out: usize,
}

impl Win1d {
    fn src(&self, kk: usize, t: usize) -> Option<usize> {
        let i = (t * self.stride + kk * self.dilation) as isize - self.padding as isize;
        (0..self.len as isize).contains(&i).then_some(i as usize)
    }
}

/// `[C, L] -> [C*K, out]`
fn im2col1d(x: &[f64], w: Win1d, cols: &mut [f64]) {
    for c in 0..w.channels {
        let xr = &x[c * w.len..(c + 1) * w.len];
        for kk in 0..w.k {
            let row = &mut cols[(c * w.k + kk) * w.out..(c * w.k + kk + 1) * w.out];
            if w.stride == 1 {
                // contiguous run of in-range taps
                let off = (kk * w.dilation) as isize - w.padding as isize;
                for (t, r) in row.iter_mut().enumerate() {
                    let i = t as isize + off;
                    *r = if i >= 0 && (i as usize) < w.len { xr[i as usize] } else { 0.0 };
                }
            } else {
                for (t, r) in row.iter_mut().enumerate() {
                    *r = w.src(kk, t).map_or(0.0, |i| xr[i]);
                }
            }
        }
    }
}

/// Adjoint of [`im2col1d`], accumulating into `x`.
fn col2im1d(cols: &[f64], w: Win1d, x: &mut [f64]) {
    for c in 0..w.channels {
        let xr = &mut x[c * w.len..(c + 1) * w.len];
        for kk in 0..w.k {
            let row = &cols[(c * w.k + kk) * w.out..(c * w.k + kk + 1) * w.out];
            for (t, r) in row.iter().enumerate() {
                if let Some(i) = w.src(kk, t) {
                    xr[i] += r;
                }
            }
        }
    }
}

/// `[C, L]` rows copied into `[C, L + left + right]` with zero margins.
fn zero_pad_rows(x: &[f64], rows: usize, len: usize, left: usize, right: usize) -> Vec<f64> {
    let lp = len + left + right;
    let mut out = vec![0.0; rows * lp];
    for r in 0..rows {
        out[r * lp + left..r * lp + left + len].copy_from_slice(&x[r * len..(r + 1) * len]);
    }
    out
}

/// Stride-1 convolution through the blocked correlation kernel.
fn tap_forward(x: &[f64], wt: &[f64], w: Win1d, cout: usize, y: &mut [f64]) {
    let xp = zero_pad_rows(x, w.channels, w.len, w.padding, w.padding);
    let c = Corr { x: &xp, lx: w.len + 2 * w.padding, w: wt, cin: w.channels, k: w.k, d: w.dilation, out: w.out };
    correlate(&c, cout, y);
}

fn tap_backward(x: &[f64], wt: &[f64], g: &[f64], w: Win1d, cout: usize, dx: Option<&mut [f64]>, dw: Option<&mut [f64]>) {
    let (cin, k, d, p) = (w.channels, w.k, w.dilation, w.padding);
    let lp = w.len + 2 * p;
    if let Some(dw) = dw {
        let xp = zero_pad_rows(x, cin, w.len, p, p);
        weight_grad(&Corr { x: &xp, lx: lp, w: wt, cin, k, d, out: w.out }, g, cout, dw);
    }
    if let Some(dx) = dx {
        // full correlation of the output gradient with the flipped, transposed kernel
        let span = (k - 1) * d;
        let gp = zero_pad_rows(g, cout, w.out, span, span);
        let mut flipped = vec![0.0; cin * cout * k];
        for co in 0..cout {
            for ci in 0..cin {
                for kk in 0..k {
                    flipped[(ci * cout + co) * k + (k - 1 - kk)] = wt[(co * cin + ci) * k + kk];
                }
            }
        }
        let mut dxp = vec![0.0; cin * lp];
        correlate(&Corr { x: &gp, lx: w.out + 2 * span, w: &flipped, cin: cout, k, d, out: lp }, cin, &mut dxp);
        for ci in 0..cin {
            let src = &dxp[ci * lp + p..ci * lp + p + w.len];
            dx[ci * w.len..(ci + 1) * w.len].iter_mut().zip(src).for_each(|(o, v)| *o += v);
        }
    }
}

fn bias_check(bias: Option<&Var<'_>>, n: usize) -> Result<()> {
    if let Some(b) = bias {
        if b.shape() != [n] {
            bail!(Shape, "bias shape {:?}, expected [{n}]", b.shape());
        }
    }
    Ok(())
}

fn inputs<'t>(x: Var<'t>, w: Var<'t>, b: Option<Var<'t>>) -> Vec<Var<'t>> {
    let mut v = vec![x, w];
    v.extend(b);
    v
}

fn bias_grad(g: &[f64], batch: usize, ch: usize, plane: usize) -> Vec<f64> {
    let mut db = vec![0.0; ch];
    for b in 0..batch {
        for (c, d) in db.iter_mut().enumerate() {
            let s = (b * ch + c) * plane;
            *d += g[s..s + plane].iter().sum::<f64>();
        }
    }
    db
}

fn add_bias(y: &mut [f64], bias: Option<&Tensor>, batch: usize, ch: usize, plane: usize) {
    if let Some(b) = bias {
        for bi in 0..batch {
            for (c, bv) in b.data().iter().enumerate() {
                let s = (bi * ch + c) * plane;
                y[s..s + plane].iter_mut().for_each(|v| *v += bv);
            }
        }
    }
}

impl<'t> Var<'t> {
    /// `[B, C_in, T] * [C_out, C_in, K] -> [B, C_out, T_out]`.
    pub fn conv1d(
        self,
        weight: Var<'t>,
        bias: Option<Var<'t>>,
        stride: usize,
        dilation: usize,
        padding: usize,
    ) -> Result<Var<'t>> {
        let (x, wt) = (self.value(), weight.value());
        let (xs, ws) = (x.shape(), wt.shape());
        if xs.len() != 3 || ws.len() != 3 {
            bail!(Shape, "conv1d expects [B,C,T] input and [O,C,K] weight, got {xs:?}, {ws:?}");
        }
        let (batch, cin, len) = (xs[0], xs[1], xs[2]);
        let (cout, k) = (ws[0], ws[2]);
        if ws[1] != cin {
            bail!(Shape, "conv1d: input has {cin} channels, weight expects {}", ws[1]);
        }
        if stride == 0 || dilation == 0 {
            bail!(Config, "conv1d: stride and dilation must be >= 1");
        }
        let span = dilation * (k - 1) + 1;
        if len + 2 * padding < span {
            bail!(Shape, "conv1d: padded length {} shorter than kernel span {span}", len + 2 * padding);
        }
        bias_check(bias.as_ref(), cout)?;
        let out = (len + 2 * padding - span) / stride + 1;
        let win = Win1d { channels: cin, len, k, stride, dilation, padding, out };
        let direct = k == 1 && stride == 1 && padding == 0;
        let taps = stride == 1 && !direct && cin * k <= TAP_KERNEL_MAX;
        let ck = cin * k;
        let mut y = vec![0.0; batch * cout * out];
        let mut cols = if direct || taps { Vec::new() } else { vec![0.0; ck * out] };
        for b in 0..batch {
            if taps {
                let xb = &x.data()[b * cin * len..(b + 1) * cin * len];
                tap_forward(xb, wt.data(), win, cout, &mut y[b * cout * out..(b + 1) * cout * out]);
                continue;
            }
            let xb = &x.data()[b * cin * len..(b + 1) * cin * len];
            let c: &[f64] = if direct {
                xb
            } else {
                im2col1d(xb, win, &mut cols);
                &cols
            };
            let yb = &mut y[b * cout * out..(b + 1) * cout * out];
            gemm(cout, ck, out, 1.0, wt.data(), rm(ck), c, rm(out), 0.0, yb, rm(out));
        }
        let bv = bias.map(|b| b.value());
        add_bias(&mut y, bv.as_deref(), batch, cout, out);
        let result = Tensor::new(&[batch, cout, out], y)?;
        Ok(self.tape().push_op(result, &inputs(self, weight, bias), move |g, mask| {
            let mut dx = mask[0].then(|| vec![0.0; batch * cin * len]);
            let mut dw = mask[1].then(|| vec![0.0; cout * ck]);
            let mut cols = if taps { Vec::new() } else { vec![0.0; ck * out] };
            for b in 0..batch {
                let gb = &g[b * cout * out..(b + 1) * cout * out];
                if taps {
                    let xb = &x.data()[b * cin * len..(b + 1) * cin * len];
                    let dxb = dx.as_mut().map(|d| &mut d[b * cin * len..(b + 1) * cin * len]);
                    tap_backward(xb, wt.data(), gb, win, cout, dxb, dw.as_deref_mut());
                    continue;
                }
                if let Some(dw) = dw.as_mut() {
                    let xb = &x.data()[b * cin * len..(b + 1) * cin * len];
                    let c: &[f64] = if direct {
                        xb
                    } else {
                        im2col1d(xb, win, &mut cols);
                        &cols
                    };
                    gemm(cout, out, ck, 1.0, gb, rm(out), c, tr(out), 1.0, dw, rm(ck));
                }
                if let Some(dx) = dx.as_mut() {
                    let dxb = &mut dx[b * cin * len..(b + 1) * cin * len];
                    if direct {
                        gemm(ck, cout, out, 1.0, wt.data(), tr(ck), gb, rm(out), 1.0, dxb, rm(out));
                    } else {
                        gemm(ck, cout, out, 1.0, wt.data(), tr(ck), gb, rm(out), 0.0, &mut cols, rm(out));
                        col2im1d(&cols, win, dxb);
                    }
                }
            }
            let mut grads = vec![dx, dw];
            if mask.len() == 3 {
                grads.push(mask[2].then(|| bias_grad(g, batch, cout, out)));
            }
            grads
        }))
    }

    /// `[B, C_in, T] * [C_in, C_out, K] -> [B, C_out, (T-1)*stride - 2*padding + K]`.
    pub fn conv_transpose1d(
        self,
        weight: Var<'t>,
        bias: Option<Var<'t>>,
        stride: usize,
        padding: usize,
    ) -> Result<Var<'t>> {
        let (x, wt) = (self.value(), weight.value());
        let (xs, ws) = (x.shape(), wt.shape());
        if xs.len() != 3 || ws.len() != 3 {
            bail!(Shape, "conv_transpose1d expects [B,C,T] input and [C,O,K] weight, got {xs:?}, {ws:?}");
        }
        let (batch, cin, len) = (xs[0], xs[1], xs[2]);
        let (cout, k) = (ws[1], ws[2]);
        if ws[0] != cin {
            bail!(Shape, "conv_transpose1d: input has {cin} channels, weight expects {}", ws[0]);
        }
        if stride == 0 {
            bail!(Config, "conv_transpose1d: stride must be >= 1");
        }
        let full = (len as isize - 1) * stride as isize + k as isize - 2 * padding as isize;
        if full <= 0 || len == 0 {
            bail!(Config, "conv_transpose1d: output length {full} is not positive");
        }
        bias_check(bias.as_ref(), cout)?;
        let olen = full as usize;
        // the output plays the role of the strided-conv input
        let win = Win1d { channels: cout, len: olen, k, stride, dilation: 1, padding, out: len };
        let ok = cout * k;
        let mut y = vec![0.0; batch * cout * olen];
        let mut cols = vec![0.0; ok * len];
        for b in 0..batch {
            let xb = &x.data()[b * cin * len..(b + 1) * cin * len];
            gemm(ok, cin, len, 1.0, wt.data(), tr(ok), xb, rm(len), 0.0, &mut cols, rm(len));
            col2im1d(&cols, win, &mut y[b * cout * olen..(b + 1) * cout * olen]);
        }
        let bv = bias.map(|b| b.value());
        add_bias(&mut y, bv.as_deref(), batch, cout, olen);
        let result = Tensor::new(&[batch, cout, olen], y)?;
        Ok(self.tape().push_op(result, &inputs(self, weight, bias), move |g, mask| {
            let mut dx = mask[0].then(|| vec![0.0; batch * cin * len]);
            let mut dw = mask[1].then(|| vec![0.0; cin * ok]);
            let mut gcols = vec![0.0; ok * len];
            for b in 0..batch {
                im2col1d(&g[b * cout * olen..(b + 1) * cout * olen], win, &mut gcols);
                if let Some(dx) = dx.as_mut() {
                    let dxb = &mut dx[b * cin * len..(b + 1) * cin * len];
                    gemm(cin, ok, len, 1.0, wt.data(), rm(ok), &gcols, rm(len), 0.0, dxb, rm(len));
                }
                if let Some(dw) = dw.as_mut() {
                    let xb = &x.data()[b * cin * len..(b + 1) * cin * len];
                    gemm(cin, len, ok, 1.0, xb, rm(len), &gcols, tr(len), 1.0, dw, rm(ok));
                }
            }
            let mut grads = vec![dx, dw];
            if mask.len() == 3 {
                grads.push(mask[2].then(|| bias_grad(g, batch, cout, olen)));
            }
            grads
        }))
    }

    /// `[B, C_in, H, W] * [C_out, C_in, KH, KW] -> [B, C_out, H', W']`.
    pub fn conv2d(
        self,
        weight: Var<'t>,
        bias: Option<Var<'t>>,
        stride: (usize, usize),
        padding: (usize, usize),
    ) -> Result<Var<'t>> {
        let (x, wt) = (self.value(), weight.value());
        let (xs, ws) = (x.shape(), wt.shape());
        if xs.len() != 4 || ws.len() != 4 {
            bail!(Shape, "conv2d expects rank-4 input and weight, got {xs:?}, {ws:?}");
        }
        let (batch, cin, h, w) = (xs[0], xs[1], xs[2], xs[3]);
        let (cout, kh, kw) = (ws[0], ws[2], ws[3]);
        if ws[1] != cin {
            bail!(Shape, "conv2d: input has {cin} channels, weight expects {}", ws[1]);
        }
        if stride.0 == 0 || stride.1 == 0 {
            bail!(Config, "conv2d: stride must be >= 1");
        }
        if h + 2 * padding.0 < kh || w + 2 * padding.1 < kw {
            bail!(Shape, "conv2d: padded input {h}x{w} smaller than kernel {kh}x{kw}");
        }
        bias_check(bias.as_ref(), cout)?;
        let oh = (h + 2 * padding.0 - kh) / stride.0 + 1;
        let ow = (w + 2 * padding.1 - kw) / stride.1 + 1;
        let geo = Rc::new(Win2d { cin, h, w, kh, kw, stride, padding, oh, ow });
        let ck = cin * kh * kw;
        let plane = oh * ow;
        let mut y = vec![0.0; batch * cout * plane];
        let mut cols = vec![0.0; ck * plane];
        for b in 0..batch {
            geo.im2col(&x.data()[b * cin * h * w..(b + 1) * cin * h * w], &mut cols);
            let yb = &mut y[b * cout * plane..(b + 1) * cout * plane];
            gemm(cout, ck, plane, 1.0, wt.data(), rm(ck), &cols, rm(plane), 0.0, yb, rm(plane));
        }
        let bv = bias.map(|b| b.value());
        add_bias(&mut y, bv.as_deref(), batch, cout, plane);
        let result = Tensor::new(&[batch, cout, oh, ow], y)?;
        Ok(self.tape().push_op(result, &inputs(self, weight, bias), move |g, mask| {
            let mut dx = mask[0].then(|| vec![0.0; batch * cin * h * w]);
            let mut dw = mask[1].then(|| vec![0.0; cout * ck]);
            let mut cols = vec![0.0; ck * plane];
            for b in 0..batch {
                let gb = &g[b * cout * plane..(b + 1) * cout * plane];
                if let Some(dw) = dw.as_mut() {
                    geo.im2col(&x.data()[b * cin * h * w..(b + 1) * cin * h * w], &mut cols);
                    gemm(cout, plane, ck, 1.0, gb, rm(plane), &cols, tr(plane), 1.0, dw, rm(ck));
                }
                if let Some(dx) = dx.as_mut() {
                    gemm(ck, cout, plane, 1.0, wt.data(), tr(ck), gb, rm(plane), 0.0, &mut cols, rm(plane));
                    geo.col2im(&cols, &mut dx[b * cin * h * w..(b + 1) * cin * h * w]);
                }
            }
            let mut grads = vec![dx, dw];
            if mask.len() == 3 {
                grads.push(mask[2].then(|| bias_grad(g, batch, cout, plane)));
            }
            grads
        }))
    }
}

struct Win2d {
    cin: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: (usize, usize),
    padding: (usize, usize),
    oh: usize,
    ow: usize,
}

impl Win2d {
    /// Output indices `lo..hi` along one axis whose tap `k` lands inside an
    /// input of length `n`.
    fn valid(out: usize, stride: usize, k: usize, pad: usize, n: usize) -> (usize, usize) {
        let lo = if pad > k { (pad - k).div_ceil(stride) } else { 0 };
        let hi = if n + pad > k { ((n + pad - k - 1) / stride + 1).min(out) } else { 0 };
        (lo.min(hi), hi)
    }

    /// Calls `f(col_offset, x_offset, count)` for every contiguous-in-output run;
    /// consecutive elements of a run step by `stride.1` in the input.
    fn runs(&self, mut f: impl FnMut(usize, usize, usize)) {
        let plane = self.oh * self.ow;
        let (sh, sw) = self.stride;
        let (ph, pw) = self.padding;
        for c in 0..self.cin {
            for i in 0..self.kh {
                let (ylo, yhi) = Self::valid(self.oh, sh, i, ph, self.h);
                for j in 0..self.kw {
                    let (xlo, xhi) = Self::valid(self.ow, sw, j, pw, self.w);
                    if xlo >= xhi {
                        continue;
                    }
                    let row = ((c * self.kh + i) * self.kw + j) * plane;
                    for oy in ylo..yhi {
                        let y = oy * sh + i - ph;
                        let x0 = xlo * sw + j - pw;
                        f(row + oy * self.ow + xlo, (c * self.h + y) * self.w + x0, xhi - xlo);
                    }
                }
            }
        }
    }

    fn im2col(&self, x: &[f64], cols: &mut [f64]) {
        cols.iter_mut().for_each(|v| *v = 0.0);
        let sw = self.stride.1;
        self.runs(|ci, xi, n| {
            if sw == 1 {
                cols[ci..ci + n].copy_from_slice(&x[xi..xi + n]);
            } else {
                for (t, c) in cols[ci..ci + n].iter_mut().enumerate() {
                    *c = x[xi + t * sw];
                }
            }
        });
    }

    fn col2im(&self, cols: &[f64], x: &mut [f64]) {
        let sw = self.stride.1;
        self.runs(|ci, xi, n| {
            for (t, c) in cols[ci..ci + n].iter().enumerate() {
                x[xi + t * sw] += c;
            }
        });
    }
}
