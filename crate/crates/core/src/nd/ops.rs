use std::rc::Rc;

use super::linalg::{gemm, rm, tr};
use super::{Tensor, Var};
use crate::error::{bail, Result};

/// Boundary handling for [`Var::pad_last`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PadMode {
    Zero,
    /// Mirror without repeating the edge sample; long pads fold repeatedly.
    Reflect,
}

/// Source index for a padded position, `None` for zero padding.
pub fn pad_source(i: isize, len: usize, mode: PadMode) -> Option<usize> {
    let n = len as isize;
    if (0..n).contains(&i) {
        return Some(i as usize);
    }
    match mode {
        PadMode::Zero => None,
        PadMode::Reflect => {
            if n == 1 {
                return Some(0);
            }
            let period = 2 * (n - 1);
            let m = i.rem_euclid(period);
            Some(if m < n { m } else { period - m } as usize)
        }
    }
}

fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

impl<'t> Var<'t> {
    fn map_unary(
        self,
        f: impl Fn(f64) -> f64,
        df: impl Fn(f64) -> f64 + 'static,
    ) -> Var<'t> {
        let x = self.value();
        let y: Vec<f64> = x.data().iter().map(|&v| f(v)).collect();
        let out = Tensor::new(x.shape(), y).expect("same shape");
        self.tape().push_op(out, &[self], move |g, _| {
            vec![Some(x.data().iter().zip(g).map(|(&v, &g)| g * df(v)).collect())]
        })
    }

    fn check_same(&self, other: &Var<'t>, op: &str) -> Result<()> {
        let (a, b) = (self.shape(), other.shape());
        if a != b {
            bail!(Shape, "{op}: shapes {a:?} and {b:?} differ");
        }
        Ok(())
    }

    pub fn add(self, other: Var<'t>) -> Result<Var<'t>> {
        self.check_same(&other, "add")?;
        let (a, b) = (self.value(), other.value());
        let y = a.data().iter().zip(b.data()).map(|(x, y)| x + y).collect();
        let out = Tensor::new(a.shape(), y)?;
        Ok(self.tape().push_op(out, &[self, other], |g, m| {
            vec![m[0].then(|| g.to_vec()), m[1].then(|| g.to_vec())]
        }))
    }

    pub fn sub(self, other: Var<'t>) -> Result<Var<'t>> {
        self.check_same(&other, "sub")?;
        let (a, b) = (self.value(), other.value());
        let y = a.data().iter().zip(b.data()).map(|(x, y)| x - y).collect();
        let out = Tensor::new(a.shape(), y)?;
        Ok(self.tape().push_op(out, &[self, other], |g, m| {
            vec![m[0].then(|| g.to_vec()), m[1].then(|| g.iter().map(|v| -v).collect())]
        }))
    }

    pub fn mul(self, other: Var<'t>) -> Result<Var<'t>> {
        self.check_same(&other, "mul")?;
        let (a, b) = (self.value(), other.value());
        let y = a.data().iter().zip(b.data()).map(|(x, y)| x * y).collect();
        let out = Tensor::new(a.shape(), y)?;
        Ok(self.tape().push_op(out, &[self, other], move |g, m| {
            let ga = m[0].then(|| g.iter().zip(b.data()).map(|(g, y)| g * y).collect());
            let gb = m[1].then(|| g.iter().zip(a.data()).map(|(g, x)| g * x).collect());
            vec![ga, gb]
        }))
    }

    pub fn scale(self, c: f64) -> Var<'t> {
        self.map_unary(|v| c * v, move |_| c)
    }

    pub fn add_scalar(self, c: f64) -> Var<'t> {
        self.map_unary(|v| v + c, |_| 1.0)
    }

    pub fn neg(self) -> Var<'t> {
        self.scale(-1.0)
    }

    pub fn sqr(self) -> Var<'t> {
        self.map_unary(|v| v * v, |v| 2.0 * v)
    }

    pub fn sin(self) -> Var<'t> {
        self.map_unary(f64::sin, f64::cos)
    }

    /// Subgradient 0 at the kink.
    pub fn abs(self) -> Var<'t> {
        self.map_unary(f64::abs, |v| if v > 0.0 { 1.0 } else if v < 0.0 { -1.0 } else { 0.0 })
    }

    pub fn exp(self) -> Var<'t> {
        self.map_unary(f64::exp, f64::exp)
    }

    pub fn log(self) -> Result<Var<'t>> {
        let x = self.value();
        if let Some(v) = x.data().iter().find(|v| **v <= 0.0 || v.is_nan()) {
            bail!(Domain, "log of non-positive value {v}");
        }
        Ok(self.map_unary(f64::ln, |v| 1.0 / v))
    }

    pub fn pow(self, p: f64) -> Result<Var<'t>> {
        let x = self.value();
        let integral = p.fract() == 0.0;
        for &v in x.data() {
            if (v < 0.0 && !integral) || (v == 0.0 && p < 0.0) {
                bail!(Domain, "pow({v}, {p}) is undefined");
            }
        }
        Ok(self.map_unary(move |v| v.powf(p), move |v| if p == 0.0 { 0.0 } else { p * v.powf(p - 1.0) }))
    }

    pub fn tanh(self) -> Var<'t> {
        self.map_unary(f64::tanh, |v| 1.0 - v.tanh().powi(2))
    }

    pub fn sigmoid(self) -> Var<'t> {
        self.map_unary(sigmoid, |v| {
            let s = sigmoid(v);
            s * (1.0 - s)
        })
    }

    pub fn leaky_relu(self, slope: f64) -> Var<'t> {
        self.map_unary(move |v| if v >= 0.0 { v } else { slope * v }, move |v| if v >= 0.0 { 1.0 } else { slope })
    }

    pub fn sum(self) -> Var<'t> {
        let x = self.value();
        let n = x.numel();
        let out = Tensor::scalar(x.data().iter().sum());
        self.tape().push_op(out, &[self], move |g, _| vec![Some(vec![g[0]; n])])
    }

    pub fn mean(self) -> Var<'t> {
        let n = self.numel();
        self.sum().scale(1.0 / n as f64)
    }

    /// Same value, no gradient path.
    pub fn detach(self) -> Var<'t> {
        let v = (*self.value()).clone();
        self.tape().constant(v)
    }

    /// `x / max(‖x‖₂, eps)` along `axis`.
    pub fn l2_normalize(self, axis: usize, eps: f64) -> Result<Var<'t>> {
        let x = self.value();
        if axis >= x.dims() {
            bail!(Shape, "axis {axis} out of range for {:?}", x.shape());
        }
        let (outer, n, inner) = split_axis(x.shape(), axis);
        let xd = x.data();
        let mut norms = vec![0.0; outer * inner];
        for o in 0..outer {
            for j in 0..n {
                let base = (o * n + j) * inner;
                for i in 0..inner {
                    norms[o * inner + i] += xd[base + i] * xd[base + i];
                }
            }
        }
        // the projection term only exists where the floor is inactive
        let smooth: Vec<bool> = norms.iter().map(|s| s.sqrt() > eps).collect();
        norms.iter_mut().for_each(|v| *v = v.sqrt().max(eps));
        let mut y = vec![0.0; xd.len()];
        for o in 0..outer {
            for j in 0..n {
                let base = (o * n + j) * inner;
                for i in 0..inner {
                    y[base + i] = xd[base + i] / norms[o * inner + i];
                }
            }
        }
        let yt = Rc::new(y.clone());
        let out = Tensor::new(x.shape(), y)?;
        Ok(self.tape().push_op(out, &[self], move |g, _| {
            let mut dot = vec![0.0; outer * inner];
            for o in 0..outer {
                for j in 0..n {
                    let base = (o * n + j) * inner;
                    for i in 0..inner {
                        dot[o * inner + i] += yt[base + i] * g[base + i];
                    }
                }
            }
            let mut dx = vec![0.0; g.len()];
            for o in 0..outer {
                for j in 0..n {
                    let base = (o * n + j) * inner;
                    for i in 0..inner {
                        let k = o * inner + i;
                        let proj = if smooth[k] { yt[base + i] * dot[k] } else { 0.0 };
                        dx[base + i] = (g[base + i] - proj) / norms[k];
                    }
                }
            }
            vec![Some(dx)]
        }))
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Var<'t>> {
        let out = (*self.value()).clone().reshape(shape)?;
        Ok(self.tape().push_op(out, &[self], |g, _| vec![Some(g.to_vec())]))
    }

    /// Reorders axes: output axis `i` is input axis `perm[i]`.
    pub fn permute(self, perm: &[usize]) -> Result<Var<'t>> {
        let x = self.value();
        let shape = x.shape().to_vec();
        let d = shape.len();
        let mut seen = vec![false; d];
        if perm.len() != d || perm.iter().any(|&p| p >= d || std::mem::replace(&mut seen[p], true)) {
            bail!(Shape, "invalid permutation {perm:?} for {shape:?}");
        }
        let in_strides = strides(&shape);
        let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
        // index map: out flat -> in flat
        let src_strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
        let n = x.numel();
        let mut map = Vec::with_capacity(n);
        let mut idx = vec![0usize; d];
        for _ in 0..n {
            map.push(idx.iter().zip(&src_strides).map(|(i, s)| i * s).sum::<usize>());
            for ax in (0..d).rev() {
                idx[ax] += 1;
                if idx[ax] < out_shape[ax] {
                    break;
                }
                idx[ax] = 0;
            }
        }
        let y = map.iter().map(|&s| x.data()[s]).collect();
        let out = Tensor::new(&out_shape, y)?;
        Ok(self.tape().push_op(out, &[self], move |g, _| {
            let mut dx = vec![0.0; g.len()];
            for (o, &s) in map.iter().enumerate() {
                dx[s] = g[o];
            }
            vec![Some(dx)]
        }))
    }

    pub fn transpose(self, a: usize, b: usize) -> Result<Var<'t>> {
        let d = self.shape().len();
        if a >= d || b >= d {
            bail!(Shape, "transpose axes ({a},{b}) out of range for rank {d}");
        }
        let mut perm: Vec<usize> = (0..d).collect();
        perm.swap(a, b);
        self.permute(&perm)
    }

    /// Slice `[start, start+len)` along `axis`.
    pub fn narrow(self, axis: usize, start: usize, len: usize) -> Result<Var<'t>> {
        let x = self.value();
        let shape = x.shape().to_vec();
        if axis >= shape.len() || start + len > shape[axis] {
            bail!(Shape, "narrow({axis}, {start}, {len}) out of range for {shape:?}");
        }
        let (outer, n, inner) = split_axis(&shape, axis);
        let mut out_shape = shape.clone();
        out_shape[axis] = len;
        let mut y = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * n + start) * inner;
            y.extend_from_slice(&x.data()[base..base + len * inner]);
        }
        let out = Tensor::new(&out_shape, y)?;
        Ok(self.tape().push_op(out, &[self], move |g, _| {
            let mut dx = vec![0.0; outer * n * inner];
            for o in 0..outer {
                let base = (o * n + start) * inner;
                dx[base..base + len * inner].copy_from_slice(&g[o * len * inner..(o + 1) * len * inner]);
            }
            vec![Some(dx)]
        }))
    }

    /// Pads the last axis.
    pub fn pad_last(self, left: usize, right: usize, mode: PadMode) -> Result<Var<'t>> {
        let x = self.value();
        let shape = x.shape().to_vec();
        let Some(&t) = shape.last() else { bail!(Shape, "cannot pad a rank-0 tensor") };
        if t == 0 {
            bail!(Shape, "cannot pad an empty axis");
        }
        let rows = x.numel() / t;
        let tp = t + left + right;
        let src: Vec<Option<usize>> =
            (0..tp).map(|i| pad_source(i as isize - left as isize, t, mode)).collect();
        let mut y = vec![0.0; rows * tp];
        for r in 0..rows {
            let xr = &x.data()[r * t..(r + 1) * t];
            for (o, s) in src.iter().enumerate() {
                if let Some(s) = s {
                    y[r * tp + o] = xr[*s];
                }
            }
        }
        let mut out_shape = shape;
        *out_shape.last_mut().unwrap() = tp;
        let out = Tensor::new(&out_shape, y)?;
        Ok(self.tape().push_op(out, &[self], move |g, _| {
            let mut dx = vec![0.0; rows * t];
            for r in 0..rows {
                for (o, s) in src.iter().enumerate() {
                    if let Some(s) = s {
                        dx[r * t + s] += g[r * tp + o];
                    }
                }
            }
            vec![Some(dx)]
        }))
    }

    /// Overlapping windows of the last axis: `[.., T] -> [.., frames, size]`
    /// with `frames = (T - size) / hop + 1`.
    pub fn frame(self, size: usize, hop: usize) -> Result<Var<'t>> {
        let x = self.value();
        let shape = x.shape().to_vec();
        let t = *shape.last().unwrap_or(&0);
        if hop == 0 || size == 0 || t < size {
            bail!(Shape, "cannot frame length {t} with size {size}, hop {hop}");
        }
        let rows = x.numel() / t;
        let frames = (t - size) / hop + 1;
        let mut y = Vec::with_capacity(rows * frames * size);
        for r in 0..rows {
            for f in 0..frames {
                let s = r * t + f * hop;
                y.extend_from_slice(&x.data()[s..s + size]);
            }
        }
        let mut out_shape = shape[..shape.len() - 1].to_vec();
        out_shape.extend([frames, size]);
        let out = Tensor::new(&out_shape, y)?;
        Ok(self.tape().push_op(out, &[self], move |g, _| {
            let mut dx = vec![0.0; rows * t];
            for r in 0..rows {
                for f in 0..frames {
                    let s = r * t + f * hop;
                    let gs = (r * frames + f) * size;
                    dx[s..s + size].iter_mut().zip(&g[gs..gs + size]).for_each(|(d, g)| *d += g);
                }
            }
            vec![Some(dx)]
        }))
    }

    /// `[M, K] x [K, N] -> [M, N]`.
    pub fn matmul(self, other: Var<'t>) -> Result<Var<'t>> {
        let (a, b) = (self.value(), other.value());
        let (sa, sb) = (a.shape(), b.shape());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            bail!(Shape, "matmul: incompatible shapes {sa:?} and {sb:?}");
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut y = vec![0.0; m * n];
        gemm(m, k, n, 1.0, a.data(), rm(k), b.data(), rm(n), 0.0, &mut y, rm(n));
        let out = Tensor::new(&[m, n], y)?;
        Ok(self.tape().push_op(out, &[self, other], move |g, mask| {
            let ga = mask[0].then(|| {
                let mut d = vec![0.0; m * k];
                gemm(m, n, k, 1.0, g, rm(n), b.data(), tr(n), 0.0, &mut d, rm(k));
                d
            });
            let gb = mask[1].then(|| {
                let mut d = vec![0.0; k * n];
                gemm(k, m, n, 1.0, a.data(), tr(k), g, rm(n), 0.0, &mut d, rm(n));
                d
            });
            vec![ga, gb]
        }))
    }

    /// Row gather from a `[K, D]` table.
    pub fn index_select(self, indices: &[usize]) -> Result<Var<'t>> {
        let x = self.value();
        let s = x.shape();
        if s.len() != 2 {
            bail!(Shape, "index_select expects a 2-D table, got {s:?}");
        }
        let (k, d) = (s[0], s[1]);
        if let Some(i) = indices.iter().find(|&&i| i >= k) {
            bail!(Contract, "index {i} out of range for {k} rows");
        }
        let mut y = Vec::with_capacity(indices.len() * d);
        for &i in indices {
            y.extend_from_slice(&x.data()[i * d..(i + 1) * d]);
        }
        let idx = indices.to_vec();
        let out = Tensor::new(&[indices.len(), d], y)?;
        Ok(self.tape().push_op(out, &[self], move |g, _| {
            let mut dx = vec![0.0; k * d];
            for (r, &i) in idx.iter().enumerate() {
                dx[i * d..(i + 1) * d].iter_mut().zip(&g[r * d..(r + 1) * d]).for_each(|(a, b)| *a += b);
            }
            vec![Some(dx)]
        }))
    }

    /// Magnitude of complex rows stored as `[re_0..re_{F-1}, im_0..im_{F-1}]`.
    /// Gradient is taken as zero where the magnitude vanishes.
    pub fn complex_magnitude(self) -> Result<Var<'t>> {
        let x = self.value();
        let s = x.shape().to_vec();
        let w = *s.last().unwrap_or(&0);
        if w == 0 || w % 2 != 0 {
            bail!(Shape, "complex_magnitude needs an even last axis, got {s:?}");
        }
        let f = w / 2;
        let rows = x.numel() / w;
        let mut y = vec![0.0; rows * f];
        for r in 0..rows {
            let row = &x.data()[r * w..(r + 1) * w];
            for j in 0..f {
                y[r * f + j] = row[j].hypot(row[f + j]);
            }
        }
        let mags = Rc::new(y.clone());
        let mut out_shape = s;
        *out_shape.last_mut().unwrap() = f;
        let out = Tensor::new(&out_shape, y)?;
        Ok(self.tape().push_op(out, &[self], move |g, _| {
            let mut dx = vec![0.0; rows * w];
            for r in 0..rows {
                let row = &x.data()[r * w..(r + 1) * w];
                for j in 0..f {
                    let m = mags[r * f + j];
                    if m > 0.0 {
                        let gm = g[r * f + j] / m;
                        dx[r * w + j] = gm * row[j];
                        dx[r * w + f + j] = gm * row[f + j];
                    }
                }
            }
            vec![Some(dx)]
        }))
    }
}

pub(crate) fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}
