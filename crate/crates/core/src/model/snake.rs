use crate::error::{bail, Result};
use crate::nd::{Tensor, Var};

/// Guard added to `alpha` in the amplitude term.
pub const SNAKE_EPS: f64 = 1e-9;

/// `x + sin²(αx) / (α + ε)` with a learnable `α` per channel of `[B, C, T]`.
pub fn snake<'t>(x: Var<'t>, alpha: Var<'t>, eps: f64) -> Result<Var<'t>> {
    let (xv, av) = (x.value(), alpha.value());
    let s = xv.shape();
    if s.len() != 3 || av.shape() != [s[1]] {
        bail!(Shape, "snake expects [B, C, T] input and [C] alpha, got {s:?} and {:?}", av.shape());
    }
    let (b, c, t) = (s[0], s[1], s[2]);
    let track = x.requires_grad() || alpha.requires_grad();
    let mut y = vec![0.0; xv.numel()];
    // sin(αx) and sin(2αx), kept for the backward pass
    let mut trig = if track { vec![(0.0, 0.0); xv.numel()] } else { Vec::new() };
    for bi in 0..b {
        for ci in 0..c {
            let a = av.data()[ci];
            let inv = 1.0 / (a + eps);
            let base = (bi * c + ci) * t;
            for i in base..base + t {
                let v = xv.data()[i];
                let (sn, cs) = (a * v).sin_cos();
                y[i] = v + inv * sn * sn;
                if track {
                    trig[i] = (sn, 2.0 * sn * cs);
                }
            }
        }
    }
    let out = Tensor::new(s, y)?;
    Ok(x.tape().push_op(out, &[x, alpha], move |g, mask| {
        let mut dx = mask[0].then(|| vec![0.0; g.len()]);
        let mut da = mask[1].then(|| vec![0.0; c]);
        for bi in 0..b {
            for ci in 0..c {
                let a = av.data()[ci];
                let inv = 1.0 / (a + eps);
                let base = (bi * c + ci) * t;
                let mut acc = 0.0;
                for i in base..base + t {
                    let (sn, s2) = trig[i];
                    if let Some(dx) = dx.as_mut() {
                        dx[i] = g[i] * (1.0 + a * s2 * inv);
                    }
                    acc += g[i] * (xv.data()[i] * s2 * inv - sn * sn * inv * inv);
                }
                if let Some(da) = da.as_mut() {
                    da[ci] += acc;
                }
            }
        }
        vec![dx, da]
    }))
}
