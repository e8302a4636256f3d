use super::linalg::{gemm, rm, tr};
use super::ops::sigmoid;
use super::{Tensor, Var};
use crate::error::{bail, Result};

/// Weights of one LSTM layer, gate order `i, f, g, o`.
#[derive(Clone, Copy, Debug)]
pub struct LstmWeights<'t> {
    /// `[4H, D]`
    pub w_ih: Var<'t>,
    /// `[4H, H]`
    pub w_hh: Var<'t>,
    /// `[4H]`
    pub b_ih: Var<'t>,
    /// `[4H]`
    pub b_hh: Var<'t>,
}

impl<'t> Var<'t> {
    /// Unidirectional LSTM layer over `[B, T, D]` with zero initial state,
    /// returning the hidden sequence `[B, T, H]`.
    pub fn lstm_layer(self, p: LstmWeights<'t>) -> Result<Var<'t>> {
        let x = self.value();
        let (wih, whh, bih, bhh) = (p.w_ih.value(), p.w_hh.value(), p.b_ih.value(), p.b_hh.value());
        let xs = x.shape();
        if xs.len() != 3 {
            bail!(Shape, "lstm expects [B,T,D] input, got {xs:?}");
        }
        let (batch, steps, d) = (xs[0], xs[1], xs[2]);
        let g4 = wih.shape()[0];
        if g4 % 4 != 0 || wih.shape() != [g4, d] {
            bail!(Shape, "lstm: w_ih shape {:?} incompatible with input width {d}", wih.shape());
        }
        let h = g4 / 4;
        if whh.shape() != [g4, h] || bih.shape() != [g4] || bhh.shape() != [g4] {
            bail!(Shape, "lstm: recurrent weight or bias shapes do not match hidden size {h}");
        }
        let rows = batch * steps;
        let mut z = vec![0.0; rows * g4];
        gemm(rows, d, g4, 1.0, x.data(), rm(d), wih.data(), tr(d), 0.0, &mut z, rm(g4));
        for r in 0..rows {
            for j in 0..g4 {
                z[r * g4 + j] += bih.data()[j] + bhh.data()[j];
            }
        }
        let mut hs = vec![0.0; rows * h];
        let mut cs = vec![0.0; rows * h];
        // z is overwritten in place with the gate activations
        for t in 0..steps {
            if t > 0 {
                let (prev, cur) = (&hs[(t - 1) * h..], &mut z[t * g4..]);
                gemm(batch, h, g4, 1.0, prev, (steps as isize * h as isize, 1), whh.data(), tr(h), 1.0, cur, (steps as isize * g4 as isize, 1));
            }
            for b in 0..batch {
                let r = b * steps + t;
                let zr = &mut z[r * g4..(r + 1) * g4];
                for j in 0..h {
                    zr[j] = sigmoid(zr[j]);
                    zr[h + j] = sigmoid(zr[h + j]);
                    zr[2 * h + j] = zr[2 * h + j].tanh();
                    zr[3 * h + j] = sigmoid(zr[3 * h + j]);
                    let c_prev = if t > 0 { cs[(r - 1) * h + j] } else { 0.0 };
                    let c = zr[h + j] * c_prev + zr[j] * zr[2 * h + j];
                    cs[r * h + j] = c;
                    hs[r * h + j] = zr[3 * h + j] * c.tanh();
                }
            }
        }
        let out = Tensor::new(&[batch, steps, h], hs.clone())?;
        let inputs = [self, p.w_ih, p.w_hh, p.b_ih, p.b_hh];
        Ok(self.tape().push_op(out, &inputs, move |g, mask| {
            let mut dz = vec![0.0; rows * g4];
            let mut dh_next = vec![0.0; batch * h];
            let mut dc_next = vec![0.0; batch * h];
            let mut dwhh = vec![0.0; g4 * h];
            for t in (0..steps).rev() {
                for b in 0..batch {
                    let r = b * steps + t;
                    let a = &z[r * g4..(r + 1) * g4];
                    let dzr = &mut dz[r * g4..(r + 1) * g4];
                    for j in 0..h {
                        let (i, f, gg, o) = (a[j], a[h + j], a[2 * h + j], a[3 * h + j]);
                        let c = cs[r * h + j];
                        let c_prev = if t > 0 { cs[(r - 1) * h + j] } else { 0.0 };
                        let tc = c.tanh();
                        let dh = g[r * h + j] + dh_next[b * h + j];
                        let dc = dh * o * (1.0 - tc * tc) + dc_next[b * h + j];
                        dzr[j] = dc * gg * i * (1.0 - i);
                        dzr[h + j] = dc * c_prev * f * (1.0 - f);
                        dzr[2 * h + j] = dc * i * (1.0 - gg * gg);
                        dzr[3 * h + j] = dh * tc * o * (1.0 - o);
                        dc_next[b * h + j] = dc * f;
                    }
                }
                let zs = (steps as isize * g4 as isize, 1);
                gemm(batch, g4, h, 1.0, &dz[t * g4..], zs, whh.data(), rm(h), 0.0, &mut dh_next, rm(h));
                if t > 0 && mask[2] {
                    let hp = &hs[(t - 1) * h..];
                    gemm(g4, batch, h, 1.0, &dz[t * g4..], (1, steps as isize * g4 as isize), hp, (steps as isize * h as isize, 1), 1.0, &mut dwhh, rm(h));
                }
            }
            let dx = mask[0].then(|| {
                let mut dx = vec![0.0; rows * d];
                gemm(rows, g4, d, 1.0, &dz, rm(g4), wih.data(), rm(d), 0.0, &mut dx, rm(d));
                dx
            });
            let dwih = mask[1].then(|| {
                let mut dw = vec![0.0; g4 * d];
                gemm(g4, rows, d, 1.0, &dz, tr(g4), x.data(), rm(d), 0.0, &mut dw, rm(d));
                dw
            });
            let db = (mask[3] || mask[4]).then(|| {
                let mut db = vec![0.0; g4];
                for r in 0..rows {
                    db.iter_mut().zip(&dz[r * g4..(r + 1) * g4]).for_each(|(a, b)| *a += b);
                }
                db
            });
            vec![dx, dwih, mask[2].then_some(dwhh), db.clone().filter(|_| mask[3]), db.filter(|_| mask[4])]
        }))
    }
}
