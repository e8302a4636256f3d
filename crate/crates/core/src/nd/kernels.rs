//! Register-blocked stride-1 correlation used by the 1-D convolutions.

const TB: usize = 8;

/// Rows of `x` have length `lx`; `w` is `[cout, cin, k]`. Accumulates
/// `y[co, t] += sum_{ci, kk} w[co, ci, kk] * x[ci, t + kk * d]` for `t < out`.
pub(crate) struct Corr<'a> {
    pub x: &'a [f64],
    pub lx: usize,
    pub w: &'a [f64],
    pub cin: usize,
    pub k: usize,
    pub d: usize,
    pub out: usize,
}

#[inline(always)]
fn block<const CB: usize>(c: &Corr<'_>, wt: &[f64], cout: usize, co0: usize, y: &mut [f64]) {
    let (cin, k, out) = (c.cin, c.k, c.out);
    let taps = cin * k;
    let mut t0 = 0;
    while t0 + TB <= out {
        let mut acc = [[0.0f64; TB]; CB];
        let mut tap = 0;
        for ci in 0..cin {
            for kk in 0..k {
            let base = ci * c.lx + kk * c.d + t0;
            let xv: [f64; TB] = c.x[base..base + TB].try_into().unwrap();
            let wv: [f64; CB] = wt[tap * cout + co0..tap * cout + co0 + CB].try_into().unwrap();
            for j in 0..CB {
                for i in 0..TB {
                    acc[j][i] += wv[j] * xv[i];
                }
            }
            tap += 1;
            }
        }
        for (j, a) in acc.iter().enumerate() {
            let row = &mut y[(co0 + j) * out + t0..(co0 + j) * out + t0 + TB];
            for i in 0..TB {
                row[i] += a[i];
            }
        }
        t0 += TB;
    }
    for t in t0..out {
        for j in 0..CB {
            let mut s = 0.0;
            for tap in 0..taps {
                let (ci, kk) = (tap / k, tap % k);
                s += wt[tap * cout + co0 + j] * c.x[ci * c.lx + kk * c.d + t];
            }
            y[(co0 + j) * out + t] += s;
        }
    }
}

#[inline(always)]
fn correlate_body(c: &Corr<'_>, cout: usize, y: &mut [f64]) {
    // taps-major weights so each block reads its output channels contiguously
    let taps = c.cin * c.k;
    let mut wt = vec![0.0; taps * cout];
    for co in 0..cout {
        for tap in 0..taps {
            wt[tap * cout + co] = c.w[co * taps + tap];
        }
    }
    let mut co = 0;
    while co + 4 <= cout {
        block::<4>(c, &wt, cout, co, y);
        co += 4;
    }
    while co < cout {
        block::<1>(c, &wt, cout, co, y);
        co += 1;
    }
}

#[inline(always)]
fn weight_grad_block<const CB: usize>(c: &Corr<'_>, g: &[f64], co0: usize, dw: &mut [f64]) {
    let (cin, k, out) = (c.cin, c.k, c.out);
    let whole = out / TB * TB;
    for ci in 0..cin {
        for kk in 0..k {
            let base = ci * c.lx + kk * c.d;
            let mut acc = [[0.0f64; TB]; CB];
            let mut t0 = 0;
            while t0 < whole {
                let xv: [f64; TB] = c.x[base + t0..base + t0 + TB].try_into().unwrap();
                for (j, a) in acc.iter_mut().enumerate() {
                    let gv: &[f64; TB] = g[(co0 + j) * out + t0..(co0 + j) * out + t0 + TB].try_into().unwrap();
                    for i in 0..TB {
                        a[i] += gv[i] * xv[i];
                    }
                }
                t0 += TB;
            }
            for (j, a) in acc.iter().enumerate() {
                let mut s: f64 = a.iter().sum();
                for t in whole..out {
                    s += g[(co0 + j) * out + t] * c.x[base + t];
                }
                dw[((co0 + j) * cin + ci) * k + kk] += s;
            }
        }
    }
}

/// `dw[co, ci, kk] += sum_t g[co, t] * x[ci, t + kk * d]`.
#[inline(always)]
fn weight_grad_body(c: &Corr<'_>, g: &[f64], cout: usize, dw: &mut [f64]) {
    let mut co = 0;
    while co + 4 <= cout {
        weight_grad_block::<4>(c, g, co, dw);
        co += 4;
    }
    while co < cout {
        weight_grad_block::<1>(c, g, co, dw);
        co += 1;
    }
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2,fma")]
unsafe fn correlate_fma(c: &Corr<'_>, cout: usize, y: &mut [f64]) {
    correlate_body(c, cout, y)
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2,fma")]
unsafe fn weight_grad_fma(c: &Corr<'_>, g: &[f64], cout: usize, dw: &mut [f64]) {
    weight_grad_body(c, g, cout, dw)
}

fn has_fma() -> bool {
    #[cfg(target_arch = "x86_64")]
    {
        use std::sync::OnceLock;
        static FMA: OnceLock<bool> = OnceLock::new();
        *FMA.get_or_init(|| is_x86_feature_detected!("avx2") && is_x86_feature_detected!("fma"))
    }
    #[cfg(not(target_arch = "x86_64"))]
    false
}

pub(crate) fn correlate(c: &Corr<'_>, cout: usize, y: &mut [f64]) {
    debug_assert!(y.len() >= cout * c.out);
    #[cfg(target_arch = "x86_64")]
    if has_fma() {
        // SAFETY: the CPU supports the enabled features.
        return unsafe { correlate_fma(c, cout, y) };
    }
    correlate_body(c, cout, y)
}

pub(crate) fn weight_grad(c: &Corr<'_>, g: &[f64], cout: usize, dw: &mut [f64]) {
    #[cfg(target_arch = "x86_64")]
    if has_fma() {
        // SAFETY: the CPU supports the enabled features.
        return unsafe { weight_grad_fma(c, g, cout, dw) };
    }
    weight_grad_body(c, g, cout, dw)
}
