use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Tape, Tensor, Var};
use crate::error::Result;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub max_abs_err: f64,
    pub checked: usize,
    pub pass: bool,
}

/// Central finite-difference comparison against the tape's gradients.
///
/// The relative error of each coordinate is `|a - n| / max(|a|, |n|, floor)`.
/// With a unit-scale loss and `step = 1e-5`, rounding alone puts about
/// `1e-11` of noise on each difference quotient; the `1e-6` floor keeps
/// that noise under `1e-4` on near-zero gradient entries.
#[derive(Clone, Debug)]
pub struct GradCheck {
    pub tol: f64,
    pub step: f64,
    pub floor: f64,
    /// Check at most this many coordinates per input, sampled without replacement.
    pub max_coords: Option<usize>,
    pub seed: u64,
    /// On a mismatch, re-estimate with `step / 10` and keep the smaller
    /// error. A kink of ReLU-like ops inside the stencil spoils the wide
    /// estimate but not the narrow one, while a wrong gradient fails both.
    pub kink_retry: bool,
}

impl GradCheck {
    pub fn new(tol: f64) -> Self {
        Self { tol, step: 1e-5, floor: 1e-6, max_coords: None, seed: 0, kink_retry: false }
    }

    pub fn max_coords(mut self, n: usize) -> Self {
        self.max_coords = Some(n);
        self
    }

    pub fn run<F>(&self, f: F, inputs: &[Tensor]) -> Result<GradCheckReport>
    where
        F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>>,
    {
        self.run_against(&f, &f, inputs)
    }

    /// Compares the tape gradients of `f` with finite differences of
    /// `reference`. Graphs containing stop-gradients differentiate the
    /// function with the detached values frozen at the base point; such a
    /// frozen surrogate is what `reference` should compute.
    pub fn run_against<F, G>(&self, f: F, reference: G, inputs: &[Tensor]) -> Result<GradCheckReport>
    where
        F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>>,
        G: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>>,
    {
        let analytic = {
            let tape = Tape::new();
            let vars: Vec<Var> = inputs.iter().map(|t| tape.var(t.clone())).collect();
            let loss = f(&tape, &vars)?;
            tape.backward(loss)?;
            vars.iter().map(|v| v.grad().expect("leaf")).collect::<Vec<_>>()
        };
        let eval = |xs: &[Tensor]| -> Result<f64> {
            let tape = Tape::new();
            let vars: Vec<Var> = xs.iter().map(|t| tape.constant(t.clone())).collect();
            Ok(reference(&tape, &vars)?.item())
        };
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut work = inputs.to_vec();
        let (mut max_rel, mut max_abs, mut checked) = (0.0f64, 0.0f64, 0);
        for (i, input) in inputs.iter().enumerate() {
            let n = input.numel();
            let coords: Vec<usize> = match self.max_coords {
                Some(m) if m < n => sample(&mut rng, n, m).into_vec(),
                _ => (0..n).collect(),
            };
            for c in coords {
                let orig = input.data()[c];
                let a = analytic[i].data()[c];
                let mut central = |h: f64| -> Result<(f64, f64)> {
                    work[i].data_mut()[c] = orig + h;
                    let plus = eval(&work)?;
                    work[i].data_mut()[c] = orig - h;
                    let minus = eval(&work)?;
                    work[i].data_mut()[c] = orig;
                    let numeric = (plus - minus) / (2.0 * h);
                    let abs = (a - numeric).abs();
                    Ok((abs, abs / a.abs().max(numeric.abs()).max(self.floor)))
                };
                let (mut abs, mut rel) = central(self.step)?;
                if self.kink_retry && !(rel <= self.tol) {
                    let (abs2, rel2) = central(self.step / 10.0)?;
                    if rel2 < rel {
                        (abs, rel) = (abs2, rel2);
                    }
                }
                max_abs = max_abs.max(abs);
                max_rel = max_rel.max(if rel.is_nan() { f64::INFINITY } else { rel });
                checked += 1;
            }
        }
        Ok(GradCheckReport { max_rel_err: max_rel, max_abs_err: max_abs, checked, pass: max_rel <= self.tol })
    }
}

/// Full finite-difference check of every coordinate.
pub fn grad_check<F>(f: F, inputs: &[Tensor], tol: f64) -> Result<GradCheckReport>
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>>,
{
    GradCheck::new(tol).run(f, inputs)
}
