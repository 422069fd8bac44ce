//! Central finite-difference checks of tape gradients.
//!
//! The scalar probed is `L = Σ r ⊙ f(inputs)` for a fixed random weighting
//! `r`, evaluated in float64 from the float32 outputs. Errors are reported as
//! `max_i |analytic_i - numeric_i| / max(max_i |analytic_i|, max_i |numeric_i|)`.
//!
//! Rectifier masks from the unperturbed pass are replayed in every perturbed
//! evaluation, so the difference quotient is taken on the same linear piece
//! the analytic gradient describes.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autograd::{Tape, Var};
use crate::error::Result;
use crate::numeric::dot_f64;
use crate::tensor::Tensor;

pub const DEFAULT_EPS: f32 = 1e-3;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Number of scalar derivatives compared.
    pub checked: usize,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_error < tol
    }
}

fn normwise(analytic: &[f64], numeric: &[f64]) -> f64 {
    let scale = analytic.iter().chain(numeric).fold(0.0f64, |m, x| m.max(x.abs()));
    if scale == 0.0 {
        return 0.0;
    }
    analytic
        .iter()
        .zip(numeric)
        .fold(0.0f64, |m, (a, n)| m.max((a - n).abs()))
        / scale
}

fn probe_weights(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x005e_ed0f_c0de);
    Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
}

/// Check every element of every input against central differences.
///
/// `build` records the operation under test and returns its output node.
pub fn check_inputs<F>(inputs: &[Tensor], eps: f32, seed: u64, build: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    tape.record_relu_masks();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let out = build(&mut tape, &vars)?;
    let masks = tape.take_relu_masks();

    let eval = |values: &[Tensor]| -> Result<Tensor> {
        let mut tape = Tape::new();
        tape.replay_relu_masks(masks.clone());
        let vars: Vec<Var> = values.iter().map(|t| tape.constant(t.clone())).collect();
        let out = build(&mut tape, &vars)?;
        Ok(tape.value(out).clone())
    };

    let r = probe_weights(tape.value(out).shape(), seed);
    let rv = tape.constant(r.clone());
    let weighted = tape.mul(out, rv)?;
    let loss = tape.sum(weighted);
    tape.backward(loss)?;

    let mut analytic = Vec::new();
    let mut numeric = Vec::new();
    let mut values: Vec<Tensor> = inputs.to_vec();
    for (i, var) in vars.iter().enumerate() {
        let grad = tape
            .grad(*var)
            .map(<[f32]>::to_vec)
            .unwrap_or_else(|| vec![0.0; inputs[i].len()]);
        for (j, &g) in grad.iter().enumerate() {
            let orig = values[i].data()[j];
            values[i].data_mut()[j] = orig + eps;
            let plus = dot_f64(eval(&values)?.data(), r.data());
            values[i].data_mut()[j] = orig - eps;
            let minus = dot_f64(eval(&values)?.data(), r.data());
            values[i].data_mut()[j] = orig;
            let step = (orig + eps) as f64 - (orig - eps) as f64;
            numeric.push((plus - minus) / step);
            analytic.push(g as f64);
        }
    }
    Ok(GradCheckReport {
        max_rel_error: normwise(&analytic, &numeric),
        checked: analytic.len(),
    })
}

/// Directional check: compares `<∇L, d>` with `(L(x+εd) - L(x-εd)) / 2ε` for
/// `directions` random directions `d ~ U(-1, 1)` over all inputs jointly.
///
/// `loss` builds a scalar on the tape; it is called once per evaluation and
/// may carry mutable state (e.g. batch-norm statistics) that it must reset itself.
pub fn check_directional<F>(
    inputs: &[Tensor],
    eps: f32,
    directions: usize,
    seed: u64,
    mut loss: F,
) -> Result<GradCheckReport>
where
    F: FnMut(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    tape.record_relu_masks();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let l = loss(&mut tape, &vars)?;
    let masks = tape.take_relu_masks();
    tape.backward(l)?;
    let grads: Vec<Vec<f32>> = vars
        .iter()
        .zip(inputs)
        .map(|(v, t)| tape.grad(*v).map(<[f32]>::to_vec).unwrap_or_else(|| vec![0.0; t.len()]))
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut analytic = Vec::with_capacity(directions);
    let mut numeric = Vec::with_capacity(directions);
    for _ in 0..directions {
        let dirs: Vec<Vec<f32>> = inputs
            .iter()
            .map(|t| (0..t.len()).map(|_| rng.gen_range(-1.0f32..1.0)).collect())
            .collect();
        let mut eval = |sign: f32| -> Result<f64> {
            let shifted: Vec<Tensor> = inputs
                .iter()
                .zip(&dirs)
                .map(|(t, d)| {
                    let data = t.data().iter().zip(d).map(|(x, dx)| x + sign * eps * dx).collect();
                    Tensor::new(t.shape(), data).expect("same shape")
                })
                .collect();
            let mut tape = Tape::new();
            tape.replay_relu_masks(masks.clone());
            let vars: Vec<Var> = shifted.into_iter().map(|t| tape.constant(t)).collect();
            let l = loss(&mut tape, &vars)?;
            Ok(tape.value(l).data()[0] as f64)
        };
        let plus = eval(1.0)?;
        let minus = eval(-1.0)?;
        numeric.push((plus - minus) / (2.0 * eps as f64));
        analytic.push(grads.iter().zip(&dirs).map(|(g, d)| dot_f64(g, d)).sum::<f64>());
    }
    let worst = analytic
        .iter()
        .zip(&numeric)
        .map(|(a, n)| crate::numeric::rel_diff(*a, *n))
        .fold(0.0f64, f64::max);
    Ok(GradCheckReport {
        max_rel_error: worst,
        checked: directions,
    })
}
