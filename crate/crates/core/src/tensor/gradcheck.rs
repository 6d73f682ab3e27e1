//! Central finite-difference verification of the tape's gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Graph, Tensor, Var};
use crate::error::Result;

/// Denominator floor for [`relative_error`]; below it errors are absolute.
const REL_FLOOR: f64 = 1e-3;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    /// Coordinates compared.
    pub checked: usize,
    /// Coordinates whose ±ε perturbation changed a ReLU mask, max winner or
    /// clamp state, where the function is not differentiable.
    pub kinks_skipped: usize,
}

/// Compares the tape's gradient of the scalar built by `f` against central
/// differences at step `eps`, over every coordinate of every input.
pub fn grad_check<F>(f: F, inputs: &[Tensor<f64>], eps: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let eval = |values: &[Tensor<f64>]| -> Result<(f64, u64)> {
        let mut g = Graph::new();
        let vars: Vec<Var> = values.iter().map(|t| g.param(t.clone())).collect();
        let out = f(&mut g, &vars)?;
        Ok((g.value(out).data()[0], g.signature()))
    };

    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let out = f(&mut g, &vars)?;
    let base_sig = g.signature();
    g.backward(out)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .map(|&v| g.grad(v).map(<[f64]>::to_vec).unwrap_or_default())
        .collect();

    let mut report = GradCheckReport::default();
    let mut work = inputs.to_vec();
    for (i, (input, analytic)) in inputs.iter().zip(&analytic).enumerate() {
        for (j, &x0) in input.data().iter().enumerate() {
            work[i].data_mut()[j] = x0 + eps;
            let (plus, sig_plus) = eval(&work)?;
            work[i].data_mut()[j] = x0 - eps;
            let (minus, sig_minus) = eval(&work)?;
            work[i].data_mut()[j] = x0;
            if sig_plus != base_sig || sig_minus != base_sig {
                report.kinks_skipped += 1;
                continue;
            }
            let numeric = (plus - minus) / (2.0 * eps);
            let err = relative_error(analytic[j], numeric);
            report.max_relative_error = report.max_relative_error.max(err);
            report.checked += 1;
        }
    }
    Ok(report)
}

/// [`grad_check`] on inputs of the given shapes drawn uniformly from
/// `[-1, 1)` with a seeded generator.
pub fn grad_check_random<F>(f: F, shapes: &[&[usize]], seed: u64, eps: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let inputs = shapes
        .iter()
        .map(|s| {
            let n = s.iter().product();
            Tensor::new(s, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect())
        })
        .collect::<Result<Vec<_>>>()?;
    grad_check(f, &inputs, eps)
}
