//! Central-difference gradient verification for tape computations.

use super::{Tape, Tensor, Var};
use crate::error::{Error, Result};

pub const DEFAULT_EPS: f64 = 1e-5;

/// Compares the tape gradient of a scalar function against central
/// differences `(f(x + eps) - f(x - eps)) / 2eps` at every entry of `at`.
///
/// Returns `max |analytic - numeric| / max(1, |numeric|)`.
pub fn finite_diff_check<F>(f: F, at: &Tensor, eps: f64) -> Result<f64>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    let errs = finite_diff_check_inputs(|tape, vars| f(tape, vars[0]), std::slice::from_ref(at), eps)?;
    Ok(errs[0])
}

/// Multi-input variant: one max relative error per input tensor.
pub fn finite_diff_check_inputs<F>(f: F, inputs: &[Tensor], eps: f64) -> Result<Vec<f64>>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    if !(eps > 0.0) {
        return Err(Error::Domain(format!("finite-difference step must be positive, got {eps}")));
    }
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let root = f(&mut tape, &vars)?;
    let loss = tape.value(root).item();
    if !loss.is_finite() {
        return Err(Error::NonFinite("finite_diff_check"));
    }
    tape.backward(root)?;
    let analytic: Vec<Tensor> = vars.iter().map(|v| tape.grad(*v).clone()).collect();

    let eval = |perturbed: &[Tensor]| -> Result<f64> {
        let mut t = Tape::new();
        let vs: Vec<Var> = perturbed.iter().map(|x| t.leaf(x.clone())).collect();
        let r = f(&mut t, &vs)?;
        let v = t.value(r).item();
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::NonFinite("finite_diff_check"))
        }
    };

    let mut work: Vec<Tensor> = inputs.to_vec();
    let mut out = Vec::with_capacity(inputs.len());
    for (which, grad) in analytic.iter().enumerate() {
        let mut worst = 0.0f64;
        for k in 0..grad.data().len() {
            let orig = work[which].data()[k];
            work[which].data_mut()[k] = orig + eps;
            let plus = eval(&work)?;
            work[which].data_mut()[k] = orig - eps;
            let minus = eval(&work)?;
            work[which].data_mut()[k] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            let err = (grad.data()[k] - numeric).abs() / numeric.abs().max(1.0);
            worst = worst.max(err);
        }
        out.push(worst);
    }
    Ok(out)
}
