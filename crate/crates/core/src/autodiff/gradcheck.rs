//! Central finite-difference comparison against the reverse sweep.

use super::{Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const DEFAULT_STEP: f64 = 1e-5;

/// Compares analytic gradients of the scalar function `f` with central
/// differences at `inputs`.
///
/// Returns the largest `|analytic - numeric| / max(1, |numeric|)` over every
/// coordinate of every input.
pub fn finite_diff_check<F>(f: F, inputs: &[Tensor], step: f64) -> Result<f64>
where
    F: for<'g> Fn(&'g Graph, &[Var<'g>]) -> Result<Var<'g>>,
{
    if step <= 0.0 {
        return Err(Error::Usage(format!("finite-difference step must be > 0, got {step}")));
    }

    let analytic: Vec<Tensor> = {
        let g = Graph::new();
        let vars: Vec<Var<'_>> = inputs.iter().map(|t| g.leaf(t.clone())).collect();
        let out = f(&g, &vars)?;
        let value = out.value();
        if !value.is_finite() {
            return Err(Error::NonFinite("function value at the base point".into()));
        }
        let grads = g.backward(out)?;
        vars.iter().map(|&v| grads.wrt(v).clone()).collect()
    };

    let eval = |point: &[Tensor]| -> Result<f64> {
        let g = Graph::new();
        let vars: Vec<Var<'_>> = point.iter().map(|t| g.constant(t.clone())).collect();
        f(&g, &vars).map(|v| v.item())
    };

    let mut point = inputs.to_vec();
    let mut worst = 0.0f64;
    for (k, grad) in analytic.iter().enumerate() {
        for i in 0..point[k].numel() {
            let orig = point[k].data()[i];
            point[k].data_mut()[i] = orig + step;
            let up = eval(&point)?;
            point[k].data_mut()[i] = orig - step;
            let down = eval(&point)?;
            point[k].data_mut()[i] = orig;
            if !up.is_finite() || !down.is_finite() {
                return Err(Error::NonFinite(format!(
                    "function value at input {k}, coordinate {i} +/- {step}"
                )));
            }
            let numeric = (up - down) / (2.0 * step);
            let err = (grad.data()[i] - numeric).abs() / numeric.abs().max(1.0);
            worst = worst.max(err);
        }
    }
    Ok(worst)
}
