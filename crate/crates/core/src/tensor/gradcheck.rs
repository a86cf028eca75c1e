//! Central finite-difference checks for the backward pass.

use super::{Tensor, Var};
use crate::error::Result;

/// Outcome of comparing analytic and numeric gradients for each input.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    /// `‖analytic − numeric‖₂ / max(‖analytic‖₂, ‖numeric‖₂)` per input tensor.
    pub relative_errors: Vec<f64>,
}

impl GradCheckReport {
    pub fn max_relative_error(&self) -> f64 {
        self.relative_errors.iter().copied().fold(0.0, f64::max)
    }
}

/// Compare [`Var::backward`] against central differences with step `step`.
///
/// `f` must build a scalar from the given trainable inputs; it is called once
/// for the analytic pass and twice per input element for the numeric pass.
pub fn check_gradients<F>(inputs: &[Tensor<f64>], step: f64, f: F) -> Result<GradCheckReport>
where
    F: Fn(&[Var<f64>]) -> Result<Var<f64>>,
{
    let vars: Vec<_> = inputs.iter().cloned().map(Var::param).collect();
    let loss = f(&vars)?;
    let grads = loss.backward()?;
    let analytic: Vec<Tensor<f64>> = vars.iter().map(|v| grads.get_or_zeros(v)).collect();

    let eval = |k: usize, idx: usize, delta: f64| -> Result<f64> {
        let probe: Vec<_> = inputs
            .iter()
            .enumerate()
            .map(|(j, t)| {
                let mut t = t.clone();
                if j == k {
                    t.data_mut()[idx] += delta;
                }
                Var::param(t)
            })
            .collect();
        Ok(f(&probe)?.value().item())
    };

    let mut relative_errors = Vec::with_capacity(inputs.len());
    for (k, input) in inputs.iter().enumerate() {
        let mut diff2 = 0.0;
        let mut a2 = 0.0;
        let mut n2 = 0.0;
        for idx in 0..input.numel() {
            let numeric = (eval(k, idx, step)? - eval(k, idx, -step)?) / (2.0 * step);
            let a = analytic[k].data()[idx];
            diff2 += (a - numeric).powi(2);
            a2 += a * a;
            n2 += numeric * numeric;
        }
        let denom = a2.sqrt().max(n2.sqrt());
        relative_errors.push(if denom == 0.0 { 0.0 } else { diff2.sqrt() / denom });
    }
    Ok(GradCheckReport { relative_errors })
}
