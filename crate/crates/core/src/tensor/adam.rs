use super::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Moment estimates for Adam, one pair of accumulators per parameter tensor.
#[derive(Debug, Clone)]
pub struct AdamState<T: Scalar> {
    pub step_count: u64,
    pub beta1: T,
    pub beta2: T,
    pub epsilon: T,
    first_moment: Vec<Tensor<T>>,
    second_moment: Vec<Tensor<T>>,
}

impl<T: Scalar> AdamState<T> {
    pub fn new<'a>(params: impl IntoIterator<Item = &'a Tensor<T>>) -> Self {
        Self::with_hyper(params, T::of(0.9), T::of(0.999), T::of(1e-8))
    }

    pub fn with_hyper<'a>(
        params: impl IntoIterator<Item = &'a Tensor<T>>,
        beta1: T,
        beta2: T,
        epsilon: T,
    ) -> Self {
        let first_moment: Vec<_> = params
            .into_iter()
            .map(|p| Tensor::zeros(p.shape()))
            .collect();
        AdamState {
            step_count: 0,
            beta1,
            beta2,
            epsilon,
            second_moment: first_moment.clone(),
            first_moment,
        }
    }

    pub fn first_moment(&self) -> &[Tensor<T>] {
        &self.first_moment
    }

    pub fn second_moment(&self) -> &[Tensor<T>] {
        &self.second_moment
    }
}

/// One bias-corrected Adam update, applied in place.
///
/// A non-finite gradient aborts the step before any parameter is touched.
pub fn adam_step<T: Scalar>(
    params: &mut [Tensor<T>],
    grads: &[Tensor<T>],
    state: &mut AdamState<T>,
    learning_rate: T,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.first_moment.len() {
        return Err(Error::shape(
            "adam",
            format!(
                "{} params, {} grads, {} moment slots",
                params.len(),
                grads.len(),
                state.first_moment.len()
            ),
        ));
    }
    if !(learning_rate >= T::zero()) {
        return Err(Error::Config(format!(
            "learning rate must be non-negative, got {learning_rate}"
        )));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.shape() != g.shape() || p.shape() != state.first_moment[i].shape() {
            return Err(Error::shape(
                "adam",
                format!("parameter {i}: {} vs gradient {}", p.shape(), g.shape()),
            ));
        }
        if !g.is_finite() {
            return Err(Error::NonFinite {
                op: format!("adam gradient for parameter {i}"),
            });
        }
    }

    state.step_count += 1;
    let t = state.step_count as i32;
    let (b1, b2, eps) = (state.beta1, state.beta2, state.epsilon);
    let correction1 = T::one() - b1.powi(t);
    let correction2 = T::one() - b2.powi(t);
    for ((p, g), (m, v)) in params
        .iter_mut()
        .zip(grads)
        .zip(state.first_moment.iter_mut().zip(state.second_moment.iter_mut()))
    {
        let iter = p
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .zip(m.data_mut().iter_mut().zip(v.data_mut().iter_mut()));
        for ((w, &gi), (mi, vi)) in iter {
            *mi = b1 * *mi + (T::one() - b1) * gi;
            *vi = b2 * *vi + (T::one() - b2) * gi * gi;
            let m_hat = *mi / correction1;
            let v_hat = *vi / correction2;
            *w -= learning_rate * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}
