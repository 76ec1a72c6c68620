use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

use super::hyper::Hyperparams;

/// First and second moment estimates plus the step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
    pub t: u64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new<'a>(params: impl IntoIterator<Item = &'a Tensor<T>>) -> Self {
        let m: Vec<Tensor<T>> = params.into_iter().map(|p| Tensor::zeros(p.shape())).collect();
        Self { v: m.clone(), m, t: 0 }
    }
}

/// One bias-corrected Adam update without weight decay. Nothing is modified
/// when any gradient is non-finite.
pub fn adam_step<'a, T: Scalar>(
    params: impl IntoIterator<Item = &'a mut Tensor<T>>,
    grads: &[Tensor<T>],
    state: &mut AdamState<T>,
    hyper: &Hyperparams,
) -> Result<()> {
    let params: Vec<&mut Tensor<T>> = params.into_iter().collect();
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::Shape(format!(
            "{} parameters, {} gradients, {} optimizer slots",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.shape() != g.shape() {
            return Err(Error::Shape(format!("tensor {i}: parameter {:?} vs gradient {:?}", p.shape(), g.shape())));
        }
        if let Some(j) = g.data().iter().position(|v| !v.is_finite()) {
            return Err(Error::Divergence(format!(
                "non-finite gradient in tensor {i} at element {j} (step {})",
                state.t + 1
            )));
        }
    }
    state.t += 1;
    let b1 = T::of(hyper.adam_beta1);
    let b2 = T::of(hyper.adam_beta2);
    let one = T::one();
    let c1 = one - T::of(hyper.adam_beta1.powf(state.t as f64));
    let c2 = one - T::of(hyper.adam_beta2.powf(state.t as f64));
    let lr = T::of(hyper.learning_rate);
    let eps = T::of(hyper.adam_eps);
    for (i, p) in params.into_iter().enumerate() {
        let m = state.m[i].data_mut();
        let v = state.v[i].data_mut();
        for (((w, &g), m), v) in p.data_mut().iter_mut().zip(grads[i].data()).zip(m).zip(v) {
            *m = b1 * *m + (one - b1) * g;
            *v = b2 * *v + (one - b2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *w -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}
