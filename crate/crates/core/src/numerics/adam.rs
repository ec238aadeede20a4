use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::{Grads, NumericsError, ParamSet, Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            ..Self::default()
        }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First/second moment estimates for every parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub config: AdamConfig,
    pub step: u64,
    first: Vec<Tensor<T>>,
    second: Vec<Tensor<T>>,
}

impl<T: Real> AdamState<T> {
    pub fn new(params: &ParamSet<T>, config: AdamConfig) -> Self {
        let zeros = || {
            params
                .tensors()
                .iter()
                .map(|t| Tensor::zeros(t.shape()))
                .collect()
        };
        Self {
            config,
            step: 0,
            first: zeros(),
            second: zeros(),
        }
    }

    pub fn first_moments(&self) -> &[Tensor<T>] {
        &self.first
    }

    pub fn second_moments(&self) -> &[Tensor<T>] {
        &self.second
    }
}

/// One bias-corrected Adam update of `params` in place.
pub fn adam_step<T: Real>(
    params: &mut ParamSet<T>,
    grads: &Grads<T>,
    state: &mut AdamState<T>,
) -> Result<(), NumericsError> {
    if grads.slots().len() != params.len() || state.first.len() != params.len() {
        return Err(NumericsError::ShapeMismatch {
            op: "adam_step",
            detail: alloc::format!(
                "{} params, {} grads, {} moments",
                params.len(),
                grads.slots().len(),
                state.first.len()
            ),
        });
    }
    for ((p, g), m) in params.tensors().iter().zip(grads.slots()).zip(&state.first) {
        if p.len() != g.len() || p.shape() != m.shape() {
            return Err(NumericsError::ShapeMismatch {
                op: "adam_step",
                detail: alloc::format!(
                    "param {:?} vs grad {} / moment {:?}",
                    p.shape(),
                    g.len(),
                    m.shape()
                ),
            });
        }
    }
    state.step += 1;
    let c = state.config;
    let t = state.step as i32;
    let bc1 = T::from_f64(1.0 - num_traits::Float::powi(c.beta1, t));
    let bc2 = T::from_f64(1.0 - num_traits::Float::powi(c.beta2, t));
    let (b1, b2) = (T::from_f64(c.beta1), T::from_f64(c.beta2));
    let (lr, eps) = (T::from_f64(c.lr), T::from_f64(c.eps));
    let one = T::one();
    for (((p, g), m), v) in params
        .tensors_mut()
        .iter_mut()
        .zip(grads.slots())
        .zip(state.first.iter_mut())
        .zip(state.second.iter_mut())
    {
        for (((pi, &gi), mi), vi) in p
            .data_mut()
            .iter_mut()
            .zip(g)
            .zip(m.data_mut().iter_mut())
            .zip(v.data_mut().iter_mut())
        {
            *mi = b1 * *mi + (one - b1) * gi;
            *vi = b2 * *vi + (one - b2) * gi * gi;
            let mhat = *mi / bc1;
            let vhat = *vi / bc2;
            *pi = *pi - lr * mhat / (vhat.sqrt() + eps);
        }
    }
    Ok(())
}
