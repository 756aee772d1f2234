use ndarray::Zip;
use serde::{Deserialize, Serialize};

use crate::encoder::EncoderParams;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moments mirroring the parameter tensors.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<F> {
    pub m: EncoderParams<F>,
    pub v: EncoderParams<F>,
    pub step: u64,
}

impl<F: Scalar> AdamState<F> {
    pub fn new(params: &EncoderParams<F>) -> Self {
        Self {
            m: params.zeros_like(),
            v: params.zeros_like(),
            step: 0,
        }
    }
}

/// Bias-corrected Adam update. A non-finite gradient aborts the step before
/// anything is modified.
pub fn adam_step<F: Scalar>(
    params: &mut EncoderParams<F>,
    grads: &EncoderParams<F>,
    state: &mut AdamState<F>,
    config: &AdamConfig,
    lr: f64,
) -> Result<()> {
    if let Some(tensor) = grads.first_non_finite() {
        return Err(Error::NonFiniteGradient { tensor });
    }
    state.step += 1;
    let t = state.step as i32;
    let b1 = F::of(config.beta1);
    let b2 = F::of(config.beta2);
    let one = F::one();
    let bc1 = F::of(1.0 - config.beta1.powi(t));
    let bc2 = F::of(1.0 - config.beta2.powi(t));
    let lr = F::of(lr);
    let eps = F::of(config.eps);

    let grads = grads.tensors();
    let ms = state.m.tensors_mut();
    let vs = state.v.tensors_mut();
    for ((((_, mut p), (_, g)), (_, mut m)), (_, mut v)) in params.tensors_mut().into_iter().zip(grads).zip(ms).zip(vs) {
        Zip::from(&mut p).and(&g).and(&mut m).and(&mut v).for_each(|p, &g, m, v| {
            *m = b1 * *m + (one - b1) * g;
            *v = b2 * *v + (one - b2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p -= lr * m_hat / (v_hat.sqrt() + eps);
        });
    }
    Ok(())
}
