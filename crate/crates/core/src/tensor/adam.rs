use super::{Real, Tensor};
use crate::error::{Error, Result};

pub const DEFAULT_BETA1: f64 = 0.9;
pub const DEFAULT_BETA2: f64 = 0.999;
pub const DEFAULT_EPSILON: f64 = 1e-8;

/// Per-parameter Adam moments with bias correction.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T = f32> {
    pub step: u64,
    pub m: Tensor<T>,
    pub v: Tensor<T>,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl<T: Real> AdamState<T> {
    pub fn new(shape: &[usize]) -> Self {
        AdamState {
            step: 0,
            m: Tensor::zeros(shape.to_vec()),
            v: Tensor::zeros(shape.to_vec()),
            beta1: DEFAULT_BETA1,
            beta2: DEFAULT_BETA2,
            epsilon: DEFAULT_EPSILON,
        }
    }
}

/// One bias-corrected Adam update of `param` in place.
pub fn adam_step<T: Real>(
    param: &mut Tensor<T>,
    grad: &Tensor<T>,
    state: &mut AdamState<T>,
    lr: f64,
) -> Result<()> {
    param.ensure_same_shape(grad, "adam_step")?;
    param.ensure_same_shape(&state.m, "adam_step")?;
    param.ensure_same_shape(&state.v, "adam_step")?;
    state.step += 1;
    let t = state.step as i32;
    let b1 = T::from_f64(state.beta1);
    let b2 = T::from_f64(state.beta2);
    let correction1 = T::from_f64(1.0 - state.beta1.powi(t));
    let correction2 = T::from_f64(1.0 - state.beta2.powi(t));
    let lr = T::from_f64(lr);
    let eps = T::from_f64(state.epsilon);
    let one = T::one();
    for (((p, &g), m), v) in param
        .data_mut()
        .iter_mut()
        .zip(grad.data())
        .zip(state.m.data_mut())
        .zip(state.v.data_mut())
    {
        *m = b1 * *m + (one - b1) * g;
        *v = b2 * *v + (one - b2) * g * g;
        let m_hat = *m / correction1;
        let v_hat = *v / correction2;
        *p = *p - lr * m_hat / (v_hat.sqrt() + eps);
    }
    if !param.all_finite() {
        return Err(Error::NonFinite { op: "adam_step" });
    }
    Ok(())
}
