use serde::{Deserialize, Serialize};

use crate::param::Param;

/// Bias-corrected Adam with a constant learning rate. Step counts live on
/// each [`Param`], so tensors added mid-training get their own warm-up.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamState {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Applies one Adam update to the raw weights, then zeroes the gradients.
pub fn adam_step(params: &mut [Param], state: &AdamState) {
    let (b1, b2, lr, eps) = (state.beta1, state.beta2, state.lr, state.epsilon);
    for p in params.iter_mut() {
        p.step += 1;
        let t = i32::try_from(p.step).unwrap_or(i32::MAX);
        let bc1 = 1.0 - b1.powi(t);
        let bc2 = 1.0 - b2.powi(t);
        let raw = p.raw.data_mut();
        let grad = p.grad.data();
        let m = p.m.data_mut();
        let v = p.v.data_mut();
        for i in 0..raw.len() {
            let g = grad[i];
            m[i] = b1 * m[i] + (1.0 - b1) * g;
            v[i] = b2 * v[i] + (1.0 - b2) * g * g;
            let mhat = m[i] / bc1;
            let vhat = v[i] / bc2;
            raw[i] -= lr * mhat / (vhat.sqrt() + eps);
        }
        p.zero_grad();
    }
}

/// Plain gradient descent `w ← w − η∇f`, then zeroes the gradients.
pub fn sgd_step(params: &mut [Param], lr: f64) {
    for p in params.iter_mut() {
        let grad = p.grad.data().to_vec();
        for (w, g) in p.raw.data_mut().iter_mut().zip(grad) {
            *w -= lr * g;
        }
        p.zero_grad();
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Adam,
    Sgd,
}
