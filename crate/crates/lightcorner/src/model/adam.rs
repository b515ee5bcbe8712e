//! Classic Adam with L2 weight decay folded into the gradient.

use super::tensor::RegressorParams;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPS: f64 = 1e-8;

/// First and second moment estimates, one buffer per parameter tensor,
/// plus the step counter used for bias correction.
#[derive(Debug, Clone)]
pub struct AdamState {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    step: u64,
}

impl AdamState {
    /// Zero moments shaped after `params`.
    pub fn new(params: &RegressorParams) -> Self {
        let m = params.iter().map(|(_, t)| vec![0.0; t.numel()]).collect::<Vec<_>>();
        let v = m.clone();
        AdamState { m, v, step: 0 }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

/// One Adam update over every parameter, reading gradients from the
/// tensors' gradient buffers (which a backward pass must have populated).
/// Weight decay enters as a plain L2 term on the gradient,
/// `g' = g + weight_decay * theta`, before the standard bias-corrected
/// moment updates.
///
/// # Panics
/// Panics if `state` was built for a different parameter layout or if any
/// gradient buffer is missing.
pub fn adam_step(params: &mut RegressorParams, state: &mut AdamState, lr: f64, weight_decay: f64) {
    assert_eq!(state.m.len(), params.len(), "optimizer state does not match parameter layout");
    state.step += 1;
    let bias1 = 1.0 - BETA1.powi(state.step as i32);
    let bias2 = 1.0 - BETA2.powi(state.step as i32);
    for idx in 0..params.len() {
        let (theta, grad) = params.tensor_mut(idx).data_mut_and_grad();
        let m = &mut state.m[idx];
        let v = &mut state.v[idx];
        assert_eq!(m.len(), theta.len(), "optimizer state does not match parameter layout");
        for i in 0..theta.len() {
            let g = grad[i] + weight_decay * theta[i];
            m[i] = BETA1 * m[i] + (1.0 - BETA1) * g;
            v[i] = BETA2 * v[i] + (1.0 - BETA2) * g * g;
            let m_hat = m[i] / bias1;
            let v_hat = v[i] / bias2;
            theta[i] -= lr * m_hat / (v_hat.sqrt() + EPS);
        }
    }
}
