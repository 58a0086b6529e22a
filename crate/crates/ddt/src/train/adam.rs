//! Adam with bias correction and coupled L2 weight decay.

use crate::error::{DdtError, Result};

#[derive(Debug, Clone)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl AdamState {
    pub fn new(param_count: usize, lr: f64, weight_decay: f64) -> Self {
        AdamState {
            m: vec![0.0; param_count],
            v: vec![0.0; param_count],
            t: 0,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
        }
    }
}

/// One Adam step in place. Weight decay is added to the gradient before the
/// moment updates (coupled decay).
pub fn adam_step(params: &mut [f64], grad: &[f64], state: &mut AdamState) -> Result<()> {
    if params.len() != grad.len() || params.len() != state.m.len() {
        return Err(DdtError::ParamLengthMismatch { expected: state.m.len(), got: grad.len() });
    }
    state.t += 1;
    let bc1 = 1.0 - state.beta1.powi(state.t as i32);
    let bc2 = 1.0 - state.beta2.powi(state.t as i32);
    for i in 0..params.len() {
        let g = grad[i] + state.weight_decay * params[i];
        state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * g;
        state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * g * g;
        let m_hat = state.m[i] / bc1;
        let v_hat = state.v[i] / bc2;
        params[i] -= state.lr * m_hat / (v_hat.sqrt() + state.eps);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_is_fixed_point() {
        let mut params = vec![1.5, -0.5];
        let mut state = AdamState::new(2, 0.1, 0.0);
        adam_step(&mut params, &[0.0, 0.0], &mut state).unwrap();
        assert_eq!(params, vec![1.5, -0.5]);
    }

    #[test]
    fn first_step_matches_hand_computation() {
        // g = (0.2, -3.0), lr = 0.01: after bias correction m_hat = g and
        // v_hat = g^2, so the update is -lr * g / (|g| + eps).
        let g = [0.2, -3.0];
        let mut params = vec![0.0, 0.0];
        let mut state = AdamState::new(2, 0.01, 0.0);
        adam_step(&mut params, &g, &mut state).unwrap();
        for i in 0..2 {
            let expected = -0.01 * g[i] / (g[i].abs() + 1e-8);
            assert!((params[i] - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn determinism_across_replays() {
        let grads = [[0.3, -0.1], [0.05, 0.9], [-0.4, 0.2]];
        let run = || {
            let mut params = vec![0.1, -0.2];
            let mut state = AdamState::new(2, 0.05, 0.01);
            for g in &grads {
                adam_step(&mut params, g, &mut state).unwrap();
            }
            params
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn length_mismatch_rejected() {
        let mut params = vec![0.0; 3];
        let mut state = AdamState::new(3, 0.1, 0.0);
        assert!(adam_step(&mut params, &[0.0; 2], &mut state).is_err());
    }
}
