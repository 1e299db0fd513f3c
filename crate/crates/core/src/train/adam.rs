use serde::{Deserialize, Serialize};

use crate::nn::Real;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.99,
            eps: 1e-8,
        }
    }
}

/// First/second moment estimates and the step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }
}

/// One bias-corrected Adam update of `params` in place. Moments are kept in
/// `f64` whatever the parameter type.
pub fn adam_step<T: Real>(params: &mut [T], grads: &[T], state: &mut AdamState, cfg: &AdamConfig, lr: f64) {
    assert_eq!(params.len(), grads.len(), "parameter/gradient length");
    assert_eq!(params.len(), state.m.len(), "parameter/state length");
    state.t += 1;
    let bc1 = 1.0 - cfg.beta1.powi(state.t as i32);
    let bc2 = 1.0 - cfg.beta2.powi(state.t as i32);
    for ((p, g), (m, v)) in params
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut().zip(state.v.iter_mut()))
    {
        let g = g.to_f64().unwrap();
        *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
        *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
        let m_hat = *m / bc1;
        let v_hat = *v / bc2;
        *p = T::of(p.to_f64().unwrap() - lr * m_hat / (v_hat.sqrt() + cfg.eps));
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn single_step_by_hand() {
        // m = 0.05, v = 0.0025; m_hat = 0.5, v_hat = 0.25; step = 0.001 * 0.5 / (0.5 + 1e-8).
        let mut w = [1.0f64];
        let mut s = AdamState::new(1);
        adam_step(&mut w, &[0.5], &mut s, &AdamConfig::default(), 0.001);
        let expected = 1.0 - 0.001 * 0.5 / (0.5 + 1e-8);
        assert!((w[0] - expected).abs() < 1e-15);
        assert!((w[0] - 0.999).abs() < 1e-10);
        assert_eq!(s.t, 1);
    }

    #[test]
    fn zero_gradient_leaves_parameter() {
        let mut w = [0.3f64, -2.0];
        let mut s = AdamState::new(2);
        adam_step(&mut w, &[0.0, 0.0], &mut s, &AdamConfig::default(), 0.001);
        assert_eq!(w, [0.3, -2.0]);
    }

    proptest! {
        #[test]
        fn opposite_gradients_give_opposite_steps(
            g in -10.0f64..10.0,
            history in prop::collection::vec(-5.0f64..5.0, 0..10),
        ) {
            let cfg = AdamConfig::default();
            let mut s = AdamState::new(1);
            let mut neg = AdamState::new(1);
            let mut w = [0.0f64];
            let mut wn = [0.0f64];
            for h in &history {
                adam_step(&mut w, &[*h], &mut s, &cfg, 0.001);
                adam_step(&mut wn, &[-*h], &mut neg, &cfg, 0.001);
            }
            let (w0, wn0) = (w[0], wn[0]);
            adam_step(&mut w, &[g], &mut s, &cfg, 0.001);
            adam_step(&mut wn, &[-g], &mut neg, &cfg, 0.001);
            prop_assert!(((w[0] - w0) + (wn[0] - wn0)).abs() < 1e-15);
        }

        #[test]
        fn first_step_bounded_by_lr(grads in prop::collection::vec(-100.0f64..100.0, 1..50)) {
            let mut w = vec![0.0f64; grads.len()];
            let mut s = AdamState::new(grads.len());
            adam_step(&mut w, &grads, &mut s, &AdamConfig::default(), 0.001);
            for d in &w {
                prop_assert!(d.abs() <= 0.001 * (1.0 + 1e-6));
            }
        }
    }
}
