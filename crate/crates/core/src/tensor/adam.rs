//! Adam with bias correction.

use super::Element;
use crate::error::{contract_err, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

/// Moment estimates for one parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T = f32> {
    pub first_moment: Vec<T>,
    pub second_moment: Vec<T>,
    pub step_count: u64,
    pub config: AdamConfig,
}

impl<T: Element> AdamState<T> {
    pub fn new(len: usize, config: AdamConfig) -> Self {
        AdamState { first_moment: vec![T::zero(); len], second_moment: vec![T::zero(); len], step_count: 0, config }
    }
}

pub fn adam_step<T: Element>(param: &mut [T], grad: &[T], state: &mut AdamState<T>, lr: f64) -> Result<()> {
    if param.len() != grad.len() || param.len() != state.first_moment.len() || param.len() != state.second_moment.len()
    {
        return Err(contract_err!(
            "adam: parameter has {} entries, gradient {}, moments {}/{}",
            param.len(),
            grad.len(),
            state.first_moment.len(),
            state.second_moment.len()
        ));
    }
    if !(lr > 0.0) {
        return Err(contract_err!("adam: learning rate must be positive, got {lr}"));
    }
    state.step_count += 1;
    let AdamConfig { beta1, beta2, epsilon } = state.config;
    let t = state.step_count as i32;
    let c1 = 1.0 - beta1.powi(t);
    let c2 = 1.0 - beta2.powi(t);
    let (b1, b2) = (T::lit(beta1), T::lit(beta2));
    let (nb1, nb2) = (T::lit(1.0 - beta1), T::lit(1.0 - beta2));
    for (((p, &g), m), v) in
        param.iter_mut().zip(grad).zip(state.first_moment.iter_mut()).zip(state.second_moment.iter_mut())
    {
        *m = b1 * *m + nb1 * g;
        *v = b2 * *v + nb2 * g * g;
        let m_hat = m.as_f64() / c1;
        let v_hat = v.as_f64() / c2;
        *p = T::lit(p.as_f64() - lr * m_hat / (v_hat.sqrt() + epsilon));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Scalar recurrence evaluated by hand, in 64-bit.
    fn oracle(grads: &[f64], lr: f64) -> Vec<f64> {
        let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8);
        let (mut m, mut v, mut p) = (0.0, 0.0, 0.0);
        let mut trace = Vec::new();
        for (t, g) in grads.iter().enumerate() {
            let t = (t + 1) as i32;
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            p -= lr * (m / (1.0 - b1.powi(t))) / ((v / (1.0 - b2.powi(t))).sqrt() + eps);
            trace.push(p);
        }
        trace
    }

    #[test]
    fn zero_gradient_leaves_parameter_unchanged() {
        let mut p = vec![0.25f32, -1.0];
        let mut s = AdamState::new(2, AdamConfig::default());
        adam_step(&mut p, &[0.0, 0.0], &mut s, 0.1).unwrap();
        assert_eq!(p, vec![0.25, -1.0]);
        assert_eq!(s.step_count, 1);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let expect = oracle(&[1.0], 0.1);
        assert!((expect[0] + 0.1).abs() < 1e-8);
        let mut p = vec![0.0f32];
        let mut s = AdamState::new(1, AdamConfig::default());
        adam_step(&mut p, &[1.0], &mut s, 0.1).unwrap();
        assert!((p[0] as f64 - expect[0]).abs() < 1e-7);
    }

    #[test]
    fn second_identical_step_is_smaller_than_lr() {
        let expect = oracle(&[1.0, 1.0], 0.1);
        let mut p = vec![0.0f64];
        let mut s = AdamState::new(1, AdamConfig::default());
        adam_step(&mut p, &[1.0], &mut s, 0.1).unwrap();
        let first = p[0];
        adam_step(&mut p, &[1.0], &mut s, 0.1).unwrap();
        assert_eq!(s.step_count, 2);
        assert!((p[0] - expect[1]).abs() < 1e-15);
        let second = (p[0] - first).abs();
        assert!(second < 0.1);
        assert!(((expect[1] - expect[0]).abs() - second).abs() < 1e-15);
    }

    #[test]
    fn mismatched_lengths_are_rejected() {
        let mut p = vec![0.0f32; 3];
        let mut s = AdamState::new(3, AdamConfig::default());
        assert!(adam_step(&mut p, &[0.0; 2], &mut s, 0.1).is_err());
        assert!(adam_step(&mut p, &[0.0; 3], &mut s, 0.0).is_err());
        assert_eq!(s.step_count, 0);
    }
}
