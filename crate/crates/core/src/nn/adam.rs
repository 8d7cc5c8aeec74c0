//! Bias-corrected Adam over a [`ParamStore`].

use serde::{Deserialize, Serialize};

use super::params::ParamStore;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 2e-4,
            beta1: 0.5,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// First and second moment estimates, one buffer per parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub step: u64,
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(params: &ParamStore<T>) -> Self {
        AdamState {
            step: 0,
            m: params.iter().map(|p| vec![T::zero(); p.value.len()]).collect(),
            v: params.iter().map(|p| vec![T::zero(); p.value.len()]).collect(),
        }
    }
}

/// One update of every trainable parameter from its accumulated gradient.
/// Gradients are checked for finiteness before anything is modified.
pub fn adam_step<T: Scalar>(params: &mut ParamStore<T>, state: &mut AdamState<T>, config: &AdamConfig) -> Result<()> {
    if state.m.len() != params.len() {
        return Err(Error::InvalidArgument(format!(
            "optimizer state tracks {} parameters, store has {}",
            state.m.len(),
            params.len()
        )));
    }
    params.ensure_finite_grads()?;
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (T::of(config.beta1), T::of(config.beta2));
    let bc1 = T::one() - T::of(config.beta1.powi(t));
    let bc2 = T::one() - T::of(config.beta2.powi(t));
    let lr = T::of(config.lr);
    let eps = T::of(config.epsilon);
    for ((p, m), v) in params.iter_mut().zip(&mut state.m).zip(&mut state.v) {
        if !p.trainable {
            continue;
        }
        for i in 0..p.value.len() {
            let g = p.grad[i];
            m[i] = b1 * m[i] + (T::one() - b1) * g;
            v[i] = b2 * v[i] + (T::one() - b2) * g * g;
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            p.value[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(value: f64, grad: f64) -> ParamStore<f64> {
        let mut s = ParamStore::new();
        let id = s.add("x", vec![1], vec![value], true);
        s.get_mut(id).grad[0] = grad;
        s
    }

    #[test]
    fn zero_gradient_leaves_params_and_advances_step() {
        let mut s = single(1.5, 0.0);
        let mut st = AdamState::new(&s);
        adam_step(&mut s, &mut st, &AdamConfig::default()).unwrap();
        assert_eq!(s.iter().next().unwrap().value[0], 1.5);
        assert_eq!(st.step, 1);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        // m_hat = 1, v_hat = 1, so the step is lr / (1 + eps).
        let mut s = single(0.0, 1.0);
        let mut st = AdamState::new(&s);
        let cfg = AdamConfig { lr: 0.1, ..AdamConfig::default() };
        adam_step(&mut s, &mut st, &cfg).unwrap();
        let expected = -0.1 / (1.0 + 1e-8);
        assert!((s.iter().next().unwrap().value[0] - expected).abs() < 1e-15);
    }

    #[test]
    fn identical_inputs_identical_updates() {
        let mut a = single(0.3, -0.7);
        let mut b = single(0.3, -0.7);
        let (mut sa, mut sb) = (AdamState::new(&a), AdamState::new(&b));
        for _ in 0..5 {
            adam_step(&mut a, &mut sa, &AdamConfig::default()).unwrap();
            adam_step(&mut b, &mut sb, &AdamConfig::default()).unwrap();
        }
        assert_eq!(a, b);
        assert_eq!(sa, sb);
    }

    #[test]
    fn non_finite_gradient_names_parameter() {
        let mut s = single(0.0, f64::NAN);
        let mut st = AdamState::new(&s);
        match adam_step(&mut s, &mut st, &AdamConfig::default()) {
            Err(Error::NonFiniteGradient { op }) => assert_eq!(op, "x"),
            other => panic!("unexpected {other:?}"),
        }
        assert_eq!(st.step, 0);
    }

    #[test]
    fn frozen_parameters_are_skipped() {
        let mut s = ParamStore::<f64>::new();
        let id = s.add("running_mean", vec![1], vec![2.0], false);
        s.get_mut(id).grad[0] = 5.0;
        let mut st = AdamState::new(&s);
        adam_step(&mut s, &mut st, &AdamConfig::default()).unwrap();
        assert_eq!(s.value(id), &[2.0]);
    }
}
