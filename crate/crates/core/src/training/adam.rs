use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::model::ModelParams;
use crate::scalar::Scalar;

/// Adam hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { learning_rate: 1e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// First and second moment estimates per parameter plus the step count.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub(crate) first: BTreeMap<String, Vec<T>>,
    pub(crate) second: BTreeMap<String, Vec<T>>,
    pub(crate) step: u64,
}

impl<T: Scalar> AdamState<T> {
    /// Zero moments shaped like `params`.
    pub fn new(params: &ModelParams<T>) -> Self {
        let zeros: BTreeMap<String, Vec<T>> = params.iter().map(|(k, t)| (k.to_string(), vec![T::zero(); t.numel()])).collect();
        Self { first: zeros.clone(), second: zeros, step: 0 }
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn moments(&self, path: &str) -> Option<(&[T], &[T])> {
        Some((self.first.get(path)?.as_slice(), self.second.get(path)?.as_slice()))
    }
}

/// One bias-corrected Adam update from the gradients stored on `params`.
/// Fails without touching anything if any parameter lacks a gradient.
pub fn adam_step<T: Scalar>(params: &mut ModelParams<T>, state: &mut AdamState<T>, cfg: &AdamConfig) -> Result<()> {
    for (path, t) in params.iter() {
        if t.grad().is_none() {
            return Err(Error::MissingGradient(path.to_string()));
        }
        match state.first.get(path) {
            Some(m) if m.len() == t.numel() => {}
            _ => return Err(Error::Config(format!("optimizer state does not cover parameter `{path}`"))),
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let b1 = T::lit(cfg.beta1);
    let b2 = T::lit(cfg.beta2);
    let c1 = T::lit(1.0 - cfg.beta1);
    let c2 = T::lit(1.0 - cfg.beta2);
    let bias1 = T::lit(1.0 - cfg.beta1.powi(t));
    let bias2 = T::lit(1.0 - cfg.beta2.powi(t));
    let lr = T::lit(cfg.learning_rate);
    let eps = T::lit(cfg.eps);
    for (path, tensor) in params.iter_mut() {
        let grad = tensor.grad().expect("checked above").to_vec();
        let m = state.first.get_mut(path).expect("checked above");
        let u = state.second.get_mut(path).expect("checked above");
        for (((w, &g), m), u) in tensor.data_mut().iter_mut().zip(&grad).zip(m.iter_mut()).zip(u.iter_mut()) {
            *m = b1 * *m + c1 * g;
            *u = b2 * *u + c2 * g * g;
            let m_hat = *m / bias1;
            let u_hat = *u / bias2;
            *w -= lr * m_hat / (u_hat.sqrt() + eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;

    fn params() -> ModelParams<f64> {
        ModelParams::init(&ModelConfig::tiny(), 9).unwrap()
    }

    fn set_grads(p: &mut ModelParams<f64>, f: impl Fn(usize) -> f64) {
        for (_, t) in p.iter_mut() {
            t.zero_grad();
            let g: Vec<f64> = (0..t.numel()).map(&f).collect();
            t.accumulate_grad(&g).unwrap();
        }
    }

    #[test]
    fn zero_gradient_leaves_weights() {
        let mut p = params();
        let before = p.clone();
        let mut s = AdamState::new(&p);
        set_grads(&mut p, |_| 0.0);
        adam_step(&mut p, &mut s, &AdamConfig::default()).unwrap();
        assert_eq!(s.step(), 1);
        for ((_, a), (_, b)) in p.iter().zip(before.iter()) {
            assert_eq!(a.data(), b.data());
        }
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut p = params();
        let before = p.clone();
        let mut s = AdamState::new(&p);
        set_grads(&mut p, |i| if i % 2 == 0 { 3.0 } else { -0.02 });
        let cfg = AdamConfig::default();
        adam_step(&mut p, &mut s, &cfg).unwrap();
        for ((_, a), (_, b)) in p.iter().zip(before.iter()) {
            for (i, (x, y)) in a.data().iter().zip(b.data()).enumerate() {
                let sign = if i % 2 == 0 { 1.0 } else { -1.0 };
                assert!(((y - x) - sign * cfg.learning_rate).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn missing_gradient_is_an_error() {
        let mut p = params();
        let mut s = AdamState::new(&p);
        set_grads(&mut p, |_| 1.0);
        p.get_mut("head.level2.bias").unwrap().zero_grad();
        let before = p.clone();
        assert!(matches!(adam_step(&mut p, &mut s, &AdamConfig::default()), Err(Error::MissingGradient(path)) if path == "head.level2.bias"));
        assert_eq!(s.step(), 0);
        assert_eq!(p, before);
    }

    #[test]
    fn identical_states_give_identical_trajectories() {
        let run = || {
            let mut p = params();
            let mut s = AdamState::new(&p);
            for k in 0..3 {
                set_grads(&mut p, |i| ((i + k) as f64 * 0.7).sin());
                adam_step(&mut p, &mut s, &AdamConfig::default()).unwrap();
            }
            (p, s)
        };
        assert_eq!(run(), run());
    }
}
