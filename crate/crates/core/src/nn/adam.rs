use serde::{Deserialize, Serialize};

use super::model::{Gradients, Param};
use super::real::Real;
use crate::error::{Error, Result};

/// Learning rate used unless overridden.
pub const DEFAULT_LEARNING_RATE: f64 = 2e-4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: DEFAULT_LEARNING_RATE,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Moment estimates mirroring the parameter list, plus the step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new<T: Real>(params: &[Param<T>], config: AdamConfig) -> Self {
        let zeros = || params.iter().map(|p| vec![0.0; p.len()]).collect::<Vec<_>>();
        Self {
            config,
            step: 0,
            first: zeros(),
            second: zeros(),
        }
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn first_moments(&self) -> &[Vec<f64>] {
        &self.first
    }

    pub fn second_moments(&self) -> &[Vec<f64>] {
        &self.second
    }
}

/// One bias-corrected Adam update of every parameter.
pub fn adam_step<T: Real>(
    params: &mut [Param<T>],
    grads: &Gradients,
    state: &mut AdamState,
) -> Result<()> {
    if params.len() != grads.grads.len() || params.len() != state.first.len() {
        return Err(Error::Shape(format!(
            "{} parameters, {} gradients, {} moment slots",
            params.len(),
            grads.grads.len(),
            state.first.len()
        )));
    }
    for ((p, g), m) in params.iter().zip(&grads.grads).zip(&state.first) {
        if p.len() != g.len() || p.len() != m.len() {
            return Err(Error::Shape(format!(
                "parameter {} has {} values, gradient {}, moments {}",
                p.name,
                p.len(),
                g.len(),
                m.len()
            )));
        }
    }
    let AdamConfig {
        lr,
        beta1,
        beta2,
        eps,
    } = state.config;
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - beta1.powi(t);
    let c2 = 1.0 - beta2.powi(t);
    for (((p, g), m), v) in params
        .iter_mut()
        .zip(&grads.grads)
        .zip(&mut state.first)
        .zip(&mut state.second)
    {
        for (((w, &gi), mi), vi) in p.data.iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
            *mi = beta1 * *mi + (1.0 - beta1) * gi;
            *vi = beta2 * *vi + (1.0 - beta2) * gi * gi;
            let update = lr * (*mi / c1) / ((*vi / c2).sqrt() + eps);
            *w = T::from_f64(w.to_f64() - update);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(v: f64) -> Vec<Param<f64>> {
        vec![Param {
            name: "x".into(),
            dims: vec![1],
            data: vec![v],
        }]
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        for g in [3.7, -0.02, 1e-3] {
            let mut p = scalar(1.0);
            let mut st = AdamState::new(&p, AdamConfig::default());
            adam_step(&mut p, &Gradients { grads: vec![vec![g]] }, &mut st).unwrap();
            let delta = p[0].data[0] - 1.0;
            let expected = -2e-4 * g / (g.abs() + 1e-8);
            assert!((delta - expected).abs() < 1e-15);
            assert!((delta + 2e-4 * g.signum()).abs() < 1e-8);
            assert_eq!(st.step(), 1);
        }
    }

    #[test]
    fn zero_gradient_is_a_fixed_point() {
        let mut p = scalar(0.25);
        let mut st = AdamState::new(&p, AdamConfig::default());
        for _ in 0..50 {
            adam_step(&mut p, &Gradients { grads: vec![vec![0.0]] }, &mut st).unwrap();
        }
        assert_eq!(p[0].data[0], 0.25);
        assert_eq!(st.step(), 50);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let mut p = scalar(0.0);
        let mut st = AdamState::new(&p, AdamConfig::default());
        let bad = Gradients {
            grads: vec![vec![0.0, 1.0]],
        };
        assert!(adam_step(&mut p, &bad, &mut st).is_err());
        assert_eq!(st.step(), 0);
    }
}
