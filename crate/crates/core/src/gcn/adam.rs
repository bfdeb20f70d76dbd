use ndarray::{Array1, Array2, Zip};
use serde::{Deserialize, Serialize};

use super::Parameters;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn new(lr: f64) -> Self {
        AdamConfig {
            lr,
            ..AdamConfig::default()
        }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates plus the step counter.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    step: i32,
    m_w: Vec<Array2<f64>>,
    v_w: Vec<Array2<f64>>,
    m_b: Vec<Array1<f64>>,
    v_b: Vec<Array1<f64>>,
}

impl AdamState {
    pub fn new(params: &Parameters) -> Self {
        let zeros_w: Vec<_> = params.weights().iter().map(|w| Array2::zeros(w.raw_dim())).collect();
        let zeros_b: Vec<_> = params
            .biases()
            .map(|b| b.iter().map(|b| Array1::zeros(b.len())).collect())
            .unwrap_or_default();
        AdamState {
            step: 0,
            m_w: zeros_w.clone(),
            v_w: zeros_w,
            m_b: zeros_b.clone(),
            v_b: zeros_b,
        }
    }

    pub fn step(&self) -> i32 {
        self.step
    }

    pub fn first_moments(&self) -> &[Array2<f64>] {
        &self.m_w
    }

    pub fn second_moments(&self) -> &[Array2<f64>] {
        &self.v_w
    }
}

/// One bias-corrected Adam update. `d_biases` is required exactly when the
/// parameters carry biases.
pub fn adam_step(
    params: &mut Parameters,
    d_weights: &[Array2<f64>],
    d_biases: Option<&[Array1<f64>]>,
    state: &mut AdamState,
    cfg: &AdamConfig,
) -> Result<()> {
    if d_weights.len() != params.layers()
        || d_weights.iter().zip(params.weights()).any(|(g, w)| g.dim() != w.dim())
    {
        return Err(Error::dim("weight gradients do not match parameters"));
    }
    if d_biases.is_some() != params.biases().is_some() {
        return Err(Error::dim("bias gradients do not match parameters"));
    }
    state.step += 1;
    let c1 = 1.0 - cfg.beta1.powi(state.step);
    let c2 = 1.0 - cfg.beta2.powi(state.step);
    let update = |p: &mut f64, g: &f64, m: &mut f64, v: &mut f64| {
        *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
        *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
        *p -= cfg.lr * (*m / c1) / ((*v / c2).sqrt() + cfg.eps);
    };
    for (l, w) in params.weights_mut().iter_mut().enumerate() {
        Zip::from(w)
            .and(&d_weights[l])
            .and(&mut state.m_w[l])
            .and(&mut state.v_w[l])
            .for_each(update);
    }
    if let (Some(biases), Some(d_b)) = (params.biases_mut(), d_biases) {
        for (l, b) in biases.iter_mut().enumerate() {
            Zip::from(b)
                .and(&d_b[l])
                .and(&mut state.m_b[l])
                .and(&mut state.v_b[l])
                .for_each(update);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use ndarray::array;

    #[test]
    fn zero_gradient_keeps_parameters() {
        let mut params = Parameters::new(vec![array![[1.0, -2.0]]]).unwrap();
        let before = params.clone();
        let mut state = AdamState::new(&params);
        let cfg = AdamConfig::new(0.1);
        adam_step(&mut params, &[array![[0.0, 0.0]]], None, &mut state, &cfg).unwrap();
        assert_eq!(params, before);
        assert!(state.first_moments()[0].iter().all(|&m| m == 0.0));
    }

    #[test]
    fn moments_decay_under_zero_gradient() {
        let mut params = Parameters::new(vec![array![[1.0]]]).unwrap();
        let mut state = AdamState::new(&params);
        state.m_w[0].fill(0.5);
        state.v_w[0].fill(0.25);
        adam_step(&mut params, &[array![[0.0]]], None, &mut state, &AdamConfig::new(0.1)).unwrap();
        assert_relative_eq!(state.first_moments()[0][[0, 0]], 0.45, epsilon = 1e-15);
        assert_relative_eq!(state.second_moments()[0][[0, 0]], 0.24975, epsilon = 1e-15);
    }

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        let mut params = Parameters::new(vec![array![[1.0, 1.0, 1.0]]]).unwrap();
        let mut state = AdamState::new(&params);
        let cfg = AdamConfig::new(0.01);
        adam_step(&mut params, &[array![[3.0, -0.2, 1e-3]]], None, &mut state, &cfg).unwrap();
        let w = &params.weights()[0];
        assert_relative_eq!(w[[0, 0]], 0.99, epsilon = 1e-9);
        assert_relative_eq!(w[[0, 1]], 1.01, epsilon = 1e-9);
        assert_relative_eq!(w[[0, 2]], 0.99, epsilon = 1e-7);
    }

    #[test]
    fn two_steps_follow_hand_recursion() {
        let mut params = Parameters::new(vec![array![[0.0]]]).unwrap();
        let mut state = AdamState::new(&params);
        let cfg = AdamConfig::new(0.1);
        adam_step(&mut params, &[array![[1.0]]], None, &mut state, &cfg).unwrap();
        adam_step(&mut params, &[array![[2.0]]], None, &mut state, &cfg).unwrap();
        // m1 = 0.1, v1 = 0.001; m2 = 0.29, v2 = 0.004999
        let p1: f64 = -0.1 / (1.0 + 1e-8);
        let m_hat = 0.29 / (1.0 - 0.81);
        let v_hat: f64 = 0.004_999 / (1.0 - 0.998_001);
        let p2 = p1 - 0.1 * m_hat / (v_hat.sqrt() + 1e-8);
        assert_relative_eq!(params.weights()[0][[0, 0]], p2, epsilon = 1e-12);
        assert_eq!(state.step(), 2);
    }

    #[test]
    fn biases_are_updated() {
        let mut params = Parameters::new(vec![array![[1.0]]]).unwrap().with_zero_bias();
        let mut state = AdamState::new(&params);
        let cfg = AdamConfig::new(0.5);
        let d_b = [array![1.0]];
        adam_step(&mut params, &[array![[0.0]]], Some(&d_b), &mut state, &cfg).unwrap();
        assert_relative_eq!(params.biases().unwrap()[0][0], -0.5, epsilon = 1e-6);
        assert!(adam_step(&mut params, &[array![[0.0]]], None, &mut state, &cfg).is_err());
    }
}
