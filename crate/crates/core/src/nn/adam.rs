use serde::{Deserialize, Serialize};

use super::mlp::{Gradients, Mlp};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub alpha: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            alpha: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-7,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha.is_finite() && self.alpha > 0.0) {
            return Err(Error::validation(format!(
                "learning rate must be > 0, got {}",
                self.alpha
            )));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::validation(format!(
                    "{name} must lie in [0, 1), got {b}"
                )));
            }
        }
        if !(self.epsilon.is_finite() && self.epsilon > 0.0) {
            return Err(Error::validation(format!(
                "epsilon must be > 0, got {}",
                self.epsilon
            )));
        }
        Ok(())
    }
}

/// First and second moment estimates, one buffer per parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(config: AdamConfig, tensor_lens: &[usize]) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            step: 0,
            m: tensor_lens.iter().map(|&n| vec![0.0; n]).collect(),
            v: tensor_lens.iter().map(|&n| vec![0.0; n]).collect(),
        })
    }

    pub fn for_mlp(config: AdamConfig, mlp: &Mlp) -> Result<Self> {
        let lens: Vec<usize> = Gradients::zeros_like(mlp)
            .slices()
            .iter()
            .map(|s| s.len())
            .collect();
        Self::new(config, &lens)
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn first_moments(&self) -> &[Vec<f64>] {
        &self.m
    }

    pub fn second_moments(&self) -> &[Vec<f64>] {
        &self.v
    }

    /// One bias-corrected Adam update of `params` in place.
    pub fn update(&mut self, params: &mut [&mut [f64]], grads: &[&[f64]]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::validation(format!(
                "optimizer tracks {} tensors, got {} parameters and {} gradients",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        for (k, ((p, g), m)) in params.iter().zip(grads).zip(&self.m).enumerate() {
            if p.len() != m.len() || g.len() != m.len() {
                return Err(Error::validation(format!(
                    "tensor {k}: optimizer expects {} entries, got {} parameters and {} gradients",
                    m.len(),
                    p.len(),
                    g.len()
                )));
            }
        }

        self.step += 1;
        let AdamConfig {
            alpha,
            beta1,
            beta2,
            epsilon,
        } = self.config;
        let t = self.step as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        for (((p, g), m), v) in params
            .iter_mut()
            .zip(grads)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            for (((pi, &gi), mi), vi) in p
                .iter_mut()
                .zip(g.iter())
                .zip(m.iter_mut())
                .zip(v.iter_mut())
            {
                *mi = beta1 * *mi + (1.0 - beta1) * gi;
                *vi = beta2 * *vi + (1.0 - beta2) * gi * gi;
                let m_hat = *mi / c1;
                let v_hat = *vi / c2;
                *pi -= alpha * m_hat / (v_hat.sqrt() + epsilon);
            }
        }
        Ok(())
    }
}

pub fn adam_step(mlp: &mut Mlp, grads: &Gradients, state: &mut AdamState) -> Result<()> {
    let g = grads.slices();
    let mut params = mlp.parameters_mut();
    state.update(&mut params, &g)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Activation;

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut net = Mlp::init(&[3, 4, 2], &[Activation::Relu, Activation::Identity], 3).unwrap();
        let before = net.clone();
        let mut state = AdamState::for_mlp(AdamConfig::default(), &net).unwrap();
        let zero = Gradients::zeros_like(&net);
        adam_step(&mut net, &zero, &mut state).unwrap();
        assert_eq!(net, before);
        assert_eq!(state.step(), 1);
    }

    #[test]
    fn first_step_moves_by_alpha_times_sign() {
        let cfg = AdamConfig::default();
        let mut state = AdamState::new(cfg, &[3]).unwrap();
        let mut theta = [0.0, 0.0, 0.0];
        let g = [0.5, -2.0, 1e-3];
        state.update(&mut [&mut theta[..]], &[&g[..]]).unwrap();
        for (t, gi) in theta.iter().zip(g) {
            let expected = -cfg.alpha * gi / (gi.abs() + cfg.epsilon);
            assert!((t - expected).abs() <= 1e-15, "{t} vs {expected}");
            assert!((t + cfg.alpha * gi.signum()).abs() <= 1e-6);
        }
    }

    #[test]
    fn quadratic_converges() {
        let mut state = AdamState::new(AdamConfig::default(), &[1]).unwrap();
        let mut theta = [1.0];
        for _ in 0..5000 {
            let g = [2.0 * theta[0]];
            state.update(&mut [&mut theta[..]], &[&g[..]]).unwrap();
        }
        assert!(theta[0].abs() < 0.01, "theta = {}", theta[0]);
        assert_eq!(state.step(), 5000);
    }

    #[test]
    fn second_moment_ignores_gradient_sign() {
        let mut a = AdamState::new(AdamConfig::default(), &[4]).unwrap();
        let mut b = a.clone();
        let g = [0.3, -1.0, 2.5, 0.0];
        let neg: Vec<f64> = g.iter().map(|x| -x).collect();
        let mut pa = [0.0; 4];
        let mut pb = [0.0; 4];
        for _ in 0..3 {
            a.update(&mut [&mut pa[..]], &[&g[..]]).unwrap();
            b.update(&mut [&mut pb[..]], &[&neg[..]]).unwrap();
        }
        assert_eq!(a.second_moments(), b.second_moments());
    }

    #[test]
    fn shape_mismatch_rejected() {
        let mut state = AdamState::new(AdamConfig::default(), &[2]).unwrap();
        let mut p = [0.0; 3];
        assert!(state.update(&mut [&mut p[..]], &[&[0.0; 3][..]]).is_err());
        assert_eq!(state.step(), 0);
        let net = Mlp::init(&[2, 2], &[Activation::Identity], 0).unwrap();
        let mut other = Mlp::init(&[2, 3], &[Activation::Identity], 0).unwrap();
        let mut s = AdamState::for_mlp(AdamConfig::default(), &net).unwrap();
        assert!(adam_step(&mut other, &Gradients::zeros_like(&net), &mut s).is_err());
    }

    #[test]
    fn bad_hyperparameters_rejected() {
        let cfg = AdamConfig {
            alpha: 0.0,
            ..Default::default()
        };
        assert!(AdamState::new(cfg, &[1]).is_err());
        let cfg = AdamConfig {
            beta2: 1.0,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
    }
}
