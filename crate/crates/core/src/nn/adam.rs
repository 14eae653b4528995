use crate::nn::{Gradients, Mlp};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Bias-corrected Adam moments for one network.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub config: AdamConfig,
    first: Gradients,
    second: Gradients,
    step: u64,
}

impl AdamState {
    pub fn new(params: &Mlp, config: AdamConfig) -> Self {
        AdamState { config, first: Gradients::zeros_like(params), second: Gradients::zeros_like(params), step: 0 }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, params: &mut Mlp, grads: &Gradients) -> Result<()> {
        if !grads.matches(params) || !self.first.matches(params) {
            return Err(Error::InvalidArgument("gradient or optimizer state shape does not match the network".into()));
        }
        self.step += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let t = self.step as f64;
        let correction1 = 1.0 - libm::pow(beta1, t);
        let correction2 = 1.0 - libm::pow(beta2, t);
        let layers = params.params_mut().zip(&grads.layers).zip(self.first.layers.iter_mut().zip(self.second.layers.iter_mut()));
        for (((w, b), g), (m, v)) in layers {
            let values = w.iter_mut().chain(b.iter_mut());
            let gs = g.weights.iter().chain(&g.bias);
            let ms = m.weights.iter_mut().chain(m.bias.iter_mut());
            let vs = v.weights.iter_mut().chain(v.bias.iter_mut());
            for (((p, g), m), v) in values.zip(gs).zip(ms).zip(vs) {
                *m = beta1 * *m + (1.0 - beta1) * g;
                *v = beta2 * *v + (1.0 - beta2) * g * g;
                let m_hat = *m / correction1;
                let v_hat = *v / correction2;
                *p -= lr * m_hat / (libm::sqrt(v_hat) + eps);
            }
        }
        Ok(())
    }
}
