use serde::{Deserialize, Serialize};

use super::{Param, Real};

/// Nesterov-accelerated Adam with momentum-decay scheduling of the first
/// moment coefficient (the formulation used by PyTorch's `NAdam`).
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct NAdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub momentum_decay: f64,
}

impl Default for NAdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 2e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            momentum_decay: 4e-3,
        }
    }
}

#[derive(Clone, Debug)]
pub struct NAdam<T> {
    cfg: NAdamConfig,
    step: u64,
    mu_product: f64,
    first: Vec<Vec<T>>,
    second: Vec<Vec<T>>,
}

impl<T: Real> NAdam<T> {
    pub fn new(cfg: NAdamConfig) -> Self {
        Self {
            cfg,
            step: 0,
            mu_product: 1.0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    fn momentum_at(&self, step: u64) -> f64 {
        self.cfg.beta1 * (1.0 - 0.5 * 0.96f64.powf(step as f64 * self.cfg.momentum_decay))
    }

    /// Applies one update to every parameter from its accumulated gradient.
    ///
    /// The parameter list must be presented in the same order on every call.
    pub fn step(&mut self, params: &mut [&mut Param<T>]) {
        if self.first.is_empty() {
            self.first = params.iter().map(|p| vec![T::zero(); p.len()]).collect();
            self.second = self.first.clone();
        }
        assert_eq!(
            self.first.len(),
            params.len(),
            "parameter set changed between steps"
        );

        self.step += 1;
        let mu = self.momentum_at(self.step);
        let mu_next = self.momentum_at(self.step + 1);
        self.mu_product *= mu;
        let mu_product_next = self.mu_product * mu_next;
        let bias2 = 1.0 - self.cfg.beta2.powf(self.step as f64);

        let lr = self.cfg.learning_rate;
        let b1 = T::lit(self.cfg.beta1);
        let b2 = T::lit(self.cfg.beta2);
        let one = T::one();
        let grad_coef = T::lit(lr * (1.0 - mu) / (1.0 - self.mu_product));
        let moment_coef = T::lit(lr * mu_next / (1.0 - mu_product_next));
        let inv_bias2 = T::lit(1.0 / bias2);
        let eps = T::lit(self.cfg.eps);

        for ((p, m), v) in params.iter_mut().zip(&mut self.first).zip(&mut self.second) {
            assert_eq!(p.len(), m.len(), "parameter resized between steps");
            for i in 0..p.len() {
                let g = p.grad[i];
                m[i] = b1 * m[i] + (one - b1) * g;
                v[i] = b2 * v[i] + (one - b2) * g * g;
                let denom = (v[i] * inv_bias2).sqrt() + eps;
                p.value[i] -= (grad_coef * g + moment_coef * m[i]) / denom;
            }
        }
    }
}
