use std::f64::consts::PI;

use super::layers::Param;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

/// AdamW with decoupled weight decay. Moments are matched to parameters by
/// position, so every call must pass the parameters in the same order.
#[derive(Debug, Clone, Default)]
pub struct AdamW {
    pub config: AdamWConfig,
    step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl AdamW {
    pub fn new(config: AdamWConfig) -> Self {
        Self {
            config,
            ..Default::default()
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, params: &mut [&mut Param], lr: f64) {
        if self.first.is_empty() {
            self.first = params.iter().map(|p| vec![0.0; p.len()]).collect();
            self.second = self.first.clone();
        }
        assert_eq!(self.first.len(), params.len(), "parameter list changed");
        self.step += 1;
        let AdamWConfig {
            beta1,
            beta2,
            eps,
            weight_decay,
        } = self.config;
        let t = self.step as i32;
        let bc1 = 1.0 - beta1.powi(t);
        let bc2 = 1.0 - beta2.powi(t);
        let decay = 1.0 - lr * weight_decay;

        for ((param, m), v) in params.iter_mut().zip(&mut self.first).zip(&mut self.second) {
            let grad = param.grad.data().to_vec();
            let values = param.value.data_mut();
            assert_eq!(values.len(), m.len(), "parameter shape changed");
            for i in 0..values.len() {
                let g = grad[i];
                m[i] = beta1 * m[i] + (1.0 - beta1) * g;
                v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                values[i] = values[i] * decay - lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
    }
}

/// Cosine annealing from `lr0` at epoch 0 to zero at `total_epochs`.
pub fn cosine_lr(epoch: usize, total_epochs: usize, lr0: f64) -> f64 {
    if total_epochs == 0 {
        return lr0;
    }
    let progress = epoch.min(total_epochs) as f64 / total_epochs as f64;
    lr0 * (1.0 + (PI * progress).cos()) / 2.0
}
