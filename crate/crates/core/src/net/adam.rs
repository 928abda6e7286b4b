use serde::{Deserialize, Serialize};

use super::layers::Parameters;

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
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates for one parameter tensor.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Moments {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

/// One bias-corrected Adam update at step `t` (1-based).
pub fn adam_update(cfg: &AdamConfig, t: u64, params: &mut [f64], grads: &[f64], moments: &mut Moments) {
    debug_assert_eq!(params.len(), grads.len());
    if moments.m.len() != params.len() {
        moments.m = vec![0.0; params.len()];
        moments.v = vec![0.0; params.len()];
    }
    let c1 = 1.0 - cfg.beta1.powi(t as i32);
    let c2 = 1.0 - cfg.beta2.powi(t as i32);
    for (((p, &g), m), v) in params.iter_mut().zip(grads).zip(&mut moments.m).zip(&mut moments.v) {
        *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
        *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        *p -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
    }
}

/// Adam optimizer over every tensor of a [`Parameters`] implementor.
#[derive(Debug, Clone)]
pub struct Adam {
    pub config: AdamConfig,
    step: u64,
    moments: Vec<Moments>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            step: 0,
            moments: Vec::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn moments(&self) -> &[Moments] {
        &self.moments
    }

    pub fn step<P: Parameters + ?Sized>(&mut self, model: &mut P) {
        self.step += 1;
        let t = self.step;
        let cfg = self.config;
        let moments = &mut self.moments;
        let mut idx = 0;
        model.visit_params(&mut |p, g| {
            if moments.len() <= idx {
                moments.push(Moments::default());
            }
            adam_update(&cfg, t, p, g, &mut moments[idx]);
            idx += 1;
        });
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let mut p = vec![0.3, -1.2, 4.0];
        let before = p.clone();
        let mut m = Moments::default();
        adam_update(&AdamConfig::default(), 1, &mut p, &[0.0; 3], &mut m);
        assert_eq!(p, before);
    }

    #[test]
    fn first_unit_step_matches_hand_arithmetic() {
        // m = 0.1, v = 0.001, m_hat = 1, v_hat = 1 -> step = lr / (1 + eps)
        let cfg = AdamConfig::default();
        let mut p = vec![0.0];
        let mut m = Moments::default();
        adam_update(&cfg, 1, &mut p, &[1.0], &mut m);
        assert!((p[0] - (-1e-4 / (1.0 + 1e-8))).abs() < 1e-18);
        assert!((m.m[0] - 0.1).abs() < 1e-15);
        assert!((m.v[0] - 0.001).abs() < 1e-15);
    }

    #[test]
    fn constant_gradient_moments_follow_closed_form() {
        let cfg = AdamConfig::default();
        let g = 0.5;
        let mut p = vec![1.0];
        let mut m = Moments::default();
        adam_update(&cfg, 1, &mut p, &[g], &mut m);
        adam_update(&cfg, 2, &mut p, &[g], &mut m);
        // EMA of a constant: (1 - beta^t) * g
        assert!((m.m[0] - (1.0 - 0.9f64.powi(2)) * g).abs() < 1e-15);
        assert!((m.v[0] - (1.0 - 0.999f64.powi(2)) * g * g).abs() < 1e-15);
        // bias-corrected moments equal g and g^2, so each step is lr * g / (|g| + eps)
        let step = 1e-4 * g / (g + 1e-8);
        assert!((p[0] - (1.0 - 2.0 * step)).abs() < 1e-15);
    }
}
