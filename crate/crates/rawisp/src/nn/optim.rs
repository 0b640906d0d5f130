//! Adam with decoupled weight decay and a warmup-then-cosine learning-rate
//! schedule.

use crate::error::{Error, Result};
use crate::nn::layers::ParamList;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub warmup_steps: usize,
    pub total_steps: usize,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 5e-5,
            warmup_steps: 500,
            total_steps: 10_000,
            weight_decay: 1e-2,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    /// Effective learning rate at a step: linear ramp 0 -> lr over the
    /// warmup, then cosine decay to 0 at `total_steps`.
    pub fn lr_at(&self, step: usize) -> f64 {
        if self.warmup_steps > 0 && step < self.warmup_steps {
            return self.lr * step as f64 / self.warmup_steps as f64;
        }
        if step >= self.total_steps {
            return 0.0;
        }
        let span = (self.total_steps - self.warmup_steps).max(1) as f64;
        let t = (step - self.warmup_steps) as f64 / span;
        self.lr * 0.5 * (1.0 + (std::f64::consts::PI * t).cos())
    }
}

pub struct Adam {
    cfg: AdamConfig,
    params: ParamList,
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
    step_count: usize,
}

impl Adam {
    pub fn new(params: ParamList, cfg: AdamConfig) -> Self {
        let m = params.iter().map(|(_, p)| vec![0.0f32; p.len()]).collect();
        let v = params.iter().map(|(_, p)| vec![0.0f32; p.len()]).collect();
        Adam { cfg, params, m, v, step_count: 0 }
    }

    pub fn step_count(&self) -> usize {
        self.step_count
    }

    pub fn config(&self) -> &AdamConfig {
        &self.cfg
    }

    pub fn zero_grads(&self) {
        for (_, p) in &self.params {
            p.zero_grad();
        }
    }

    /// One update over all parameters from their accumulated gradients.
    /// A missing gradient counts as zero; a non-finite one aborts training.
    pub fn step(&mut self) -> Result<()> {
        let lr = self.cfg.lr_at(self.step_count);
        let t = (self.step_count + 1) as i32;
        let bc1 = 1.0 - self.cfg.beta1.powi(t);
        let bc2 = 1.0 - self.cfg.beta2.powi(t);
        let (b1, b2) = (self.cfg.beta1 as f32, self.cfg.beta2 as f32);
        let eps = self.cfg.eps as f32;
        let decay = (1.0 - lr * self.cfg.weight_decay) as f32;

        for (i, (name, p)) in self.params.iter().enumerate() {
            let grad = p.grad().unwrap_or_else(|| vec![0.0; p.len()]);
            if grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::Training(format!("non-finite gradient in parameter {name}")));
            }
            let m = &mut self.m[i];
            let v = &mut self.v[i];
            p.update_data(|data| {
                for j in 0..data.len() {
                    let g = grad[j];
                    m[j] = b1 * m[j] + (1.0 - b1) * g;
                    v[j] = b2 * v[j] + (1.0 - b2) * g * g;
                    let m_hat = m[j] as f64 / bc1;
                    let v_hat = v[j] as f64 / bc2;
                    data[j] *= decay;
                    data[j] -= (lr * m_hat / (v_hat.sqrt() + eps as f64)) as f32;
                }
            });
        }
        self.step_count += 1;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::ops;
    use crate::nn::tensor::Tensor;

    #[test]
    fn schedule_endpoints() {
        let cfg = AdamConfig { total_steps: 2000, ..Default::default() };
        assert_eq!(cfg.lr_at(0), 0.0);
        assert!((cfg.lr_at(500) - 5e-5).abs() < 1e-12);
        assert!(cfg.lr_at(2000) < 1e-9 * cfg.lr);
    }

    #[test]
    fn schedule_is_continuous_and_peaks_at_warmup() {
        let cfg = AdamConfig { total_steps: 3000, ..Default::default() };
        let mut max_jump = 0.0f64;
        let mut peak = (0usize, 0.0f64);
        let mut prev = cfg.lr_at(0);
        for s in 1..=3000 {
            let cur = cfg.lr_at(s);
            max_jump = max_jump.max((cur - prev).abs());
            if cur > peak.1 {
                peak = (s, cur);
            }
            prev = cur;
        }
        assert!(max_jump < cfg.lr * 0.01, "schedule jumps by {max_jump}");
        assert_eq!(peak.0, cfg.warmup_steps);
    }

    #[test]
    fn zero_grad_and_zero_decay_leaves_params() {
        let p = Tensor::<f32>::param(&[3], vec![1.0, -2.0, 3.0]).unwrap();
        let cfg = AdamConfig { weight_decay: 0.0, warmup_steps: 0, ..Default::default() };
        let mut opt = Adam::new(vec![("p".into(), p.clone())], cfg);
        opt.zero_grads();
        opt.step().unwrap();
        assert_eq!(p.to_vec(), vec![1.0, -2.0, 3.0]);
    }

    #[test]
    fn quadratic_objective_decreases() {
        // f(w) = mean(w^2): a few steps from w=1 should shrink |w|.
        let w = Tensor::<f32>::param(&[1], vec![1.0]).unwrap();
        let cfg = AdamConfig {
            lr: 0.05,
            warmup_steps: 0,
            total_steps: 1000,
            weight_decay: 0.0,
            ..Default::default()
        };
        let mut opt = Adam::new(vec![("w".into(), w.clone())], cfg);
        for _ in 0..20 {
            opt.zero_grads();
            let loss = ops::mse_loss(&w, &Tensor::zeros(&[1])).unwrap();
            loss.backward().unwrap();
            opt.step().unwrap();
        }
        let wv = w.item().abs();
        assert!(wv < 1.0, "|w| should decrease, got {wv}");
    }

    #[test]
    fn nan_gradient_names_parameter() {
        let p = Tensor::<f32>::param(&[1], vec![1.0]).unwrap();
        p.accumulate_grad(&[f32::NAN]);
        let mut opt = Adam::new(vec![("layer.weight".into(), p)], AdamConfig::default());
        let err = opt.step().unwrap_err();
        assert!(err.to_string().contains("layer.weight"), "{err}");
    }
}
