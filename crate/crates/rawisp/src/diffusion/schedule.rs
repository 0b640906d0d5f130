//! DDPM noise schedule and the forward (noising) process.

use crate::error::{Error, Result};
use crate::nn::ops;
use crate::nn::tensor::Tensor;

pub const BETA_START: f64 = 1e-4;
pub const BETA_END: f64 = 2e-2;

/// Variance schedule over `T` steps. `alpha_bar` is indexed with t in
/// 1..=T; `alpha_bar(0)` is defined as 1 (no noise).
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    t_steps: usize,
    betas: Vec<f64>,
    alpha_bar: Vec<f64>,
}

impl NoiseSchedule {
    /// Linearly spaced betas from `beta_start` to `beta_end`.
    pub fn linear(t_steps: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        if t_steps < 2 {
            return Err(Error::Parameter(format!("schedule needs at least 2 steps, got {t_steps}")));
        }
        if !(beta_start > 0.0 && beta_end < 1.0 && beta_start <= beta_end) {
            return Err(Error::Parameter(format!(
                "betas must satisfy 0 < start <= end < 1, got {beta_start}..{beta_end}"
            )));
        }
        let mut betas = Vec::with_capacity(t_steps);
        let mut alpha_bar = Vec::with_capacity(t_steps);
        let mut prod = 1.0f64;
        for i in 0..t_steps {
            let beta = beta_start + (beta_end - beta_start) * i as f64 / (t_steps - 1) as f64;
            prod *= 1.0 - beta;
            betas.push(beta);
            alpha_bar.push(prod);
        }
        Ok(NoiseSchedule { t_steps, betas, alpha_bar })
    }

    pub fn default_linear(t_steps: usize) -> Result<Self> {
        Self::linear(t_steps, BETA_START, BETA_END)
    }

    pub fn t_steps(&self) -> usize {
        self.t_steps
    }

    /// t in 1..=T.
    pub fn beta(&self, t: usize) -> f64 {
        self.betas[t - 1]
    }

    /// Cumulative product of alphas; `alpha_bar(0) == 1`.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        if t == 0 {
            1.0
        } else {
            self.alpha_bar[t - 1]
        }
    }

    pub fn check_t(&self, t: usize) -> Result<()> {
        if t < 1 || t > self.t_steps {
            return Err(Error::Parameter(format!("timestep {t} outside 1..={}", self.t_steps)));
        }
        Ok(())
    }
}

/// z_t = sqrt(alpha_bar[t]) * z0 + sqrt(1 - alpha_bar[t]) * eps, with one
/// timestep per batch sample.
pub fn forward_diffuse(
    z0: &Tensor<f32>,
    ts: &[usize],
    eps: &Tensor<f32>,
    schedule: &NoiseSchedule,
) -> Result<Tensor<f32>> {
    if z0.shape() != eps.shape() {
        return Err(Error::Dimension(format!(
            "z0 shape {:?} does not match eps {:?}",
            z0.shape(),
            eps.shape()
        )));
    }
    let n = z0.shape().first().copied().unwrap_or(0);
    if ts.len() != n {
        return Err(Error::Dimension(format!("{} timesteps for batch of {n}", ts.len())));
    }
    let mut signal = Vec::with_capacity(n);
    let mut noise = Vec::with_capacity(n);
    for &t in ts {
        schedule.check_t(t)?;
        let ab = schedule.alpha_bar(t);
        signal.push(ab.sqrt() as f32);
        noise.push((1.0 - ab).sqrt() as f32);
    }
    let a = ops::scale_per_sample(z0, &signal)?;
    let b = ops::scale_per_sample(eps, &noise)?;
    ops::add(&a, &b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn schedule_invariants() {
        let s = NoiseSchedule::default_linear(1000).unwrap();
        assert!(s.beta(1) > 0.0 && s.beta(1000) < 1.0);
        for t in 2..=1000 {
            assert!(s.beta(t) >= s.beta(t - 1), "betas must be non-decreasing");
            assert!(s.alpha_bar(t) < s.alpha_bar(t - 1), "alpha_bar must strictly decrease");
        }
        assert!(s.alpha_bar(1) > 0.99);
        assert!(s.alpha_bar(1000) < 1e-4);
    }

    #[test]
    fn diffuse_limits() {
        // Near t=1 the sample is almost z0; near t=T it is almost eps.
        let s = NoiseSchedule::default_linear(1000).unwrap();
        let z0 = Tensor::<f32>::from_vec(&[1, 4], vec![1.0, -1.0, 0.5, 2.0]).unwrap();
        let eps = Tensor::<f32>::from_vec(&[1, 4], vec![0.3, 0.3, 0.3, 0.3]).unwrap();

        let early = forward_diffuse(&z0, &[1], &eps, &s).unwrap();
        for (a, b) in early.to_vec().iter().zip(z0.to_vec().iter()) {
            assert!((a - b).abs() < 0.02, "{a} vs {b}");
        }
        let late = forward_diffuse(&z0, &[1000], &eps, &s).unwrap();
        for (a, b) in late.to_vec().iter().zip(eps.to_vec().iter()) {
            assert!((a - b).abs() < 0.05, "{a} vs {b}");
        }
    }

    #[test]
    fn diffuse_variance_preserved() {
        // With unit-variance z0 and eps the marginal variance stays 1.
        let s = NoiseSchedule::default_linear(1000).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let n = 10_000;
        let t = 400usize;
        let mut acc = 0.0f64;
        let mut acc2 = 0.0f64;
        for _ in 0..n {
            let z0 = Tensor::<f32>::from_vec(&[1, 1], vec![rng.sample(rand_distr::StandardNormal)]).unwrap();
            let eps = Tensor::<f32>::from_vec(&[1, 1], vec![rng.sample(rand_distr::StandardNormal)]).unwrap();
            let zt = forward_diffuse(&z0, &[t], &eps, &s).unwrap().item() as f64;
            acc += zt;
            acc2 += zt * zt;
        }
        let mean = acc / n as f64;
        let var = acc2 / n as f64 - mean * mean;
        assert!((var - 1.0).abs() < 0.05, "variance {var}");
    }

    #[test]
    fn diffuse_rejects_bad_t() {
        let s = NoiseSchedule::default_linear(100).unwrap();
        let z = Tensor::<f32>::zeros(&[1, 2]);
        assert!(forward_diffuse(&z, &[0], &z.detach(), &s).is_err());
        assert!(forward_diffuse(&z, &[101], &z.detach(), &s).is_err());
    }
}
