//! Classifier-free guidance composition, single- and dual-conditioning.

use crate::error::{Error, Result};

/// Guidance strengths for the two conditioning channels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GuidanceConfig {
    /// Image conditioning scale.
    pub s_image: f32,
    /// Text conditioning scale.
    pub s_text: f32,
}

impl Default for GuidanceConfig {
    fn default() -> Self {
        GuidanceConfig { s_image: 1.0, s_text: 0.0 }
    }
}

impl GuidanceConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("s_image", self.s_image), ("s_text", self.s_text)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Parameter(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        Ok(())
    }

    /// Denoiser evaluations one reverse step costs under these scales.
    pub fn passes(&self) -> usize {
        if self.s_text != 0.0 {
            3
        } else if self.s_image != 0.0 {
            2
        } else {
            1
        }
    }
}

/// Single-conditioning guidance: move from the unconditional estimate
/// towards the conditional one.
pub fn cfg_single(e_cond: &[f32], e_uncond: &[f32], s: f32) -> Result<Vec<f32>> {
    if e_cond.len() != e_uncond.len() {
        return Err(Error::Dimension(format!(
            "guidance buffers differ in length: {} vs {}",
            e_cond.len(),
            e_uncond.len()
        )));
    }
    Ok(e_cond
        .iter()
        .zip(e_uncond)
        .map(|(&c, &u)| u + s * (c - u))
        .collect())
}

/// Dual guidance over image and text conditioning:
/// e_uu + s_image * (e_iu - e_uu) + s_text * (e_it - e_iu),
/// where e_uu is fully unconditional, e_iu image-conditioned only, and e_it
/// conditioned on both.
pub fn cfg_dual(
    e_uu: &[f32],
    e_iu: &[f32],
    e_it: &[f32],
    s_image: f32,
    s_text: f32,
) -> Result<Vec<f32>> {
    if e_uu.len() != e_iu.len() || e_uu.len() != e_it.len() {
        return Err(Error::Dimension(format!(
            "guidance buffers differ in length: {} / {} / {}",
            e_uu.len(),
            e_iu.len(),
            e_it.len()
        )));
    }
    Ok(e_uu
        .iter()
        .zip(e_iu)
        .zip(e_it)
        .map(|((&uu, &iu), &it)| uu + s_image * (iu - uu) + s_text * (it - iu))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn randv(rng: &mut ChaCha8Rng, n: usize) -> Vec<f32> {
        (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect()
    }

    #[test]
    fn single_collapses() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let c = randv(&mut rng, 64);
        let u = randv(&mut rng, 64);
        assert_eq!(cfg_single(&c, &u, 1.0).unwrap(), c);
        assert_eq!(cfg_single(&c, &u, 0.0).unwrap(), u);
        // Linearity in s against the direct formula.
        for &s in &[0.3f32, 1.7, 4.0] {
            let got = cfg_single(&c, &u, s).unwrap();
            for i in 0..c.len() {
                let want = u[i] + s * (c[i] - u[i]);
                assert!((got[i] - want).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn dual_collapses() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            let uu = randv(&mut rng, 48);
            let iu = randv(&mut rng, 48);
            let it = randv(&mut rng, 48);
            let zz = cfg_dual(&uu, &iu, &it, 0.0, 0.0).unwrap();
            let io = cfg_dual(&uu, &iu, &it, 1.0, 0.0).unwrap();
            let ii = cfg_dual(&uu, &iu, &it, 1.0, 1.0).unwrap();
            for i in 0..48 {
                assert!((zz[i] - uu[i]).abs() < 1e-6);
                assert!((io[i] - iu[i]).abs() < 1e-6);
                assert!((ii[i] - it[i]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn pass_counts() {
        assert_eq!(GuidanceConfig { s_image: 0.0, s_text: 0.0 }.passes(), 1);
        assert_eq!(GuidanceConfig { s_image: 1.0, s_text: 0.0 }.passes(), 2);
        assert_eq!(GuidanceConfig { s_image: 1.0, s_text: 1.5 }.passes(), 3);
    }

    #[test]
    fn rejects_negative_scale() {
        assert!(GuidanceConfig { s_image: -1.0, s_text: 0.0 }.validate().is_err());
    }
}
