//! Central finite-difference verification of the backward pass.
//!
//! Test support: the numeric side only ever calls forward code, so it stays
//! independent of the backward implementations it checks.

use crate::error::{Error, Result};
use crate::nn::tensor::{no_grad, Tensor};

#[derive(Debug, Clone, Copy)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub elements_checked: usize,
}

/// Compare analytic gradients of `loss_fn` (a scalar function of `inputs`)
/// against central differences with step `eps`. Returns the worst relative
/// error over every element of every input.
pub fn check_gradients(
    inputs: &[Tensor<f64>],
    loss_fn: impl Fn() -> Result<Tensor<f64>>,
    eps: f64,
) -> Result<GradCheckReport> {
    for t in inputs {
        t.zero_grad();
        if !t.requires_grad() {
            return Err(Error::Parameter("gradcheck inputs must require grad".into()));
        }
    }
    let loss = loss_fn()?;
    if loss.len() != 1 {
        return Err(Error::Dimension("gradcheck loss must be scalar".into()));
    }
    loss.backward()?;
    let analytic: Vec<Vec<f64>> =
        inputs.iter().map(|t| t.grad().unwrap_or_else(|| vec![0.0; t.len()])).collect();

    let mut max_rel = 0.0f64;
    let mut checked = 0usize;
    for (ti, t) in inputs.iter().enumerate() {
        for j in 0..t.len() {
            let orig = t.data()[j];
            t.update_data(|d| d[j] = orig + eps);
            let lp = no_grad(&loss_fn)?.item();
            t.update_data(|d| d[j] = orig - eps);
            let lm = no_grad(&loss_fn)?.item();
            t.update_data(|d| d[j] = orig);
            let numeric = (lp - lm) / (2.0 * eps);
            let ana = analytic[ti][j];
            let rel = (numeric - ana).abs() / numeric.abs().max(ana.abs()).max(1.0);
            if rel > max_rel {
                max_rel = rel;
            }
            checked += 1;
        }
    }
    Ok(GradCheckReport { max_rel_err: max_rel, elements_checked: checked })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::ops;

    #[test]
    fn catches_simple_gradients() {
        let x = Tensor::<f64>::param(&[4], vec![0.4, -0.3, 1.2, 0.05]).unwrap();
        let report = check_gradients(
            &[x.clone()],
            || {
                let y = ops::silu(&x);
                ops::mse_loss(&y, &Tensor::zeros(&[4]))
            },
            1e-5,
        )
        .unwrap();
        assert!(report.max_rel_err < 1e-7, "rel err {}", report.max_rel_err);
        assert_eq!(report.elements_checked, 4);
    }
}
