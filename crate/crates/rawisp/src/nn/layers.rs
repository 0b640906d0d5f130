//! Parameterized layers over the raw ops, with He-style initialization and a
//! uniform named-parameter listing used by the optimizer and checkpoints.

use rand::Rng;

use crate::error::Result;
use crate::nn::ops;
use crate::nn::tensor::Tensor;

pub type ParamList = Vec<(String, Tensor<f32>)>;

fn trainable(t: Tensor<f32>) -> Tensor<f32> {
    t.set_requires_grad(true);
    t
}

pub struct Conv2d {
    pub weight: Tensor<f32>,
    pub bias: Tensor<f32>,
    pub stride: usize,
    pub pad: usize,
}

impl Conv2d {
    pub fn new(ic: usize, oc: usize, k: usize, stride: usize, pad: usize, rng: &mut impl Rng) -> Self {
        let std = (2.0 / (ic * k * k) as f64).sqrt();
        Conv2d {
            weight: trainable(Tensor::randn(&[oc, ic, k, k], std, rng)),
            bias: trainable(Tensor::zeros(&[oc])),
            stride,
            pad,
        }
    }

    /// Zero-initialized variant for output heads.
    pub fn zeroed(ic: usize, oc: usize, k: usize, stride: usize, pad: usize) -> Self {
        Conv2d {
            weight: trainable(Tensor::zeros(&[oc, ic, k, k])),
            bias: trainable(Tensor::zeros(&[oc])),
            stride,
            pad,
        }
    }

    pub fn forward(&self, x: &Tensor<f32>) -> Result<Tensor<f32>> {
        let y = ops::conv2d(x, &self.weight, self.stride, self.pad)?;
        ops::add(&y, &self.bias)
    }

    pub fn params(&self, prefix: &str, out: &mut ParamList) {
        out.push((format!("{prefix}.weight"), self.weight.clone()));
        out.push((format!("{prefix}.bias"), self.bias.clone()));
    }
}

pub struct ConvTranspose2d {
    pub weight: Tensor<f32>,
    pub bias: Tensor<f32>,
    pub stride: usize,
    pub pad: usize,
}

impl ConvTranspose2d {
    pub fn new(ic: usize, oc: usize, k: usize, stride: usize, pad: usize, rng: &mut impl Rng) -> Self {
        let std = (2.0 / (ic * k * k) as f64).sqrt();
        ConvTranspose2d {
            weight: trainable(Tensor::randn(&[ic, oc, k, k], std, rng)),
            bias: trainable(Tensor::zeros(&[oc])),
            stride,
            pad,
        }
    }

    pub fn forward(&self, x: &Tensor<f32>) -> Result<Tensor<f32>> {
        let y = ops::transposed_conv2d(x, &self.weight, self.stride, self.pad)?;
        ops::add(&y, &self.bias)
    }

    pub fn params(&self, prefix: &str, out: &mut ParamList) {
        out.push((format!("{prefix}.weight"), self.weight.clone()));
        out.push((format!("{prefix}.bias"), self.bias.clone()));
    }
}

pub struct GroupNorm {
    pub gamma: Tensor<f32>,
    pub beta: Tensor<f32>,
    pub groups: usize,
}

impl GroupNorm {
    /// Default grouping: 8, or the channel count when smaller.
    pub fn new(channels: usize) -> Self {
        let groups = if channels < 8 { channels } else { 8 };
        GroupNorm {
            gamma: trainable(Tensor::full(&[channels], 1.0)),
            beta: trainable(Tensor::zeros(&[channels])),
            groups,
        }
    }

    pub fn forward(&self, x: &Tensor<f32>) -> Result<Tensor<f32>> {
        ops::group_norm(x, &self.gamma, &self.beta, self.groups)
    }

    pub fn params(&self, prefix: &str, out: &mut ParamList) {
        out.push((format!("{prefix}.gamma"), self.gamma.clone()));
        out.push((format!("{prefix}.beta"), self.beta.clone()));
    }
}

pub struct Linear {
    pub weight: Tensor<f32>,
    pub bias: Tensor<f32>,
}

impl Linear {
    pub fn new(in_features: usize, out_features: usize, rng: &mut impl Rng) -> Self {
        let std = (1.0 / in_features as f64).sqrt();
        Linear {
            weight: trainable(Tensor::randn(&[out_features, in_features], std, rng)),
            bias: trainable(Tensor::zeros(&[out_features])),
        }
    }

    pub fn forward(&self, x: &Tensor<f32>) -> Result<Tensor<f32>> {
        ops::linear(x, &self.weight, Some(&self.bias))
    }

    pub fn params(&self, prefix: &str, out: &mut ParamList) {
        out.push((format!("{prefix}.weight"), self.weight.clone()));
        out.push((format!("{prefix}.bias"), self.bias.clone()));
    }
}

pub struct Embedding {
    pub table: Tensor<f32>,
}

impl Embedding {
    pub fn new(vocab: usize, dim: usize, rng: &mut impl Rng) -> Self {
        Embedding { table: trainable(Tensor::randn(&[vocab, dim], 0.1, rng)) }
    }

    pub fn forward(&self, ids: &[usize]) -> Result<Tensor<f32>> {
        ops::embedding_lookup(&self.table, ids)
    }

    pub fn params(&self, prefix: &str, out: &mut ParamList) {
        out.push((format!("{prefix}.table"), self.table.clone()));
    }
}

/// Mark every parameter in a list trainable or frozen.
pub fn set_trainable(params: &ParamList, trainable: bool) {
    for (_, p) in params {
        p.set_requires_grad(trainable);
    }
}
