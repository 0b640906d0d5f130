//! Dense-array math with reverse-mode autodiff: the tensor graph, the layer
//! ops the denoiser needs, Adam with a warmup/cosine schedule, and the
//! checkpoint container.

pub mod checkpoint;
pub mod gradcheck;
pub mod kernels;
pub mod layers;
pub mod ops;
pub mod optim;
pub mod tensor;

pub use checkpoint::{load_checkpoint, load_state_into, save_checkpoint, Checkpoint};
pub use layers::{Conv2d, ConvTranspose2d, Embedding, GroupNorm, Linear, ParamList};
pub use optim::{Adam, AdamConfig};
pub use tensor::{grad_enabled, no_grad, Scalar, Tensor};
