//! Conditional latent diffusion over packed RAW conditioning: noise
//! schedule, model, dual classifier-free guidance, ancestral sampling and
//! the training loop.

pub mod guidance;
pub mod model;
pub mod sampler;
pub mod schedule;
pub mod train;

pub use guidance::{cfg_dual, cfg_single, GuidanceConfig};
pub use model::{
    ConditionalDenoiser, DiffusionModel, ModelConfig, NULL_TEXT_ID, TEXT_TEMPLATES,
};
pub use sampler::{reverse_chain, sample, sample_image, strided_timesteps, SampleOpts};
pub use schedule::{forward_diffuse, NoiseSchedule};
pub use train::{
    build_val_batch, diffusion_mse, load_pairs, train, training_loss, validation_loss,
    DropoutKind, PairData, TrainConfig, TrainReport, ValBatch,
};
