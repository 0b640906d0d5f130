//! End-to-end generative RAW processing for low-light images.
//!
//! The crate covers the full loop at desk scale: Bayer RAW containers and
//! preprocessing ([`raw`]), a classical rendering baseline ([`isp`]), a
//! synthetic low-light pair generator ([`sim`]), a small autodiff core
//! ([`nn`]), a conditional latent diffusion model with dual classifier-free
//! guidance ([`diffusion`]), image quality metrics ([`metrics`]) and the
//! run configuration shared by the CLI ([`config`]).
//!
//! Data-parallel inner loops run on rayon when the default `parallel`
//! feature is enabled and fall back to sequential execution without it;
//! both paths produce bit-identical results.

pub mod config;
pub mod diffusion;
pub mod error;
pub mod exec;
pub mod isp;
pub mod metrics;
pub mod nn;
pub mod raw;
pub mod sim;
pub mod util;

pub use error::{Error, Result};
