//! Denoiser network, diffusion process, training loops and decomposed
//! evaluation for multi-person text-to-motion generation.
//!
//! All tensors are `f32` on the CPU. Randomness is always drawn from an
//! explicit seeded generator on the host, so every run is reproducible.

pub mod batch;
pub mod checkpoint;
pub mod diffusion;
pub mod error;
pub mod evalsuite;
pub mod netcore;
pub mod params;
pub mod trainer;

pub use error::{ModelError, Result};
pub use netcore::{CenterPose, Conditioning, Denoiser, Layout, ModelConfig};
