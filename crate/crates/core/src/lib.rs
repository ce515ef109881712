//! Pure algorithmic core for multi-person text-driven motion generation.
//!
//! Everything in this crate works on plain `f64` buffers and needs only
//! `alloc`: the group-motion data model, a simplified 24-joint skeleton with
//! capsule proxies, the geometric curation operators, the deterministic text
//! conditioning, diffusion schedule arithmetic, the evaluation metric
//! kernels and a procedural toy corpus. Tensor code, IO and the CLI live in
//! the companion crates.

#![no_std]

extern crate alloc;
#[cfg(any(feature = "std", test))]
extern crate std;

pub mod corpus;
pub mod curation;
pub mod error;
pub mod geom;
pub mod kinematics;
pub mod metrics;
pub mod repr;
pub mod schedule;
pub mod textcond;

pub use error::{Error, Result};
pub use repr::{GroupMotion, MotionSample, PoseVector, Rotation6D, SourceTag};
