//! Truncated diffusion planning: anchored Gaussian initialization, a
//! cascade decoder trained on the first steps of the noise schedule, and
//! a benchmark harness comparing it with full-schedule diffusion,
//! single-mode regression, a fixed vocabulary and an extrapolated prior.

pub mod anchors;
pub mod cli;
pub mod denoiser;
pub mod error;
pub mod eval;
pub mod geometry;
mod io_util;
pub mod plan;
pub mod scalar;
pub mod scene;
pub mod schedule;
pub mod train;
pub mod trajectory;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type TrajectoryF64 = trajectory::Trajectory<f64>;
pub type TrajectoryF32 = trajectory::Trajectory<f32>;
pub type AnchorSetF64 = anchors::AnchorSet<f64>;
pub type AnchorSetF32 = anchors::AnchorSet<f32>;
pub type NoiseScheduleF64 = schedule::NoiseSchedule<f64>;
pub type NoiseScheduleF32 = schedule::NoiseSchedule<f32>;
pub type DenoiserParamsF64 = denoiser::DenoiserParams<f64>;
pub type DenoiserParamsF32 = denoiser::DenoiserParams<f32>;
