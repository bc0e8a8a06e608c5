//! Stereo image alignment by normalized cross correlation.
//!
//! The crate provides the full 2D block NCC (direct and sum-table
//! accelerated), the diagonal-only variant that reduces the per-shift
//! numerator from `D*D` to `D` multiply-adds, a streaming variant that
//! replaces block means by a causal moving average and models the noise
//! of an analog multiply/integrate stage, and the alignment pipeline built
//! on top of them (partitioning, disparity estimation, interpolation,
//! warping and correlation metrics).
//!
//! Intensities are `f64` values normalized to `[0, 1]` at the file boundary.

pub mod align;
pub mod diag;
mod error;
pub mod imageio;
pub mod ncc;
pub mod rng;
pub mod stream;

pub use error::{Error, PgmError, Result};
pub use imageio::GrayImage;
