//! Blind watermarking in the curvelet domain.
//!
//! Patterns are confined to the frequency support of a single curvelet wedge so
//! that the forward/inverse transform pair does not strip them. The crate also
//! carries the attack simulators, quality metrics and benchmark runner used to
//! evaluate robustness.

pub mod attacks;
pub mod bench;
pub mod error;
pub mod fdct;
pub mod fourier;
pub mod geometry;
pub mod image;
pub mod keyfile;
pub mod metrics;
pub mod prng;
pub mod watermark;
pub mod wedge_pattern;

pub use error::{Error, Result};
pub use fdct::{CurveletPyramid, FdctPlan, PlanConfig, WedgeMask};
pub use image::Image;
pub use wedge_pattern::{Pattern, Seed, WatermarkKey};
