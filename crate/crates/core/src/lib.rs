//! Diffusion-guided test-time input adaptation for 3D point clouds.
//!
//! Each test cloud is corrected by optimizing a rotation plus per-point
//! displacement so that it agrees, in Chamfer distance, with the one-step
//! denoised estimates of a diffusion model trained on the source domain.
//! The crate also contains the desk-scale benchmark used to evaluate this:
//! synthetic shapes, corruptions, a small classifier and the pipeline.

pub mod adapt;
pub mod classifier;
pub mod corrupt;
pub mod denoise;
pub mod error;
pub mod geometry;
pub mod harness;
pub mod numeric;
pub mod rng;
pub mod schedule;

pub use error::{Error, Result};
pub use geometry::{Point, PointCloud};
