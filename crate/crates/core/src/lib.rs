//! Sparse voxel light fields.
//!
//! A scene is represented by a sparse voxel octree whose leaf corners carry
//! learnable feature vectors. For every voxel a ray crosses, a small decoder
//! predicts an optical thickness and a within-voxel surface position from the
//! features at the ray's entry and exit points, and a second decoder predicts
//! the color at that surface point. Ray colors are alpha composited front to
//! back over the traversed voxels.
//!
//! The crate also ships an analytic ray caster that produces exact RGB, depth
//! and mask ground truth for procedural scenes, the on-disk dataset and
//! checkpoint formats, and the image/depth metrics used for evaluation.

pub mod camera;
pub mod checkpoint;
pub mod dataset;
pub mod decoders;
pub mod error;
pub mod features;
pub mod image_buf;
pub mod metrics;
pub mod model;
pub mod octree;
pub mod real;
pub mod rendering;
pub mod scenegen;
pub mod training;

pub use error::{Result, SvlfError};
pub use real::Real;
