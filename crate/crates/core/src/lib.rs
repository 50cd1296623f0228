//! Grid radiance fields trained by differentiable volume rendering, and the
//! pipelines built on them: pose-referenced residual video coding and
//! disparity-map extraction for obstacle clearance.
//!
//! The crate is `no_std` (with `alloc`). Enable `parallel` to render and
//! train with rayon. Renders are identical with and without it. Training
//! reduces gradients over a fixed number of chunks in order, so a `parallel`
//! build gives the same result for any thread count, though it can differ
//! from a sequential build in the last bits.

#![cfg_attr(not(any(feature = "std", test)), no_std)]

extern crate alloc;

pub mod aabb;
pub mod camera;
pub mod codec;
pub mod depthnav;
pub mod dynamic;
pub mod field;
pub mod gradcheck;
pub mod image;
pub mod math;
pub mod metrics;
pub mod render;
pub mod scene;
pub mod train;
pub mod wire;

pub use aabb::Aabb;
pub use camera::{CameraPose, Intrinsics, Ray};
pub use field::{level_resolutions, LevelSchedule, MultiresField};
pub use image::{Frame, Image, ImageF};
pub use math::Vec3;
pub use render::{FieldValue, FrameMaps, RadianceField};
