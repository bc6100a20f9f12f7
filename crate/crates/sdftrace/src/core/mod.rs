//! Geometry and image primitives shared by every other module.

mod camera;
mod image;
mod reduce;
mod rng;
mod vec3;

pub use camera::{OrthoCamera, Projected};
pub use image::{bilinear_grid, ImageBuffer};
pub use reduce::{deterministic_mean, deterministic_sum};
pub use rng::SplitMix64;
pub use vec3::{Ray, Vec3};
