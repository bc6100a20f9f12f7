//! Sphere-traced signed-distance rendering with tri-plane texture decoding.
//!
//! The crate is organized bottom-up:
//!
//! * [`core`] — vectors, orthographic cameras, image buffers, deterministic
//!   reductions and the seeded generator used by all procedural content.
//! * [`fields`] — analytic and neural signed-distance fields, occupancy
//!   oracles, and the SDF-to-density transform.
//! * [`neural`] — small fully-connected networks with reverse-mode gradients
//!   (including gradients of input-gradients), tri-plane feature grids, and
//!   the prior oracle that supplies per-point features and reference colors.
//! * [`tracer`] — sphere tracing and occupancy ray marching.
//! * [`renderer`] — interval volume rendering around surface hits, two-stage
//!   anchor blending, and full view rendering.
//! * [`losses`] — geometry and color-supervision objectives.
//! * [`fitting`] — Adam-based distillation of an occupancy oracle into a
//!   neural SDF.
//! * [`cli`] — scene configs, fixture generation, and the command-line tool.

pub mod core;
pub mod error;
pub mod fields;
pub mod fitting;
pub mod losses;
pub mod neural;
pub mod renderer;
pub mod tracer;

pub use error::{Error, Result};
