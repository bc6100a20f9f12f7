//! Small fully-connected networks with hand-rolled reverse-mode gradients,
//! jet (value plus tangent) propagation for objectives on spatial gradients,
//! triplane feature grids, and the prior feature oracle.

mod mlp;
mod oracle;
mod triplane;

pub use mlp::{
    sigmoid, softplus, Activation, JetScratch, Layer, MlpGrads, MlpScratch, MlpWeights, SharedMlp,
};
pub use oracle::{ColorFn, PriorOracle};
pub use triplane::TriPlane;
