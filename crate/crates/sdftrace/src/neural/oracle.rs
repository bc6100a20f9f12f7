use std::fmt;
use std::sync::Arc;

use crate::core::Vec3;
use crate::error::{Error, Result};
use crate::fields::OccupancyOracle;

/// Shape prior queried during feature encoding and by color-capable scenes.
///
/// The feature vector handed to networks is
/// [sin/cos positional encoding (6 per frequency), occupancy, zero padding]
/// with a fixed total width so different priors stay interchangeable.
pub struct PriorOracle {
    occupancy: OccupancyOracle,
    color: Option<ColorFn>,
    n_freqs: usize,
    feature_dim: usize,
}

/// Color prior c(X) used when shading against an oracle.
#[derive(Clone)]
pub enum ColorFn {
    Constant([f64; 3]),
    /// Shade by the shape normal mapped into [0,1]^3.
    NormalShade(Arc<crate::fields::SdfShape>),
    Custom(Arc<dyn Fn(Vec3) -> [f64; 3] + Send + Sync>),
}

impl fmt::Debug for ColorFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ColorFn::Constant(c) => write!(f, "Constant({c:?})"),
            ColorFn::NormalShade(_) => write!(f, "NormalShade"),
            ColorFn::Custom(_) => write!(f, "Custom"),
        }
    }
}

impl fmt::Debug for PriorOracle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PriorOracle")
            .field("occupancy", &self.occupancy)
            .field("color", &self.color)
            .field("n_freqs", &self.n_freqs)
            .field("feature_dim", &self.feature_dim)
            .finish()
    }
}

impl PriorOracle {
    pub const DEFAULT_FREQS: usize = 8;
    pub const DEFAULT_FEATURE_DIM: usize = 257;

    pub fn new(occupancy: OccupancyOracle, color: Option<ColorFn>) -> Self {
        PriorOracle {
            occupancy,
            color,
            n_freqs: Self::DEFAULT_FREQS,
            feature_dim: Self::DEFAULT_FEATURE_DIM,
        }
    }

    /// Non-default widths, mostly for compact test fixtures.
    pub fn with_dims(
        occupancy: OccupancyOracle,
        color: Option<ColorFn>,
        n_freqs: usize,
        feature_dim: usize,
    ) -> Result<Self> {
        let active = 6 * n_freqs + 1;
        if feature_dim < active {
            return Err(Error::config(format!(
                "feature dim {feature_dim} cannot hold {n_freqs} frequencies plus occupancy ({active} values)"
            )));
        }
        Ok(PriorOracle {
            occupancy,
            color,
            n_freqs,
            feature_dim,
        })
    }

    /// Copy of this oracle with the color target swapped out; encoding
    /// dims and occupancy carry over.
    pub fn with_color(&self, color: ColorFn) -> PriorOracle {
        PriorOracle {
            occupancy: self.occupancy.clone(),
            color: Some(color),
            n_freqs: self.n_freqs,
            feature_dim: self.feature_dim,
        }
    }

    pub fn occupancy(&self) -> &OccupancyOracle {
        &self.occupancy
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    /// Number of leading feature entries that can be nonzero.
    pub fn active_len(&self) -> usize {
        6 * self.n_freqs + 1
    }

    pub fn has_color(&self) -> bool {
        self.color.is_some()
    }

    /// Fills `out` (length `feature_dim`) with the encoding of `x`.
    ///
    /// Layout per frequency k (angular frequency 2^k pi): sin and cos of
    /// each coordinate, x first, then the occupancy channel, then zeros.
    pub fn features_into(&self, x: Vec3, out: &mut [f64]) -> Result<()> {
        self.check_len(out.len())?;
        out.iter_mut().for_each(|v| *v = 0.0);
        for k in 0..self.n_freqs {
            let omega = (1u64 << k) as f64 * std::f64::consts::PI;
            for axis in 0..3 {
                let (s, c) = (omega * x.component(axis)).sin_cos();
                out[k * 6 + axis * 2] = s;
                out[k * 6 + axis * 2 + 1] = c;
            }
        }
        out[6 * self.n_freqs] = self.occupancy.eval(x);
        Ok(())
    }

    /// Prior color at a point; scenes without a color prior refuse the query.
    pub fn color(&self, x: Vec3) -> Result<[f64; 3]> {
        match &self.color {
            None => Err(Error::contract(
                "scene oracle has no color function but shading requested one",
            )),
            Some(ColorFn::Constant(c)) => Ok(*c),
            Some(ColorFn::NormalShade(shape)) => {
                let n = shape.gradient(x);
                Ok([0.5 * (n.x + 1.0), 0.5 * (n.y + 1.0), 0.5 * (n.z + 1.0)])
            }
            Some(ColorFn::Custom(f)) => Ok(f(x)),
        }
    }

    fn check_len(&self, len: usize) -> Result<()> {
        if len != self.feature_dim {
            return Err(Error::shape(format!(
                "feature buffer length {len} does not match feature dim {}",
                self.feature_dim
            )));
        }
        Ok(())
    }
}
