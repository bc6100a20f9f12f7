//! Signed distance fields: analytic primitives, occupancy oracles, the
//! SDF-to-density mapping, and neural fields that consume oracle features.

use std::fs;
use std::path::Path;
use std::sync::Arc;

use crate::core::Vec3;
use crate::error::{Error, Result};
use crate::neural::{sigmoid, JetScratch, MlpGrads, MlpScratch, MlpWeights, PriorOracle};

/// Analytic signed distance primitives. Negative inside, positive outside,
/// exact Euclidean distance (so gradients have unit norm wherever defined).
#[derive(Debug, Clone, PartialEq)]
pub enum SdfShape {
    Sphere {
        center: Vec3,
        radius: f64,
    },
    Box {
        center: Vec3,
        half_extents: Vec3,
    },
    Capsule {
        a: Vec3,
        b: Vec3,
        radius: f64,
    },
    /// Pointwise minimum over children; ties resolve to the earliest child.
    Union(Vec<SdfShape>),
}

impl SdfShape {
    pub fn eval(&self, x: Vec3) -> f64 {
        match self {
            SdfShape::Sphere { center, radius } => (x - *center).length() - radius,
            SdfShape::Box {
                center,
                half_extents,
            } => {
                let q = (x - *center).abs() - *half_extents;
                let outside = Vec3::new(q.x.max(0.0), q.y.max(0.0), q.z.max(0.0));
                outside.length() + q.max_component().min(0.0)
            }
            SdfShape::Capsule { a, b, radius } => {
                (x - self.capsule_closest(x, *a, *b)).length() - radius
            }
            SdfShape::Union(children) => children
                .iter()
                .map(|c| c.eval(x))
                .fold(f64::INFINITY, f64::min),
        }
    }

    fn capsule_closest(&self, x: Vec3, a: Vec3, b: Vec3) -> Vec3 {
        let ba = b - a;
        let denom = ba.length_squared();
        if denom == 0.0 {
            return a;
        }
        let t = ((x - a).dot(ba) / denom).clamp(0.0, 1.0);
        a + ba * t
    }

    /// Exact gradient where the distance is differentiable. On the measure-
    /// zero tie sets a one-sided choice is made, preferring the x axis, then
    /// y, then z (and the earliest child for unions), so the result is always
    /// a deterministic unit vector.
    pub fn gradient(&self, x: Vec3) -> Vec3 {
        match self {
            SdfShape::Sphere { center, .. } => (x - *center).normalized(),
            SdfShape::Box {
                center,
                half_extents,
            } => {
                let p = x - *center;
                let q = p.abs() - *half_extents;
                let m = Vec3::new(q.x.max(0.0), q.y.max(0.0), q.z.max(0.0));
                let len = m.length();
                if len > 0.0 {
                    let sign = |v: f64| if v < 0.0 { -1.0 } else { 1.0 };
                    Vec3::new(sign(p.x) * m.x, sign(p.y) * m.y, sign(p.z) * m.z) / len
                } else {
                    let axis = if q.x >= q.y && q.x >= q.z {
                        0
                    } else if q.y >= q.z {
                        1
                    } else {
                        2
                    };
                    let s = if p.component(axis) < 0.0 { -1.0 } else { 1.0 };
                    match axis {
                        0 => Vec3::new(s, 0.0, 0.0),
                        1 => Vec3::new(0.0, s, 0.0),
                        _ => Vec3::new(0.0, 0.0, s),
                    }
                }
            }
            SdfShape::Capsule { a, b, .. } => (x - self.capsule_closest(x, *a, *b)).normalized(),
            SdfShape::Union(children) => {
                let mut best = f64::INFINITY;
                let mut grad = Vec3::new(1.0, 0.0, 0.0);
                for c in children {
                    let v = c.eval(x);
                    if v < best {
                        best = v;
                        grad = c.gradient(x);
                    }
                }
                grad
            }
        }
    }
}

/// Voxelized occupancy on a regular grid over an axis-aligned box, sampled
/// with trilinear interpolation. Queries outside the box return zero.
#[derive(Debug, Clone, PartialEq)]
pub struct GridOccupancy {
    nx: usize,
    ny: usize,
    nz: usize,
    bbox_min: Vec3,
    bbox_max: Vec3,
    data: Vec<f32>,
}

impl GridOccupancy {
    pub fn new(
        dims: (usize, usize, usize),
        bbox_min: Vec3,
        bbox_max: Vec3,
        data: Vec<f32>,
    ) -> Result<Self> {
        let (nx, ny, nz) = dims;
        if nx < 2 || ny < 2 || nz < 2 {
            return Err(Error::shape(format!(
                "occupancy grid needs at least 2 nodes per axis, got {nx}x{ny}x{nz}"
            )));
        }
        if bbox_min.x >= bbox_max.x || bbox_min.y >= bbox_max.y || bbox_min.z >= bbox_max.z {
            return Err(Error::shape("occupancy grid bbox must have positive extent"));
        }
        if data.len() != nx * ny * nz {
            return Err(Error::shape(format!(
                "occupancy grid expects {} values for {nx}x{ny}x{nz}, got {}",
                nx * ny * nz,
                data.len()
            )));
        }
        // The on-disk format stores the box at f32 precision; holding the
        // same precision in memory makes save/load a strict round trip.
        let snap = |v: Vec3| Vec3::new(v.x as f32 as f64, v.y as f32 as f64, v.z as f32 as f64);
        Ok(GridOccupancy {
            nx,
            ny,
            nz,
            bbox_min: snap(bbox_min),
            bbox_max: snap(bbox_max),
            data,
        })
    }

    /// Rasterize a shape's inside indicator onto grid nodes.
    pub fn from_shape(
        shape: &SdfShape,
        dims: (usize, usize, usize),
        bbox_min: Vec3,
        bbox_max: Vec3,
    ) -> Result<Self> {
        let (nx, ny, nz) = dims;
        let mut data = vec![0.0f32; nx * ny * nz];
        let ext = bbox_max - bbox_min;
        for k in 0..nz {
            for j in 0..ny {
                for i in 0..nx {
                    let p = bbox_min
                        + Vec3::new(
                            ext.x * i as f64 / (nx - 1) as f64,
                            ext.y * j as f64 / (ny - 1) as f64,
                            ext.z * k as f64 / (nz - 1) as f64,
                        );
                    if shape.eval(p) < 0.0 {
                        data[(k * ny + j) * nx + i] = 1.0;
                    }
                }
            }
        }
        Self::new(dims, bbox_min, bbox_max, data)
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.nx, self.ny, self.nz)
    }

    fn node(&self, i: usize, j: usize, k: usize) -> f64 {
        self.data[(k * self.ny + j) * self.nx + i] as f64
    }

    /// Cell index, in-cell fractions, and per-axis scale factors, or None if
    /// x lies outside the box.
    fn locate(&self, x: Vec3) -> Option<([usize; 3], [f64; 3], [f64; 3])> {
        let ext = self.bbox_max - self.bbox_min;
        let rel = x - self.bbox_min;
        let mut cell = [0usize; 3];
        let mut frac = [0.0; 3];
        let mut scale = [0.0; 3];
        for (axis, n) in [self.nx, self.ny, self.nz].into_iter().enumerate() {
            let r = rel.component(axis);
            let e = ext.component(axis);
            if r < 0.0 || r > e {
                return None;
            }
            let g = r / e * (n - 1) as f64;
            let c = (g.floor() as usize).min(n - 2);
            cell[axis] = c;
            frac[axis] = g - c as f64;
            scale[axis] = (n - 1) as f64 / e;
        }
        Some((cell, frac, scale))
    }

    pub fn eval(&self, x: Vec3) -> f64 {
        let Some(([i, j, k], [tx, ty, tz], _)) = self.locate(x) else {
            return 0.0;
        };
        let lerp = |a: f64, b: f64, t: f64| a + (b - a) * t;
        let c00 = lerp(self.node(i, j, k), self.node(i + 1, j, k), tx);
        let c10 = lerp(self.node(i, j + 1, k), self.node(i + 1, j + 1, k), tx);
        let c01 = lerp(self.node(i, j, k + 1), self.node(i + 1, j, k + 1), tx);
        let c11 = lerp(self.node(i, j + 1, k + 1), self.node(i + 1, j + 1, k + 1), tx);
        lerp(lerp(c00, c10, ty), lerp(c01, c11, ty), tz)
    }

    /// Gradient of the trilinear interpolant (piecewise per cell; zero
    /// outside the box).
    pub fn gradient(&self, x: Vec3) -> Vec3 {
        let Some(([i, j, k], [tx, ty, tz], [sx, sy, sz])) = self.locate(x) else {
            return Vec3::ZERO;
        };
        let n = |di: usize, dj: usize, dk: usize| self.node(i + di, j + dj, k + dk);
        let lerp = |a: f64, b: f64, t: f64| a + (b - a) * t;
        // d/dx: difference along x, blended over y and z (and cyclically).
        let dx00 = n(1, 0, 0) - n(0, 0, 0);
        let dx10 = n(1, 1, 0) - n(0, 1, 0);
        let dx01 = n(1, 0, 1) - n(0, 0, 1);
        let dx11 = n(1, 1, 1) - n(0, 1, 1);
        let gx = lerp(lerp(dx00, dx10, ty), lerp(dx01, dx11, ty), tz) * sx;
        let dy0 = lerp(n(0, 1, 0) - n(0, 0, 0), n(1, 1, 0) - n(1, 0, 0), tx);
        let dy1 = lerp(n(0, 1, 1) - n(0, 0, 1), n(1, 1, 1) - n(1, 0, 1), tx);
        let gy = lerp(dy0, dy1, tz) * sy;
        let dz0 = lerp(n(0, 0, 1) - n(0, 0, 0), n(1, 0, 1) - n(1, 0, 0), tx);
        let dz1 = lerp(n(0, 1, 1) - n(0, 1, 0), n(1, 1, 1) - n(1, 1, 0), tx);
        let gz = lerp(dz0, dz1, ty) * sz;
        Vec3::new(gx, gy, gz)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut bytes = Vec::with_capacity(36 + self.data.len() * 4);
        for n in [self.nx, self.ny, self.nz] {
            bytes.extend_from_slice(&(n as u32).to_le_bytes());
        }
        for v in [
            self.bbox_min.x,
            self.bbox_min.y,
            self.bbox_min.z,
            self.bbox_max.x,
            self.bbox_max.y,
            self.bbox_max.z,
        ] {
            bytes.extend_from_slice(&(v as f32).to_le_bytes());
        }
        for &v in &self.data {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        fs::write(path, bytes).map_err(|e| Error::io(format!("writing {}", path.display()), e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes =
            fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        let fmt = |offset: u64, message: String| Error::Format {
            path: path.to_path_buf(),
            offset,
            message,
        };
        if bytes.len() < 36 {
            return Err(fmt(0, "file shorter than 36-byte header".into()));
        }
        let u = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap()) as usize;
        let f = |i: usize| f32::from_le_bytes(bytes[i..i + 4].try_into().unwrap()) as f64;
        let (nx, ny, nz) = (u(0), u(4), u(8));
        let bbox_min = Vec3::new(f(12), f(16), f(20));
        let bbox_max = Vec3::new(f(24), f(28), f(32));
        let expect = 36 + nx * ny * nz * 4;
        if bytes.len() != expect {
            return Err(fmt(
                36,
                format!(
                    "expected {expect} bytes for a {nx}x{ny}x{nz} grid, got {}",
                    bytes.len()
                ),
            ));
        }
        let data = bytes[36..]
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        Self::new((nx, ny, nz), bbox_min, bbox_max, data).map_err(|e| fmt(0, e.to_string()))
    }
}

/// Occupancy prior consulted by neural fields and feature encodings.
#[derive(Debug, Clone)]
pub enum OccupancyOracle {
    /// Inside indicator of a shape: 1 strictly inside, 0 on and outside.
    Hard { shape: Arc<SdfShape> },
    /// sigmoid(-s/tau): 0.5 on the surface, approaching the indicator as
    /// tau shrinks, differentiable everywhere.
    Soft { shape: Arc<SdfShape>, tau: f64 },
    Grid { grid: Arc<GridOccupancy> },
}

impl OccupancyOracle {
    pub fn soft(shape: Arc<SdfShape>, tau: f64) -> Result<Self> {
        if !(tau > 0.0) {
            return Err(Error::config(format!("occupancy tau must be positive, got {tau}")));
        }
        Ok(OccupancyOracle::Soft { shape, tau })
    }

    pub fn eval(&self, x: Vec3) -> f64 {
        match self {
            OccupancyOracle::Hard { shape } => {
                if shape.eval(x) < 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            OccupancyOracle::Soft { shape, tau } => sigmoid(-shape.eval(x) / tau),
            OccupancyOracle::Grid { grid } => grid.eval(x),
        }
    }

    /// Spatial gradient; zero for the hard indicator (constant a.e.).
    pub fn gradient(&self, x: Vec3) -> Vec3 {
        match self {
            OccupancyOracle::Hard { .. } => Vec3::ZERO,
            OccupancyOracle::Soft { shape, tau } => {
                let o = sigmoid(-shape.eval(x) / tau);
                shape.gradient(x) * (-o * (1.0 - o) / tau)
            }
            OccupancyOracle::Grid { grid } => grid.gradient(x),
        }
    }
}

/// Parameters of the signed-distance-to-density mapping.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DensityParams {
    alpha: f64,
}

impl DensityParams {
    pub fn new(alpha: f64) -> Result<Self> {
        if !(alpha > 0.0) || !alpha.is_finite() {
            return Err(Error::config(format!(
                "density sharpness alpha must be positive and finite, got {alpha}"
            )));
        }
        Ok(DensityParams { alpha })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }
}

impl Default for DensityParams {
    fn default() -> Self {
        DensityParams { alpha: 0.02 }
    }
}

/// Density sigma(s) = sigmoid(-s/alpha)/alpha: strictly decreasing in s,
/// bounded by (0, 1/alpha), with sigma(0) = 1/(2 alpha).
pub fn sdf_to_density(s: f64, params: &DensityParams) -> f64 {
    sigmoid(-s / params.alpha) / params.alpha
}

/// Derivative of `sdf_to_density` with respect to s.
pub fn sdf_to_density_ds(s: f64, params: &DensityParams) -> f64 {
    let o = sigmoid(-s / params.alpha);
    -o * (1.0 - o) / (params.alpha * params.alpha)
}

/// Reusable buffers for neural field evaluation: the assembled input vector,
/// tangent seed vectors, and network tapes.
#[derive(Debug, Default)]
pub struct FieldScratch {
    pub input: Vec<f64>,
    seeds: [Vec<f64>; 3],
    pub mlp: MlpScratch,
    pub jet: JetScratch,
}

/// Network-backed signed distance field. The input layout is
/// [X (3), oracle features (D_f), zero spare]; construction pins the dims.
#[derive(Debug, Clone)]
pub struct NeuralSdf {
    pub net: Arc<MlpWeights>,
    pub oracle: Arc<PriorOracle>,
}

impl NeuralSdf {
    /// Hidden widths of the standard field network.
    pub const HIDDEN: [usize; 2] = [128, 32];
    /// Input width: 3 coordinates, 257 feature slots, 13 spare zeros.
    pub const IN_DIM: usize = 273;

    pub fn new(net: Arc<MlpWeights>, oracle: Arc<PriorOracle>) -> Result<Self> {
        if net.out_dim() != 1 {
            return Err(Error::config(format!(
                "field network must output one value, got {}",
                net.out_dim()
            )));
        }
        if net.in_dim() < 3 + oracle.feature_dim() {
            return Err(Error::config(format!(
                "field network input dim {} cannot hold 3 coordinates plus {} features",
                net.in_dim(),
                oracle.feature_dim()
            )));
        }
        Ok(NeuralSdf { net, oracle })
    }

    /// Standard architecture with a geometric start: the field opens as an
    /// approximate sphere distance `|x| - r`, negative at the center and
    /// growing outward, with r matched to the prior's mean surface radius.
    /// Surface-only distance supervision cannot recover that sign structure
    /// from a random start, and adaptation of a field already close to the
    /// prior stays out of the folded local minima that satisfy the surface
    /// and eikonal terms together. The feature columns and hidden biases
    /// begin at zero and grow under training.
    pub fn seeded(oracle: Arc<PriorOracle>, seed: u64) -> Result<Self> {
        use crate::neural::Activation::{None, Softplus100};
        let mut net = MlpWeights::seeded_xavier(
            &[Self::IN_DIM, Self::HIDDEN[0], Self::HIDDEN[1], 1],
            &[Softplus100, Softplus100, None],
            seed,
        )?;
        for (l, layer) in net.layers_mut().iter_mut().enumerate() {
            layer.b.iter_mut().for_each(|b| *b = 0.0);
            if l == 0 {
                // Only the coordinate columns act at the start.
                let in_dim = layer.in_dim;
                for row in layer.w.chunks_mut(in_dim) {
                    row[3..].iter_mut().for_each(|w| *w = 0.0);
                }
            }
        }
        {
            // Positive mean pool over the last hidden layer turns the cone
            // features relu(w . x) into a radial bump.
            let out = net.layers_mut().last_mut().unwrap();
            out.w.iter_mut().for_each(|w| *w = 1.0 / Self::HIDDEN[1] as f64);
        }
        let radius = prior_mean_radius(&oracle);
        let field = NeuralSdf::new(Arc::new(net), oracle)?;
        Ok(field.calibrated(radius, seed))
    }

    /// Least-squares affine correction of the output layer so the field
    /// matches `|x| - radius` at seeded probe points.
    fn calibrated(mut self, radius: f64, seed: u64) -> Self {
        let mut rng = crate::core::SplitMix64::new(seed ^ 0x5ca1_ab1e);
        let mut ws = FieldScratch::default();
        let (mut su, mut sy, mut suu, mut suy, mut n) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for _ in 0..64 {
            let dir = loop {
                let d = Vec3::new(rng.normal(), rng.normal(), rng.normal());
                if d.length() > 1e-6 {
                    break d.normalized();
                }
            };
            for k in 1..=5 {
                let r = 0.25 * k as f64;
                let u = self.eval(dir * r, &mut ws);
                let y = r - radius;
                su += u;
                sy += y;
                suu += u * u;
                suy += u * y;
                n += 1.0;
            }
        }
        let var = suu - su * su / n;
        let (gamma, beta) = if var.abs() > 1e-12 {
            let g = (suy - su * sy / n) / var;
            (g, (sy - g * su) / n)
        } else {
            (1.0, (sy - su) / n)
        };
        let net = Arc::get_mut(&mut self.net).expect("freshly built network");
        let out = net.layers_mut().last_mut().unwrap();
        out.w.iter_mut().for_each(|w| *w *= gamma);
        out.b[0] = out.b[0] * gamma + beta;
        self
    }

    fn assemble(&self, x: Vec3, ws: &mut FieldScratch) {
        let d = self.net.in_dim();
        ws.input.resize(d, 0.0);
        ws.input.iter_mut().for_each(|v| *v = 0.0);
        ws.input[0] = x.x;
        ws.input[1] = x.y;
        ws.input[2] = x.z;
        self.oracle
            .features_into(x, &mut ws.input[3..3 + self.oracle.feature_dim()])
            .expect("feature dim pinned at construction");
    }

    /// Distance value; leaves a value tape in `ws` for `backward_value`.
    pub fn eval(&self, x: Vec3, ws: &mut FieldScratch) -> f64 {
        self.assemble(x, ws);
        self.net
            .forward_scalar(&ws.input, &mut ws.mlp)
            .expect("dims pinned at construction")
    }

    /// Accumulates d(cot * s)/d(params) for the last `eval` at this scratch.
    pub fn backward_value(&self, ws: &mut FieldScratch, cot: f64, grads: &mut MlpGrads) {
        self.net
            .backward(&mut ws.mlp, &[cot], grads, &mut [])
            .expect("tape left by eval");
    }

    /// Value and gradient with respect to the network's three coordinate
    /// inputs. The encoded features are held fixed at the query point, so
    /// this is the gradient the Eikonal objective regularizes, not the
    /// derivative of the feature encoding itself. Leaves a jet tape in `ws`
    /// for `backward_grad`.
    pub fn eval_with_grad(&self, x: Vec3, ws: &mut FieldScratch) -> (f64, Vec3) {
        self.assemble(x, ws);
        let d = self.net.in_dim();
        if ws.seeds[0].len() != d {
            for (k, seed) in ws.seeds.iter_mut().enumerate() {
                seed.clear();
                seed.resize(d, 0.0);
                seed[k] = 1.0;
            }
        }
        let [s0, s1, s2] = &ws.seeds;
        let (s, g) = self
            .net
            .forward_jet(&ws.input, &[s0, s1, s2], &mut ws.jet)
            .expect("dims pinned at construction");
        (s, Vec3::new(g[0], g[1], g[2]))
    }

    /// Accumulates parameter gradients of cot_s * s + cot_g . grad s for the
    /// last `eval_with_grad` at this scratch.
    pub fn backward_grad(
        &self,
        ws: &mut FieldScratch,
        cot_s: f64,
        cot_g: Vec3,
        grads: &mut MlpGrads,
    ) {
        self.net
            .backward_jet(&mut ws.jet, cot_s, [cot_g.x, cot_g.y, cot_g.z], grads)
            .expect("tape left by eval_with_grad");
    }
}

/// Mean radius of the prior's occupancy surface over fixed probe
/// directions, 0.5 when no crossing is found (empty or far-off priors).
pub(crate) fn prior_mean_radius(oracle: &PriorOracle) -> f64 {
    let mut rng = crate::core::SplitMix64::new(0x9d5c_0f2a_44b1_7e03);
    let occ = oracle.occupancy();
    let (mut sum, mut found) = (0.0, 0u32);
    for _ in 0..64 {
        let dir = loop {
            let d = Vec3::new(rng.normal(), rng.normal(), rng.normal());
            if d.length() > 1e-6 {
                break d.normalized();
            }
        };
        // March inward from outside the scene box to the first occupied
        // radius, then bisect the crossing.
        let mut hi = 2.0f64;
        let mut lo = None;
        let mut r = hi;
        while r > 0.0 {
            r -= 0.05;
            let inside = occ.eval(dir * r.max(0.0)) >= 0.5;
            if inside {
                lo = Some(r.max(0.0));
                break;
            }
            hi = r;
        }
        let Some(mut lo) = lo else { continue };
        for _ in 0..30 {
            let mid = 0.5 * (lo + hi);
            if occ.eval(dir * mid) >= 0.5 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        sum += 0.5 * (lo + hi);
        found += 1;
    }
    if found == 0 {
        0.5
    } else {
        sum / found as f64
    }
}

/// A queryable signed distance field. Scratch is caller-owned so parallel
/// renderers can keep one per worker.
pub trait Sdf: Sync {
    fn eval(&self, x: Vec3, ws: &mut FieldScratch) -> f64;
    fn gradient(&self, x: Vec3, ws: &mut FieldScratch) -> Vec3;
}

/// Field used by tracing and rendering: either a closed-form shape or a
/// network bound to its feature oracle.
#[derive(Debug, Clone)]
pub enum SdfField {
    Analytic(SdfShape),
    Neural(NeuralSdf),
}

impl Sdf for SdfField {
    fn eval(&self, x: Vec3, ws: &mut FieldScratch) -> f64 {
        match self {
            SdfField::Analytic(shape) => shape.eval(x),
            SdfField::Neural(n) => n.eval(x, ws),
        }
    }

    fn gradient(&self, x: Vec3, ws: &mut FieldScratch) -> Vec3 {
        match self {
            SdfField::Analytic(shape) => shape.gradient(x),
            SdfField::Neural(n) => n.eval_with_grad(x, ws).1,
        }
    }
}

impl Sdf for SdfShape {
    fn eval(&self, x: Vec3, _ws: &mut FieldScratch) -> f64 {
        SdfShape::eval(self, x)
    }

    fn gradient(&self, x: Vec3, _ws: &mut FieldScratch) -> Vec3 {
        SdfShape::gradient(self, x)
    }
}

impl Sdf for NeuralSdf {
    fn eval(&self, x: Vec3, ws: &mut FieldScratch) -> f64 {
        NeuralSdf::eval(self, x, ws)
    }

    fn gradient(&self, x: Vec3, ws: &mut FieldScratch) -> Vec3 {
        self.eval_with_grad(x, ws).1
    }
}

impl<T: Sdf> Sdf for &T {
    fn eval(&self, x: Vec3, ws: &mut FieldScratch) -> f64 {
        (**self).eval(x, ws)
    }

    fn gradient(&self, x: Vec3, ws: &mut FieldScratch) -> Vec3 {
        (**self).gradient(x, ws)
    }
}

/// One-off evaluation helpers for callers without a scratch to reuse.
pub fn sdf_eval(field: &impl Sdf, x: Vec3) -> f64 {
    field.eval(x, &mut FieldScratch::default())
}

pub fn sdf_gradient(field: &impl Sdf, x: Vec3) -> Vec3 {
    field.gradient(x, &mut FieldScratch::default())
}
