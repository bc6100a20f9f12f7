use std::fs;
use std::path::Path;
use std::sync::Arc;

use crate::core::SplitMix64;
use crate::error::{Error, Result};

/// Numerically stable logistic function.
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Numerically stable ln(1 + e^z).
pub fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

/// Per-layer nonlinearity. `Softplus100` is the sharpened variant
/// softplus(100 x)/100 used by the SDF network's hidden layers; it stays C^1
/// (which Eikonal terms require) while behaving like relu away from zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    None,
    Relu,
    Sigmoid,
    Softplus,
    Softplus100,
}

impl Activation {
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::None => z,
            Activation::Relu => z.max(0.0),
            Activation::Sigmoid => sigmoid(z),
            Activation::Softplus => softplus(z),
            Activation::Softplus100 => softplus(100.0 * z) / 100.0,
        }
    }

    /// First derivative at pre-activation z.
    pub fn d1(self, z: f64) -> f64 {
        match self {
            Activation::None => 1.0,
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => {
                let s = sigmoid(z);
                s * (1.0 - s)
            }
            Activation::Softplus => sigmoid(z),
            Activation::Softplus100 => sigmoid(100.0 * z),
        }
    }

    /// Second derivative at pre-activation z.
    pub fn d2(self, z: f64) -> f64 {
        match self {
            Activation::None | Activation::Relu => 0.0,
            Activation::Sigmoid => {
                let s = sigmoid(z);
                s * (1.0 - s) * (1.0 - 2.0 * s)
            }
            Activation::Softplus => {
                let s = sigmoid(z);
                s * (1.0 - s)
            }
            Activation::Softplus100 => {
                let s = sigmoid(100.0 * z);
                100.0 * s * (1.0 - s)
            }
        }
    }

    fn code(self) -> u8 {
        match self {
            Activation::None => 0,
            Activation::Relu => 1,
            Activation::Sigmoid => 2,
            Activation::Softplus => 3,
            Activation::Softplus100 => 4,
        }
    }

    fn from_code(code: u8) -> Option<Self> {
        Some(match code {
            0 => Activation::None,
            1 => Activation::Relu,
            2 => Activation::Sigmoid,
            3 => Activation::Softplus,
            4 => Activation::Softplus100,
            _ => return None,
        })
    }
}

/// One affine layer y = act(W x + b), weights row-major (out_dim rows of
/// in_dim columns).
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub in_dim: usize,
    pub out_dim: usize,
    pub w: Vec<f64>,
    pub b: Vec<f64>,
    pub act: Activation,
}

impl Layer {
    pub fn new(in_dim: usize, out_dim: usize, w: Vec<f64>, b: Vec<f64>, act: Activation) -> Result<Self> {
        if w.len() != in_dim * out_dim || b.len() != out_dim {
            return Err(Error::shape(format!(
                "layer {in_dim}->{out_dim} expects {} weights and {out_dim} biases, got {} and {}",
                in_dim * out_dim,
                w.len(),
                b.len()
            )));
        }
        if w.iter().chain(b.iter()).any(|v| !v.is_finite()) {
            return Err(Error::shape(format!(
                "layer {in_dim}->{out_dim} contains non-finite parameters"
            )));
        }
        Ok(Layer {
            in_dim,
            out_dim,
            w,
            b,
            act,
        })
    }
}

/// Dot product with a fixed 4-lane unrolled order. The order is part of the
/// determinism contract: every evaluation of the same data sums in the same
/// sequence regardless of thread count.
#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for i in 0..chunks {
        let j = i * 4;
        acc[0] += a[j] * b[j];
        acc[1] += a[j + 1] * b[j + 1];
        acc[2] += a[j + 2] * b[j + 2];
        acc[3] += a[j + 3] * b[j + 3];
    }
    let mut tail = 0.0;
    for j in chunks * 4..a.len() {
        tail += a[j] * b[j];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

#[inline]
fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    debug_assert_eq!(y.len(), x.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

/// Fully-connected network with explicit tapes for reverse-mode gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpWeights {
    layers: Vec<Layer>,
}

/// Forward tape: inputs and pre-activations of every layer.
#[derive(Debug, Default)]
pub struct MlpScratch {
    acts: Vec<Vec<f64>>,
    zs: Vec<Vec<f64>>,
    cot: Vec<f64>,
    cot_next: Vec<f64>,
    nnz0: usize,
    valid_for: usize,
}

/// Weight/bias gradient accumulator mirroring an `MlpWeights` layout.
#[derive(Debug, Clone)]
pub struct MlpGrads {
    pub w: Vec<Vec<f64>>,
    pub b: Vec<Vec<f64>>,
}

impl MlpGrads {
    pub fn zeros_like(net: &MlpWeights) -> Self {
        MlpGrads {
            w: net.layers.iter().map(|l| vec![0.0; l.w.len()]).collect(),
            b: net.layers.iter().map(|l| vec![0.0; l.b.len()]).collect(),
        }
    }

    pub fn clear(&mut self) {
        for v in self.w.iter_mut().chain(self.b.iter_mut()) {
            v.iter_mut().for_each(|x| *x = 0.0);
        }
    }

    /// self += a * other, layerwise.
    pub fn add_scaled(&mut self, a: f64, other: &MlpGrads) {
        for (dst, src) in self.w.iter_mut().zip(&other.w) {
            axpy(dst, a, src);
        }
        for (dst, src) in self.b.iter_mut().zip(&other.b) {
            axpy(dst, a, src);
        }
    }
}

impl MlpWeights {
    pub fn new(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::shape("network needs at least one layer"));
        }
        for pair in layers.windows(2) {
            if pair[0].out_dim != pair[1].in_dim {
                return Err(Error::shape(format!(
                    "layer dims do not chain: {}->{} followed by {}->{}",
                    pair[0].in_dim, pair[0].out_dim, pair[1].in_dim, pair[1].out_dim
                )));
            }
        }
        Ok(MlpWeights { layers })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().unwrap().out_dim
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    /// Network with uniform random parameters in [-scale, scale]. Values are
    /// rounded through f32 so the weight file round-trips bit-exactly.
    pub fn seeded_uniform(
        dims: &[usize],
        acts: &[Activation],
        seed: u64,
        scale: f64,
    ) -> Result<Self> {
        Self::seeded_with(dims, acts, seed, |_, _| scale)
    }

    /// Xavier-style init: per-layer scale sqrt(6 / (in + out)).
    pub fn seeded_xavier(dims: &[usize], acts: &[Activation], seed: u64) -> Result<Self> {
        Self::seeded_with(dims, acts, seed, |i, o| (6.0 / (i + o) as f64).sqrt())
    }

    fn seeded_with(
        dims: &[usize],
        acts: &[Activation],
        seed: u64,
        scale: impl Fn(usize, usize) -> f64,
    ) -> Result<Self> {
        if dims.len() < 2 || acts.len() != dims.len() - 1 {
            return Err(Error::shape(format!(
                "need n+1 dims for n activations, got {} dims and {} activations",
                dims.len(),
                acts.len()
            )));
        }
        let mut rng = SplitMix64::new(seed);
        let mut layers = Vec::new();
        for (i, &act) in acts.iter().enumerate() {
            let (in_dim, out_dim) = (dims[i], dims[i + 1]);
            let s = scale(in_dim, out_dim);
            let w = (0..in_dim * out_dim)
                .map(|_| rng.uniform(-s, s) as f32 as f64)
                .collect();
            let b = vec![0.0; out_dim];
            layers.push(Layer::new(in_dim, out_dim, w, b, act)?);
        }
        MlpWeights::new(layers)
    }

    fn ensure_scratch(&self, ws: &mut MlpScratch) {
        let n = self.layers.len();
        if ws.acts.len() != n + 1 || ws.acts[0].len() != self.in_dim() {
            ws.acts = Vec::with_capacity(n + 1);
            ws.acts.push(vec![0.0; self.in_dim()]);
            for l in &self.layers {
                ws.acts.push(vec![0.0; l.out_dim]);
            }
            ws.zs = self.layers.iter().map(|l| vec![0.0; l.out_dim]).collect();
            // Cotangents flow backward through both ends of every layer.
            let widest = self
                .layers
                .iter()
                .flat_map(|l| [l.in_dim, l.out_dim])
                .max()
                .unwrap();
            ws.cot = vec![0.0; widest];
            ws.cot_next = vec![0.0; widest];
        }
    }

    /// Forward pass recording the tape needed by `backward`.
    ///
    /// Trailing zeros of the input are skipped in the first matvec; with the
    /// sparse feature layouts used here that is an exact 4-5x saving.
    pub fn forward<'a>(&self, input: &[f64], ws: &'a mut MlpScratch) -> Result<&'a [f64]> {
        if input.len() != self.in_dim() {
            return Err(Error::shape(format!(
                "network expects input dim {}, got {}",
                self.in_dim(),
                input.len()
            )));
        }
        self.ensure_scratch(ws);
        ws.acts[0].copy_from_slice(input);
        ws.nnz0 = nonzero_prefix(input);
        ws.valid_for = self.layers.len();
        for (l, layer) in self.layers.iter().enumerate() {
            let nnz = if l == 0 { ws.nnz0 } else { layer.in_dim };
            let (head, tail) = ws.acts.split_at_mut(l + 1);
            let a = &head[l];
            let out = &mut tail[0];
            let z = &mut ws.zs[l];
            for o in 0..layer.out_dim {
                let row = &layer.w[o * layer.in_dim..o * layer.in_dim + nnz];
                z[o] = dot(row, &a[..nnz]) + layer.b[o];
            }
            for (y, &zv) in out.iter_mut().zip(z.iter()) {
                *y = layer.act.apply(zv);
            }
        }
        Ok(&ws.acts[self.layers.len()])
    }

    /// Convenience for scalar-output networks.
    pub fn forward_scalar(&self, input: &[f64], ws: &mut MlpScratch) -> Result<f64> {
        let out = self.forward(input, ws)?;
        if out.len() != 1 {
            return Err(Error::shape(format!(
                "expected scalar output, network emits {}",
                out.len()
            )));
        }
        Ok(out[0])
    }

    /// Reverse pass over the tape left by `forward`.
    ///
    /// Adds parameter gradients into `grads` and writes the gradient with
    /// respect to the first `input_cot.len()` input entries (pass an empty
    /// slice to skip that transpose product entirely).
    pub fn backward(
        &self,
        ws: &mut MlpScratch,
        out_cotangent: &[f64],
        grads: &mut MlpGrads,
        input_cot: &mut [f64],
    ) -> Result<()> {
        if ws.valid_for != self.layers.len() || ws.acts.len() != self.layers.len() + 1 {
            return Err(Error::shape("backward called without a matching forward tape"));
        }
        if out_cotangent.len() != self.out_dim() {
            return Err(Error::shape(format!(
                "output cotangent dim {} does not match network output {}",
                out_cotangent.len(),
                self.out_dim()
            )));
        }
        if input_cot.len() > self.in_dim() {
            return Err(Error::shape("input cotangent request exceeds input dim"));
        }
        ws.cot[..out_cotangent.len()].copy_from_slice(out_cotangent);
        for (l, layer) in self.layers.iter().enumerate().rev() {
            // z-cotangent: scale by activation slope.
            for o in 0..layer.out_dim {
                ws.cot[o] *= layer.act.d1(ws.zs[l][o]);
            }
            let nnz = if l == 0 { ws.nnz0 } else { layer.in_dim };
            let a = &ws.acts[l];
            for o in 0..layer.out_dim {
                let zo = ws.cot[o];
                grads.b[l][o] += zo;
                if zo != 0.0 {
                    let row = &mut grads.w[l][o * layer.in_dim..o * layer.in_dim + nnz];
                    axpy(row, zo, &a[..nnz]);
                }
            }
            // Input cotangent: full for interior layers, on demand for layer 0.
            let want = if l == 0 { input_cot.len() } else { layer.in_dim };
            if want > 0 {
                ws.cot_next[..want].iter_mut().for_each(|v| *v = 0.0);
                for o in 0..layer.out_dim {
                    let zo = ws.cot[o];
                    if zo != 0.0 {
                        let row = &layer.w[o * layer.in_dim..o * layer.in_dim + want];
                        axpy(&mut ws.cot_next[..want], zo, row);
                    }
                }
                if l == 0 {
                    input_cot.copy_from_slice(&ws.cot_next[..want]);
                } else {
                    let (c, cn) = (&mut ws.cot, &mut ws.cot_next);
                    std::mem::swap(c, cn);
                }
            }
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut bytes = Vec::new();
        bytes.extend_from_slice(b"MLPW");
        bytes.extend_from_slice(&1u32.to_le_bytes());
        bytes.extend_from_slice(&(self.layers.len() as u32).to_le_bytes());
        for l in &self.layers {
            bytes.extend_from_slice(&(l.in_dim as u32).to_le_bytes());
            bytes.extend_from_slice(&(l.out_dim as u32).to_le_bytes());
            bytes.push(l.act.code());
            for &v in &l.w {
                bytes.extend_from_slice(&(v as f32).to_le_bytes());
            }
            for &v in &l.b {
                bytes.extend_from_slice(&(v as f32).to_le_bytes());
            }
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
        let mut cur = Cursor {
            bytes: &bytes,
            pos: 0,
        };
        let magic = cur
            .take(4)
            .ok_or_else(|| fmt(0, "file shorter than 4-byte magic".into()))?;
        if magic != b"MLPW" {
            return Err(fmt(0, format!("bad magic {magic:?}, expected \"MLPW\"")));
        }
        let version = cur
            .u32()
            .ok_or_else(|| fmt(cur.pos as u64, "truncated version field".into()))?;
        if version != 1 {
            return Err(fmt(4, format!("unsupported version {version}")));
        }
        let n_layers = cur
            .u32()
            .ok_or_else(|| fmt(cur.pos as u64, "truncated layer count".into()))?;
        let mut layers = Vec::new();
        for i in 0..n_layers {
            let at = cur.pos as u64;
            let header = (|| Some((cur.u32()?, cur.u32()?, cur.u8()?)))();
            let (in_dim, out_dim, act_code) =
                header.ok_or_else(|| fmt(at, format!("truncated header of layer {i}")))?;
            let act = Activation::from_code(act_code)
                .ok_or_else(|| fmt(at + 8, format!("unknown activation code {act_code}")))?;
            let n_w = in_dim as usize * out_dim as usize;
            let at = cur.pos as u64;
            let w = cur.f32s(n_w).ok_or_else(|| {
                let have = (bytes.len() - cur.pos) / 4;
                fmt(at, format!("layer {i} weights: expected {n_w} f32 values, {have} remain"))
            })?;
            let at = cur.pos as u64;
            let b = cur.f32s(out_dim as usize).ok_or_else(|| {
                let have = (bytes.len() - cur.pos) / 4;
                fmt(
                    at,
                    format!("layer {i} biases: expected {out_dim} f32 values, {have} remain"),
                )
            })?;
            layers.push(
                Layer::new(in_dim as usize, out_dim as usize, w, b, act)
                    .map_err(|e| fmt(at, e.to_string()))?,
            );
        }
        if cur.pos != bytes.len() {
            return Err(fmt(
                cur.pos as u64,
                format!("{} trailing bytes after last layer", bytes.len() - cur.pos),
            ));
        }
        MlpWeights::new(layers).map_err(|e| fmt(8, e.to_string()))
    }
}

/// Shared ownership used by scene assemblies.
pub type SharedMlp = Arc<MlpWeights>;

fn nonzero_prefix(v: &[f64]) -> usize {
    v.iter().rposition(|&x| x != 0.0).map_or(0, |i| i + 1)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return None;
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Some(s)
    }

    fn u8(&mut self) -> Option<u8> {
        self.take(1).map(|b| b[0])
    }

    fn u32(&mut self) -> Option<u32> {
        self.take(4)
            .map(|b| u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn f32s(&mut self, n: usize) -> Option<Vec<f64>> {
        self.take(n * 4).map(|bytes| {
            bytes
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
                .collect()
        })
    }
}

/// Forward-mode state: every intermediate carries a value and three tangents
/// (directional derivatives along the three input seeds). Running reverse
/// mode over this tape yields parameter gradients of functions of the
/// input-gradient, which is what the Eikonal objective needs.
#[derive(Debug, Default)]
pub struct JetScratch {
    a_p: Vec<Vec<f64>>,
    a_t: Vec<[Vec<f64>; 3]>,
    z_p: Vec<Vec<f64>>,
    z_t: Vec<[Vec<f64>; 3]>,
    cot_p: Vec<f64>,
    cot_t: [Vec<f64>; 3],
    next_p: Vec<f64>,
    next_t: [Vec<f64>; 3],
    nnz0: usize,
    valid_for: usize,
}

impl MlpWeights {
    fn ensure_jet_scratch(&self, ws: &mut JetScratch) {
        let n = self.layers.len();
        if ws.a_p.len() != n + 1 || ws.a_p[0].len() != self.in_dim() {
            let dims: Vec<usize> = std::iter::once(self.in_dim())
                .chain(self.layers.iter().map(|l| l.out_dim))
                .collect();
            ws.a_p = dims.iter().map(|&d| vec![0.0; d]).collect();
            ws.a_t = dims
                .iter()
                .map(|&d| [vec![0.0; d], vec![0.0; d], vec![0.0; d]])
                .collect();
            ws.z_p = self.layers.iter().map(|l| vec![0.0; l.out_dim]).collect();
            ws.z_t = self
                .layers
                .iter()
                .map(|l| {
                    [
                        vec![0.0; l.out_dim],
                        vec![0.0; l.out_dim],
                        vec![0.0; l.out_dim],
                    ]
                })
                .collect();
            let widest = *dims.iter().max().unwrap();
            ws.cot_p = vec![0.0; widest];
            ws.cot_t = [vec![0.0; widest], vec![0.0; widest], vec![0.0; widest]];
            ws.next_p = vec![0.0; widest];
            ws.next_t = [vec![0.0; widest], vec![0.0; widest], vec![0.0; widest]];
        }
    }

    /// Forward pass on (value, 3 tangents) jets. For a scalar network the
    /// output tangents are the directional derivatives along the input seeds;
    /// seeding with d(input)/dX gives the spatial gradient.
    pub fn forward_jet(
        &self,
        input: &[f64],
        input_t: &[&[f64]; 3],
        ws: &mut JetScratch,
    ) -> Result<(f64, [f64; 3])> {
        if input.len() != self.in_dim() || input_t.iter().any(|t| t.len() != self.in_dim()) {
            return Err(Error::shape(format!(
                "jet input dim mismatch: network expects {}",
                self.in_dim()
            )));
        }
        if self.out_dim() != 1 {
            return Err(Error::shape("jet forward requires a scalar-output network"));
        }
        self.ensure_jet_scratch(ws);
        ws.a_p[0].copy_from_slice(input);
        for k in 0..3 {
            ws.a_t[0][k].copy_from_slice(input_t[k]);
        }
        ws.nnz0 = nonzero_prefix(input)
            .max(input_t.iter().map(|t| nonzero_prefix(t)).max().unwrap());
        ws.valid_for = self.layers.len();
        for (l, layer) in self.layers.iter().enumerate() {
            let nnz = if l == 0 { ws.nnz0 } else { layer.in_dim };
            for o in 0..layer.out_dim {
                let row = &layer.w[o * layer.in_dim..o * layer.in_dim + nnz];
                ws.z_p[l][o] = dot(row, &ws.a_p[l][..nnz]) + layer.b[o];
                for k in 0..3 {
                    ws.z_t[l][k][o] = dot(row, &ws.a_t[l][k][..nnz]);
                }
            }
            for o in 0..layer.out_dim {
                let z = ws.z_p[l][o];
                ws.a_p[l + 1][o] = layer.act.apply(z);
                let d1 = layer.act.d1(z);
                for k in 0..3 {
                    ws.a_t[l + 1][k][o] = d1 * ws.z_t[l][k][o];
                }
            }
        }
        let last = self.layers.len();
        Ok((
            ws.a_p[last][0],
            [ws.a_t[last][0][0], ws.a_t[last][1][0], ws.a_t[last][2][0]],
        ))
    }

    /// Reverse pass over a jet tape. `cot_value` and `cot_tangent` are the
    /// sensitivities of the objective to the scalar output and to its three
    /// tangents. Parameter gradients accumulate into `grads`.
    pub fn backward_jet(
        &self,
        ws: &mut JetScratch,
        cot_value: f64,
        cot_tangent: [f64; 3],
        grads: &mut MlpGrads,
    ) -> Result<()> {
        if ws.valid_for != self.layers.len() || ws.a_p.len() != self.layers.len() + 1 {
            return Err(Error::shape("jet backward without a matching jet forward"));
        }
        ws.cot_p[0] = cot_value;
        for k in 0..3 {
            ws.cot_t[k][0] = cot_tangent[k];
        }
        for (l, layer) in self.layers.iter().enumerate().rev() {
            // Through the activation: y_p = act(z_p), y_tk = act'(z_p) z_tk.
            for o in 0..layer.out_dim {
                let z = ws.z_p[l][o];
                let d1 = layer.act.d1(z);
                let d2 = layer.act.d2(z);
                let mut zbar_p = ws.cot_p[o] * d1;
                for k in 0..3 {
                    zbar_p += ws.cot_t[k][o] * d2 * ws.z_t[l][k][o];
                    ws.cot_t[k][o] *= d1;
                }
                ws.cot_p[o] = zbar_p;
            }
            let nnz = if l == 0 { ws.nnz0 } else { layer.in_dim };
            for o in 0..layer.out_dim {
                let zp = ws.cot_p[o];
                grads.b[l][o] += zp;
                let row = &mut grads.w[l][o * layer.in_dim..o * layer.in_dim + nnz];
                if zp != 0.0 {
                    axpy(row, zp, &ws.a_p[l][..nnz]);
                }
                for k in 0..3 {
                    let zt = ws.cot_t[k][o];
                    if zt != 0.0 {
                        axpy(row, zt, &ws.a_t[l][k][..nnz]);
                    }
                }
            }
            if l > 0 {
                let prev = layer.in_dim;
                ws.next_p[..prev].iter_mut().for_each(|v| *v = 0.0);
                for k in 0..3 {
                    ws.next_t[k][..prev].iter_mut().for_each(|v| *v = 0.0);
                }
                for o in 0..layer.out_dim {
                    let row = &layer.w[o * layer.in_dim..o * layer.in_dim + prev];
                    let zp = ws.cot_p[o];
                    if zp != 0.0 {
                        axpy(&mut ws.next_p[..prev], zp, row);
                    }
                    for k in 0..3 {
                        let zt = ws.cot_t[k][o];
                        if zt != 0.0 {
                            axpy(&mut ws.next_t[k][..prev], zt, row);
                        }
                    }
                }
                std::mem::swap(&mut ws.cot_p, &mut ws.next_p);
                for k in 0..3 {
                    std::mem::swap(&mut ws.cot_t[k], &mut ws.next_t[k]);
                }
            }
        }
        Ok(())
    }
}
