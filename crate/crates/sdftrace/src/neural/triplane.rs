use std::fs;
use std::path::Path;

use crate::core::{bilinear_grid, SplitMix64, Vec3};
use crate::error::{Error, Result};

/// Three axis-aligned feature planes (xy, xz, yz), each a square grid of
/// per-texel channel vectors. A 3D point projects onto each plane; the three
/// bilinearly interpolated vectors are averaged.
#[derive(Debug, Clone, PartialEq)]
pub struct TriPlane {
    resolution: usize,
    channels: usize,
    planes: [Vec<f32>; 3],
}

impl TriPlane {
    pub const DEFAULT_RESOLUTION: usize = 256;
    pub const DEFAULT_CHANNELS: usize = 32;

    pub fn new(resolution: usize, channels: usize, planes: [Vec<f32>; 3]) -> Result<Self> {
        if resolution == 0 || channels == 0 {
            return Err(Error::shape("triplane needs positive resolution and channels"));
        }
        let expect = resolution * resolution * channels;
        for (i, p) in planes.iter().enumerate() {
            if p.len() != expect {
                return Err(Error::shape(format!(
                    "plane {i}: expected {expect} values ({resolution}x{resolution}x{channels}), got {}",
                    p.len()
                )));
            }
        }
        Ok(TriPlane {
            resolution,
            channels,
            planes,
        })
    }

    pub fn constant(resolution: usize, channels: usize, value: f32) -> Result<Self> {
        let n = resolution * resolution * channels;
        Self::new(resolution, channels, [vec![value; n], vec![value; n], vec![value; n]])
    }

    /// Deterministic random planes, uniform in [-scale, scale].
    pub fn seeded(resolution: usize, channels: usize, seed: u64, scale: f64) -> Result<Self> {
        let mut rng = SplitMix64::new(seed);
        let n = resolution * resolution * channels;
        let planes = std::array::from_fn(|_| {
            (0..n).map(|_| rng.uniform(-scale, scale) as f32).collect()
        });
        Self::new(resolution, channels, planes)
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn planes_mut(&mut self) -> &mut [Vec<f32>; 3] {
        &mut self.planes
    }

    /// Mean of the three plane samples at the projections of `x`. World
    /// coordinates in [-1,1] span each plane; sampling clamps at borders.
    /// The result is linear in the stored plane contents.
    pub fn sample_into(&self, x: Vec3, out: &mut [f64]) -> Result<()> {
        if out.len() != self.channels {
            return Err(Error::shape(format!(
                "triplane sample needs {} output channels, got {}",
                self.channels,
                out.len()
            )));
        }
        out.iter_mut().for_each(|v| *v = 0.0);
        let mut stack = [0.0f64; 64];
        let mut heap = Vec::new();
        let tmp: &mut [f64] = if self.channels <= stack.len() {
            &mut stack[..self.channels]
        } else {
            heap.resize(self.channels, 0.0);
            &mut heap
        };
        let uv = [(x.x, x.y), (x.x, x.z), (x.y, x.z)];
        for (plane, &(a, b)) in self.planes.iter().zip(&uv) {
            let u = 0.5 * (a + 1.0);
            let v = 0.5 * (b + 1.0);
            bilinear_grid(plane, self.resolution, self.resolution, self.channels, u, v, tmp);
            for (acc, &s) in out.iter_mut().zip(tmp.iter()) {
                *acc += s;
            }
        }
        out.iter_mut().for_each(|v| *v /= 3.0);
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut bytes = Vec::with_capacity(8 + 3 * self.planes[0].len() * 4);
        bytes.extend_from_slice(&(self.resolution as u32).to_le_bytes());
        bytes.extend_from_slice(&(self.channels as u32).to_le_bytes());
        for plane in &self.planes {
            for &v in plane {
                bytes.extend_from_slice(&v.to_le_bytes());
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
        if bytes.len() < 8 {
            return Err(fmt(0, "file shorter than 8-byte header".into()));
        }
        let resolution = u32::from_le_bytes(bytes[0..4].try_into().unwrap()) as usize;
        let channels = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        if resolution == 0 || channels == 0 {
            return Err(fmt(0, format!("bad header: resolution {resolution}, channels {channels}")));
        }
        let per_plane = resolution * resolution * channels;
        let expect = 8 + 3 * per_plane * 4;
        if bytes.len() != expect {
            return Err(fmt(
                8,
                format!("expected {expect} bytes for three {resolution}x{resolution}x{channels} planes, got {}", bytes.len()),
            ));
        }
        let read_plane = |i: usize| -> Vec<f32> {
            let start = 8 + i * per_plane * 4;
            bytes[start..start + per_plane * 4]
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                .collect()
        };
        Self::new(resolution, channels, [read_plane(0), read_plane(1), read_plane(2)])
    }
}
