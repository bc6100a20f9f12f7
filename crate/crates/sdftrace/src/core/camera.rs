use crate::core::{Ray, Vec3};
use crate::error::{Error, Result};

/// Result of projecting a world point through an orthographic camera.
#[derive(Debug, Clone, Copy)]
pub struct Projected {
    /// Texture coordinates in [0, 1]^2 when the point is inside the frustum.
    pub uv: (f64, f64),
    /// Signed distance along `forward` from the camera plane.
    pub depth: f64,
}

/// Orthographic camera over the desk-scale scene box.
///
/// The image plane passes through `center` and spans
/// `[-half_width, half_width]` along `right` and
/// `[-half_height, half_height]` along `up`. Pixel (0, 0) is top-left; all
/// rays share the unit `forward` direction.
#[derive(Debug, Clone)]
pub struct OrthoCamera {
    pub center: Vec3,
    pub forward: Vec3,
    pub right: Vec3,
    pub up: Vec3,
    pub half_width: f64,
    pub half_height: f64,
    pub width: u32,
    pub height: u32,
}

impl OrthoCamera {
    /// Camera looking at the origin from `distance` along the view direction
    /// given by yaw (radians about +y, 0 looks along -z) and pitch (radians of
    /// elevation, positive looks down from above).
    pub fn orbit(
        yaw: f64,
        pitch: f64,
        distance: f64,
        half_width: f64,
        half_height: f64,
        width: u32,
        height: u32,
    ) -> Result<Self> {
        if half_width <= 0.0 || half_height <= 0.0 {
            return Err(Error::config(format!(
                "camera half extents must be positive, got ({half_width}, {half_height})"
            )));
        }
        if width == 0 || height == 0 {
            return Err(Error::config(format!(
                "camera resolution must be positive, got {width}x{height}"
            )));
        }
        let max_pitch = std::f64::consts::FRAC_PI_2 - 1e-6;
        let pitch = pitch.clamp(-max_pitch, max_pitch);
        let (sy, cy) = yaw.sin_cos();
        let (sp, cp) = pitch.sin_cos();
        let center = Vec3::new(sy * cp, sp, cy * cp) * distance;
        let forward = (-center).normalized();
        let right = forward.cross(Vec3::new(0.0, 1.0, 0.0)).normalized();
        let up = right.cross(forward);
        Ok(OrthoCamera {
            center,
            forward,
            right,
            up,
            half_width,
            half_height,
            width,
            height,
        })
    }

    /// Frontal view: yaw 0, pitch 0, looking along -z.
    pub fn frontal(
        distance: f64,
        half_width: f64,
        half_height: f64,
        width: u32,
        height: u32,
    ) -> Result<Self> {
        OrthoCamera::orbit(0.0, 0.0, distance, half_width, half_height, width, height)
    }

    /// Ray through pixel (col, row) at sub-pixel offset `jitter` in [0, 1)^2;
    /// (0.5, 0.5) is the pixel center.
    pub fn camera_ray(&self, col: u32, row: u32, jitter: (f64, f64)) -> Result<Ray> {
        if col >= self.width || row >= self.height {
            return Err(Error::PixelOutOfRange {
                col,
                row,
                width: self.width,
                height: self.height,
            });
        }
        let u = (col as f64 + jitter.0) / self.width as f64;
        let v = (row as f64 + jitter.1) / self.height as f64;
        let ox = (2.0 * u - 1.0) * self.half_width;
        let oy = (1.0 - 2.0 * v) * self.half_height;
        Ok(Ray {
            origin: self.center + self.right * ox + self.up * oy,
            dir: self.forward,
        })
    }

    /// Inverse of `camera_ray` for points: uv such that a ray through that
    /// image position passes through `x`, plus the signed depth from the
    /// camera plane. uv is not clamped; callers detect out-of-frustum points
    /// by range-checking.
    pub fn project(&self, x: Vec3) -> Projected {
        let d = x - self.center;
        let ox = d.dot(self.right);
        let oy = d.dot(self.up);
        Projected {
            uv: (
                0.5 * (ox / self.half_width + 1.0),
                0.5 * (1.0 - oy / self.half_height),
            ),
            depth: d.dot(self.forward),
        }
    }
}
