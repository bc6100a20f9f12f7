//! Interval volume rendering and the two blending stages.
//!
//! Each hit pixel integrates color, blending weight, and opacity over a short
//! interval centered on the traced intersection. Colors are blended twice:
//! per sample point against the anchor fetch, then per pixel against the
//! warped anchor image.

use std::sync::Arc;

use rayon::prelude::*;

use crate::core::{ImageBuffer, OrthoCamera, Ray, SplitMix64, Vec3};
use crate::error::{Error, Result};
use crate::fields::{
    sdf_to_density, DensityParams, FieldScratch, OccupancyOracle, Sdf, SdfField,
};
use crate::neural::{Activation, MlpScratch, MlpWeights, PriorOracle, TriPlane};
use crate::tracer::{
    ray_march_occupancy, sphere_trace, MarchParams, TraceParams, TraceResult,
};

/// Orbit radius used for standard cameras; far enough that every ray enters
/// the scene box from outside and exits before `t_max`.
pub const DEFAULT_CAMERA_DISTANCE: f64 = 2.0;

/// Hidden width of the standard color decoder.
pub const DECODER_HIDDEN: usize = 64;

/// Sub-pixel placement of camera rays.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Jitter {
    /// Every ray passes through its pixel center.
    Center,
    /// Per-pixel offsets derived from the seed and the pixel index, so a
    /// jittered frame is reproducible and independent of traversal order.
    Seeded(u64),
}

impl Jitter {
    pub fn offset(&self, col: u32, row: u32) -> (f64, f64) {
        match self {
            Jitter::Center => (0.5, 0.5),
            Jitter::Seeded(seed) => {
                let mut rng = SplitMix64::new(seed ^ (((row as u64) << 32) | col as u64));
                (rng.next_f64(), rng.next_f64())
            }
        }
    }
}

/// Frame-level rendering controls.
#[derive(Debug, Clone)]
pub struct RenderSettings {
    /// Default frame resolution for cameras built from a scene config.
    pub width: u32,
    pub height: u32,
    /// Quadrature samples per hit interval.
    pub n_samples: usize,
    /// Interval half-width as a multiple of the density sharpness alpha;
    /// three alphas cover nearly all of the density bump around the surface.
    pub interval_scale: f64,
    pub background: [f64; 3],
    pub jitter: Jitter,
    /// Drop warped-anchor pixels whose surface faces away from the frontal
    /// camera instead of trusting the blend map to suppress them.
    pub warp_normal_cull: bool,
}

impl Default for RenderSettings {
    fn default() -> Self {
        RenderSettings {
            width: 512,
            height: 256,
            n_samples: 6,
            interval_scale: 3.0,
            background: [1.0, 1.0, 1.0],
            jitter: Jitter::Center,
            warp_normal_cull: false,
        }
    }
}

impl RenderSettings {
    pub fn validate(&self) -> Result<()> {
        if self.n_samples < 2 {
            return Err(Error::config(format!(
                "interval rendering needs at least 2 samples, got {}",
                self.n_samples
            )));
        }
        if !(self.interval_scale > 0.0) {
            return Err(Error::config(format!(
                "interval scale must be positive, got {}",
                self.interval_scale
            )));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::config(format!(
                "render resolution must be positive, got {}x{}",
                self.width, self.height
            )));
        }
        Ok(())
    }

    /// Half-width of the sampling interval around a hit.
    pub fn halfwidth(&self, density: &DensityParams) -> f64 {
        self.interval_scale * density.alpha()
    }
}

/// Everything a frame render needs besides the camera.
#[derive(Clone)]
pub struct Scene {
    pub field: SdfField,
    pub density: DensityParams,
    pub triplane: Arc<TriPlane>,
    pub decoder: Arc<MlpWeights>,
    pub oracle: Arc<PriorOracle>,
    pub anchor: Option<Arc<ImageBuffer>>,
    /// Camera the anchor image was rendered from; anchor fetches project
    /// through it regardless of the render view.
    pub frontal: OrthoCamera,
    pub trace: TraceParams,
    pub march: MarchParams,
}

impl Scene {
    pub fn validate(&self) -> Result<()> {
        self.trace.validate()?;
        self.march.validate()?;
        let expect = self.triplane.channels() + self.oracle.feature_dim();
        if self.decoder.in_dim() != expect {
            return Err(Error::config(format!(
                "decoder input dim {} does not match {} tri-plane channels plus {} oracle features",
                self.decoder.in_dim(),
                self.triplane.channels(),
                self.oracle.feature_dim()
            )));
        }
        if self.decoder.out_dim() != 4 {
            return Err(Error::config(format!(
                "decoder must output [r, g, b, blend], got {} values",
                self.decoder.out_dim()
            )));
        }
        if let Some(anchor) = &self.anchor {
            if anchor.channels() != 3 {
                return Err(Error::config(format!(
                    "anchor image must be RGB, got {} channels",
                    anchor.channels()
                )));
            }
        }
        Ok(())
    }
}

/// Per-worker buffers reused across pixels.
#[derive(Debug, Default)]
pub struct RenderScratch {
    pub field: FieldScratch,
    decode_in: Vec<f64>,
    decode: MlpScratch,
}

/// Result of integrating one hit interval.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntervalRender {
    pub color: [f64; 3],
    pub blend: f64,
    pub alpha: f64,
    pub depth: f64,
}

/// Standard decoder architecture with deterministic random parameters:
/// tri-plane channels plus oracle features in, [r, g, b, blend] out.
pub fn decoder_seeded(in_dim: usize, seed: u64) -> Result<MlpWeights> {
    MlpWeights::seeded_xavier(
        &[in_dim, DECODER_HIDDEN, 4],
        &[Activation::Softplus, Activation::Sigmoid],
        seed,
    )
}

/// Decoder that ignores its input: one sigmoid layer with zero weights and
/// the given logits as biases. Pins (r, g, b, blend) for tests and fixtures.
pub fn constant_decoder(in_dim: usize, logits: [f64; 4]) -> MlpWeights {
    use crate::neural::Layer;
    let layer = Layer::new(in_dim, 4, vec![0.0; in_dim * 4], logits.to_vec(), Activation::Sigmoid)
        .expect("dims are consistent by construction");
    MlpWeights::new(vec![layer]).expect("single layer is a valid network")
}

/// Exact per-point convex blend of decoded and anchor color.
pub fn point_blend(c: [f64; 3], b: f64, c_uv: [f64; 3]) -> [f64; 3] {
    [
        c[0] * (1.0 - b) + c_uv[0] * b,
        c[1] * (1.0 - b) + c_uv[1] * b,
        c[2] * (1.0 - b) + c_uv[2] * b,
    ]
}

/// Pixel-aligned anchor color for a world point: project through the frontal
/// camera and bilinearly sample, ignoring depth. Points off the image clamp
/// to the border. The z-independence is what makes oblique views stretch,
/// which the image-level blend corrects.
pub fn fetch_anchor_color(anchor: &ImageBuffer, x: Vec3, frontal: &OrthoCamera) -> [f64; 3] {
    let p = frontal.project(x);
    anchor.bilinear_rgb(p.uv.0, p.uv.1)
}

/// Runs the appearance decoder at a point: tri-plane features concatenated
/// with positional features, through the MLP, to `(rgb, blend)`.
pub fn decode_point(scene: &Scene, x: Vec3, ws: &mut RenderScratch) -> Result<([f64; 3], f64)> {
    let tp_ch = scene.triplane.channels();
    let d = tp_ch + scene.oracle.feature_dim();
    ws.decode_in.resize(d, 0.0);
    scene.triplane.sample_into(x, &mut ws.decode_in[..tp_ch])?;
    scene.oracle.features_into(x, &mut ws.decode_in[tp_ch..])?;
    let out = scene.decoder.forward(&ws.decode_in, &mut ws.decode)?;
    Ok(([out[0], out[1], out[2]], out[3]))
}

/// Integrate color, blend weight, and opacity over the hit interval.
///
/// `n_samples` midpoints are placed uniformly in `[t_hit - hw, t_hit + hw]`
/// and composited with piecewise-constant transmittance: with spacing d,
/// `T_i = exp(-sum_{j<i} sigma_j d)` and `w_i = T_i (1 - exp(-sigma_i d))`.
/// The accumulated opacity telescopes to `1 - exp(-sum sigma_i d)`.
pub fn render_interval(
    scene: &Scene,
    ray: &Ray,
    trace: &TraceResult,
    settings: &RenderSettings,
    ws: &mut RenderScratch,
) -> Result<IntervalRender> {
    if !trace.surface_like() {
        return Err(Error::contract(
            "render_interval called on a ray that escaped the scene",
        ));
    }
    let hw = settings.halfwidth(&scene.density);
    let n = settings.n_samples;
    let delta = 2.0 * hw / n as f64;
    let t0 = trace.t - hw;

    let mut color = [0.0; 3];
    let mut blend = 0.0;
    let mut alpha = 0.0;
    let mut depth_acc = 0.0;
    let mut optical_depth = 0.0f64;
    for i in 0..n {
        let t = t0 + (i as f64 + 0.5) * delta;
        let x = ray.at(t);
        let s = scene.field.eval(x, &mut ws.field);
        let sigma = sdf_to_density(s, &scene.density);
        let (c, b) = decode_point(scene, x, ws)?;
        let c_b = match &scene.anchor {
            Some(anchor) => point_blend(c, b, fetch_anchor_color(anchor, x, &scene.frontal)),
            None => c,
        };
        let transmittance = (-optical_depth).exp();
        let w = transmittance * (1.0 - (-sigma * delta).exp());
        color[0] += w * c_b[0];
        color[1] += w * c_b[1];
        color[2] += w * c_b[2];
        blend += w * b;
        depth_acc += w * t;
        alpha += w;
        optical_depth += sigma * delta;
    }
    Ok(IntervalRender {
        color,
        blend,
        alpha,
        depth: depth_acc / alpha.max(1e-8),
    })
}

/// Resample the anchor into a render view using the rendered depth: each
/// masked pixel is lifted to its surface point and projected through the
/// frontal camera. Pixels with mask at or below one half get background.
pub fn warp_anchor(
    anchor: &ImageBuffer,
    frontal: &OrthoCamera,
    render_cam: &OrthoCamera,
    depth: &ImageBuffer,
    m_s: &ImageBuffer,
    background: [f64; 3],
) -> Result<ImageBuffer> {
    warp_anchor_culled(anchor, frontal, render_cam, depth, m_s, background, None)
}

/// As [`warp_anchor`]; when `facing` is given, masked pixels whose surface
/// point fails the predicate get background too. There is no occlusion test:
/// back-facing geometry happily fetches the front texture unless culled.
pub fn warp_anchor_culled(
    anchor: &ImageBuffer,
    frontal: &OrthoCamera,
    render_cam: &OrthoCamera,
    depth: &ImageBuffer,
    m_s: &ImageBuffer,
    background: [f64; 3],
    mut facing: Option<&mut dyn FnMut(Vec3) -> bool>,
) -> Result<ImageBuffer> {
    let (w, h) = (depth.width(), depth.height());
    if depth.channels() != 1 || m_s.channels() != 1 {
        return Err(Error::shape(format!(
            "depth and mask must be scalar images, got {} and {} channels",
            depth.channels(),
            m_s.channels()
        )));
    }
    if m_s.width() != w || m_s.height() != h || render_cam.width != w || render_cam.height != h {
        return Err(Error::shape(format!(
            "depth {}x{}, mask {}x{}, and camera {}x{} resolutions must agree",
            w,
            h,
            m_s.width(),
            m_s.height(),
            render_cam.width,
            render_cam.height
        )));
    }
    let mut out = ImageBuffer::new(w, h, 3)?;
    for row in 0..h {
        for col in 0..w {
            let px = out.pixel_mut(col, row)?;
            px.copy_from_slice(&background);
            if m_s.scalar(col, row)? <= 0.5 {
                continue;
            }
            let ray = render_cam.camera_ray(col, row, (0.5, 0.5))?;
            let x = ray.at(depth.scalar(col, row)?);
            if let Some(f) = facing.as_mut() {
                if !f(x) {
                    continue;
                }
            }
            let c = fetch_anchor_color(anchor, x, frontal);
            out.pixel_mut(col, row)?.copy_from_slice(&c);
        }
    }
    Ok(out)
}

/// Per-pixel convex blend of the raw render with the warped anchor,
/// weighted by the rendered blend map.
pub fn image_blend(
    i_raw: &ImageBuffer,
    i_map: &ImageBuffer,
    anchor_warped: &ImageBuffer,
) -> Result<ImageBuffer> {
    let (w, h) = (i_raw.width(), i_raw.height());
    if i_map.width() != w
        || i_map.height() != h
        || anchor_warped.width() != w
        || anchor_warped.height() != h
        || i_raw.channels() != 3
        || i_map.channels() != 1
        || anchor_warped.channels() != 3
    {
        return Err(Error::shape(format!(
            "image blend needs matching RGB/scalar/RGB buffers, got {}x{}x{}, {}x{}x{}, {}x{}x{}",
            w,
            h,
            i_raw.channels(),
            i_map.width(),
            i_map.height(),
            i_map.channels(),
            anchor_warped.width(),
            anchor_warped.height(),
            anchor_warped.channels()
        )));
    }
    let mut out = ImageBuffer::new(w, h, 3)?;
    for row in 0..h {
        for col in 0..w {
            let m = i_map.scalar(col, row)?;
            let raw = i_raw.pixel(col, row)?;
            let warp = anchor_warped.pixel(col, row)?;
            let px = out.pixel_mut(col, row)?;
            for ch in 0..3 {
                px[ch] = raw[ch] * (1.0 - m) + warp[ch] * m;
            }
        }
    }
    Ok(out)
}

/// Full frame render: raw color, blend map, alpha, depth, and the final
/// image-blended view.
#[derive(Debug, Clone)]
pub struct RenderProduct {
    pub i_raw: ImageBuffer,
    pub i_map: ImageBuffer,
    pub m_s: ImageBuffer,
    pub depth: ImageBuffer,
    pub i_v: ImageBuffer,
}

struct RowOut {
    raw: Vec<f64>,
    map: Vec<f64>,
    alpha: Vec<f64>,
    depth: Vec<f64>,
}

/// Render one view of the scene at the camera's resolution. Pixels whose
/// rays escape get background color, zero alpha, zero blend, zero depth.
/// Rows render in parallel; output is independent of worker count.
pub fn render_view(
    scene: &Scene,
    camera: &OrthoCamera,
    settings: &RenderSettings,
) -> Result<RenderProduct> {
    settings.validate()?;
    scene.validate()?;
    let (w, h) = (camera.width, camera.height);
    let bg = settings.background;
    let rows: Result<Vec<RowOut>> = (0..h)
        .into_par_iter()
        .map(|row| {
            let mut ws = RenderScratch::default();
            let mut out = RowOut {
                raw: vec![0.0; w as usize * 3],
                map: vec![0.0; w as usize],
                alpha: vec![0.0; w as usize],
                depth: vec![0.0; w as usize],
            };
            for col in 0..w {
                let ray = camera.camera_ray(col, row, settings.jitter.offset(col, row))?;
                let trace = sphere_trace(&scene.field, &ray, &scene.trace, &mut ws.field);
                let c = col as usize;
                if trace.surface_like() {
                    let iv = render_interval(scene, &ray, &trace, settings, &mut ws)?;
                    for ch in 0..3 {
                        out.raw[c * 3 + ch] = iv.color[ch] + (1.0 - iv.alpha) * bg[ch];
                    }
                    out.map[c] = iv.blend;
                    out.alpha[c] = iv.alpha;
                    out.depth[c] = iv.depth;
                } else {
                    out.raw[c * 3..c * 3 + 3].copy_from_slice(&bg);
                }
            }
            Ok(out)
        })
        .collect();
    let rows = rows?;

    let mut i_raw = ImageBuffer::new(w, h, 3)?;
    let mut i_map = ImageBuffer::new(w, h, 1)?;
    let mut m_s = ImageBuffer::new(w, h, 1)?;
    let mut depth = ImageBuffer::new(w, h, 1)?;
    for (row, out) in rows.iter().enumerate() {
        let base = row * w as usize;
        i_raw.data_mut()[base * 3..(base + w as usize) * 3].copy_from_slice(&out.raw);
        i_map.data_mut()[base..base + w as usize].copy_from_slice(&out.map);
        m_s.data_mut()[base..base + w as usize].copy_from_slice(&out.alpha);
        depth.data_mut()[base..base + w as usize].copy_from_slice(&out.depth);
    }

    let i_v = match &scene.anchor {
        Some(anchor) => {
            let warped = if settings.warp_normal_cull {
                let mut ws = FieldScratch::default();
                let field = &scene.field;
                let forward = scene.frontal.forward;
                let mut facing =
                    move |x: Vec3| field.gradient(x, &mut ws).dot(forward) < 0.0;
                warp_anchor_culled(
                    anchor,
                    &scene.frontal,
                    camera,
                    &depth,
                    &m_s,
                    bg,
                    Some(&mut facing),
                )?
            } else {
                warp_anchor(anchor, &scene.frontal, camera, &depth, &m_s, bg)?
            };
            image_blend(&i_raw, &i_map, &warped)?
        }
        None => i_raw.clone(),
    };

    Ok(RenderProduct {
        i_raw,
        i_map,
        m_s,
        depth,
        i_v,
    })
}

/// Binary silhouette: one where the occupancy march hits, zero elsewhere.
pub fn render_mask_occupancy(
    oracle: &OccupancyOracle,
    camera: &OrthoCamera,
    params: &MarchParams,
) -> Result<ImageBuffer> {
    params.validate()?;
    let (w, h) = (camera.width, camera.height);
    let rows: Result<Vec<Vec<f64>>> = (0..h)
        .into_par_iter()
        .map(|row| {
            let mut out = vec![0.0; w as usize];
            for col in 0..w {
                let ray = camera.camera_ray(col, row, (0.5, 0.5))?;
                if ray_march_occupancy(oracle, &ray, params).hit {
                    out[col as usize] = 1.0;
                }
            }
            Ok(out)
        })
        .collect();
    let rows = rows?;
    let mut mask = ImageBuffer::new(w, h, 1)?;
    for (row, out) in rows.iter().enumerate() {
        let base = row * w as usize;
        mask.data_mut()[base..base + w as usize].copy_from_slice(out);
    }
    Ok(mask)
}

/// Accumulated opacity of the SDF-derived density: sphere-trace each pixel
/// and integrate transmittance over the hit interval, skipping the color
/// decode. Escaped rays get zero.
pub fn render_alpha_sdf<S: Sdf>(
    field: &S,
    density: &DensityParams,
    camera: &OrthoCamera,
    trace: &TraceParams,
    settings: &RenderSettings,
) -> Result<ImageBuffer> {
    settings.validate()?;
    trace.validate()?;
    let (w, h) = (camera.width, camera.height);
    let hw = settings.halfwidth(density);
    let n = settings.n_samples;
    let delta = 2.0 * hw / n as f64;
    let rows: Result<Vec<Vec<f64>>> = (0..h)
        .into_par_iter()
        .map(|row| {
            let mut ws = FieldScratch::default();
            let mut out = vec![0.0; w as usize];
            for col in 0..w {
                let ray = camera.camera_ray(col, row, settings.jitter.offset(col, row))?;
                let tr = sphere_trace(field, &ray, trace, &mut ws);
                if !tr.surface_like() {
                    continue;
                }
                let t0 = tr.t - hw;
                let mut optical_depth = 0.0;
                for i in 0..n {
                    let x = ray.at(t0 + (i as f64 + 0.5) * delta);
                    optical_depth += sdf_to_density(field.eval(x, &mut ws), density) * delta;
                }
                out[col as usize] = 1.0 - (-optical_depth).exp();
            }
            Ok(out)
        })
        .collect();
    let rows = rows?;
    let mut mask = ImageBuffer::new(w, h, 1)?;
    for (row, out) in rows.iter().enumerate() {
        let base = row * w as usize;
        mask.data_mut()[base..base + w as usize].copy_from_slice(out);
    }
    Ok(mask)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::SdfShape;
    use crate::tracer::TraceOutcome;
    use approx::{assert_abs_diff_eq, assert_relative_eq};
    use proptest::prelude::*;

    fn sphere_scene(radius: f64, alpha: f64, decoder: MlpWeights) -> Scene {
        let shape = SdfShape::Sphere {
            center: Vec3::new(0.0, 0.0, 0.0),
            radius,
        };
        let oracle = PriorOracle::new(
            OccupancyOracle::Hard {
                shape: Arc::new(shape.clone()),
            },
            None,
        );
        Scene {
            field: SdfField::Analytic(shape),
            density: DensityParams::new(alpha).unwrap(),
            triplane: Arc::new(TriPlane::constant(8, TriPlane::DEFAULT_CHANNELS, 0.0).unwrap()),
            decoder: Arc::new(decoder),
            oracle: Arc::new(oracle),
            anchor: None,
            frontal: OrthoCamera::frontal(DEFAULT_CAMERA_DISTANCE, 1.0, 0.5, 128, 64).unwrap(),
            trace: TraceParams::default(),
            march: MarchParams::default(),
        }
    }

    fn default_in_dim() -> usize {
        TriPlane::DEFAULT_CHANNELS + PriorOracle::DEFAULT_FEATURE_DIM
    }

    fn hit_at(ray: &Ray, t: f64, s: f64) -> TraceResult {
        TraceResult {
            t,
            x: ray.at(t),
            s,
            steps: 0,
            outcome: TraceOutcome::Hit,
            started_inside: false,
        }
    }

    fn psnr(err_sq_mean: f64) -> f64 {
        -10.0 * err_sq_mean.max(1e-300).log10()
    }

    #[test]
    fn point_blend_endpoints_and_midpoint() {
        let c = [0.2, 0.4, 0.6];
        let uv = [1.0, 0.0, 0.5];
        assert_eq!(point_blend(c, 0.0, uv), c);
        assert_eq!(point_blend(c, 1.0, uv), uv);
        let mid = point_blend([0.0, 0.0, 0.0], 0.25, [1.0, 1.0, 1.0]);
        assert_eq!(mid, [0.25, 0.25, 0.25]);
    }

    proptest! {
        #[test]
        fn point_blend_stays_in_channel_bounds(
            c in prop::array::uniform3(0.0..=1.0f64),
            uv in prop::array::uniform3(0.0..=1.0f64),
            b in 0.0..=1.0f64,
        ) {
            let out = point_blend(c, b, uv);
            for ch in 0..3 {
                let lo = c[ch].min(uv[ch]);
                let hi = c[ch].max(uv[ch]);
                prop_assert!(out[ch] >= lo - 1e-12 && out[ch] <= hi + 1e-12);
            }
        }
    }

    #[test]
    fn anchor_fetch_is_z_independent_and_clamped() {
        let mut anchor = ImageBuffer::new(8, 4, 3).unwrap();
        for row in 0..4 {
            for col in 0..8 {
                let px = anchor.pixel_mut(col, row).unwrap();
                px[0] = col as f64 / 7.0;
                px[1] = row as f64 / 3.0;
                px[2] = 0.5;
            }
        }
        let cam = OrthoCamera::frontal(2.0, 1.0, 0.5, 8, 4).unwrap();

        let a = fetch_anchor_color(&anchor, Vec3::new(0.3, 0.1, 0.0), &cam);
        let b = fetch_anchor_color(&anchor, Vec3::new(0.3, 0.1, -0.7), &cam);
        assert_eq!(a, b);

        let center = fetch_anchor_color(&anchor, Vec3::new(0.0, 0.0, 0.0), &cam);
        let expect = anchor.bilinear_rgb(0.5, 0.5);
        assert_eq!(center, expect);

        let far = fetch_anchor_color(&anchor, Vec3::new(50.0, 50.0, 0.0), &cam);
        let corner = anchor.pixel(7, 0).unwrap();
        assert_eq!(far, [corner[0], corner[1], corner[2]]);
    }

    #[test]
    fn saturated_first_sample_dominates_the_interval() {
        let scene = {
            let mut s = sphere_scene(10.0, 0.01, constant_decoder(default_in_dim(), [40.0, -40.0, -40.0, -40.0]));
            s.field = SdfField::Analytic(SdfShape::Sphere {
                center: Vec3::new(0.0, 0.0, 0.0),
                radius: 10.0,
            });
            s
        };
        let settings = RenderSettings {
            interval_scale: 30.0,
            ..RenderSettings::default()
        };
        let ray = Ray::new(Vec3::new(0.0, 0.0, 0.0), Vec3::new(0.0, 0.0, -1.0));
        let trace = hit_at(&ray, 1.0, 0.0);
        let mut ws = RenderScratch::default();
        let iv = render_interval(&scene, &ray, &trace, &settings, &mut ws).unwrap();
        // Deep inside, every sample saturates: sigma * delta = 10 per
        // sample, so the first midpoint at t = 0.75 soaks up the weight.
        assert!(iv.alpha > 0.9999, "alpha {}", iv.alpha);
        assert_relative_eq!(iv.color[0], iv.alpha, max_relative = 1e-12);
        assert!(iv.color[1] < 1e-9 && iv.color[2] < 1e-9);
        assert_abs_diff_eq!(iv.depth, 0.75, epsilon = 1e-4);
    }

    #[test]
    fn zero_density_interval_is_fully_transparent() {
        let scene = sphere_scene(0.5, 1e-3, constant_decoder(default_in_dim(), [40.0, 40.0, 40.0, 40.0]));
        let ray = Ray::new(Vec3::new(2.0, 0.0, 2.0), Vec3::new(0.0, 0.0, -1.0));
        // Fabricated hit far from the surface: s/alpha underflows the sigmoid.
        let trace = hit_at(&ray, 2.0, 0.0);
        let mut ws = RenderScratch::default();
        let iv = render_interval(&scene, &ray, &trace, &RenderSettings::default(), &mut ws).unwrap();
        assert_eq!(iv.color, [0.0, 0.0, 0.0]);
        assert_eq!(iv.blend, 0.0);
        assert_eq!(iv.alpha, 0.0);
        assert_eq!(iv.depth, 0.0);
    }

    #[test]
    fn render_interval_rejects_escaped_rays() {
        let scene = sphere_scene(0.5, 0.02, constant_decoder(default_in_dim(), [0.0; 4]));
        let ray = Ray::new(Vec3::new(0.0, 0.0, 2.0), Vec3::new(0.0, 0.0, -1.0));
        let trace = TraceResult {
            t: 4.0,
            x: ray.at(4.0),
            s: 1.0,
            steps: 3,
            outcome: TraceOutcome::Escaped,
            started_inside: false,
        };
        let mut ws = RenderScratch::default();
        let err = render_interval(&scene, &ray, &trace, &RenderSettings::default(), &mut ws);
        assert!(err.is_err());
    }

    /// Random smooth scene for quadrature checks: a sphere with varied
    /// center/radius/alpha, a seeded decoder, and a seeded tri-plane so the
    /// decoded color actually varies along the interval.
    fn random_quadrature_case(rng: &mut SplitMix64) -> (Scene, Ray, TraceResult) {
        let radius = 0.3 + 0.4 * rng.next_f64();
        let center = Vec3::new(
            0.2 * (rng.next_f64() - 0.5),
            0.2 * (rng.next_f64() - 0.5),
            0.2 * (rng.next_f64() - 0.5),
        );
        let alpha = 1e-3 + 4e-3 * rng.next_f64();
        let mut scene = sphere_scene(radius, alpha, MlpWeights::seeded_xavier(
            &[default_in_dim(), 16, 4],
            &[Activation::Softplus, Activation::Sigmoid],
            rng.next_u64(),
        ).unwrap());
        scene.field = SdfField::Analytic(SdfShape::Sphere { center, radius });
        scene.triplane = Arc::new(TriPlane::seeded(16, TriPlane::DEFAULT_CHANNELS, rng.next_u64(), 0.5).unwrap());
        scene.trace = TraceParams {
            eps: 1e-6,
            max_steps: 128,
            ..TraceParams::default()
        };

        // Aim well inside the silhouette so the hit is non-grazing.
        let rho_max = 0.7 * radius;
        let (dx, dy) = loop {
            let dx = rho_max * 2.0 * (rng.next_f64() - 0.5);
            let dy = rho_max * 2.0 * (rng.next_f64() - 0.5);
            if (dx * dx + dy * dy).sqrt() < rho_max {
                break (dx, dy);
            }
        };
        let ray = Ray::new(
            Vec3::new(center.x + dx, center.y + dy, center.z + 2.0),
            Vec3::new(0.0, 0.0, -1.0),
        );
        let mut ws = FieldScratch::default();
        let trace = sphere_trace(&scene.field, &ray, &scene.trace, &mut ws);
        assert!(trace.surface_like());
        (scene, ray, trace)
    }

    #[test]
    fn six_samples_track_dense_quadrature() {
        let mut rng = SplitMix64::new(0x9d6a);
        let mut worst_c = 0.0f64;
        let mut worst_a = 0.0f64;
        for _ in 0..100 {
            let (scene, ray, trace) = random_quadrature_case(&mut rng);
            let mut ws = RenderScratch::default();
            let coarse = render_interval(
                &scene,
                &ray,
                &trace,
                &RenderSettings::default(),
                &mut ws,
            )
            .unwrap();
            let dense = render_interval(
                &scene,
                &ray,
                &trace,
                &RenderSettings {
                    n_samples: 512,
                    ..RenderSettings::default()
                },
                &mut ws,
            )
            .unwrap();
            for ch in 0..3 {
                worst_c = worst_c.max((coarse.color[ch] - dense.color[ch]).abs());
            }
            worst_a = worst_a.max((coarse.alpha - dense.alpha).abs());
        }
        assert!(worst_c < 0.01, "worst color error {worst_c}");
        assert!(worst_a < 0.01, "worst alpha error {worst_a}");
    }

    #[test]
    fn quadrature_error_shrinks_with_sample_count() {
        let mut rng = SplitMix64::new(0x51c2);
        let counts = [2usize, 4, 6, 12, 24];
        let mut mean_err = [0.0f64; 5];
        for _ in 0..100 {
            let (scene, ray, trace) = random_quadrature_case(&mut rng);
            let mut ws = RenderScratch::default();
            let dense = render_interval(
                &scene,
                &ray,
                &trace,
                &RenderSettings {
                    n_samples: 512,
                    ..RenderSettings::default()
                },
                &mut ws,
            )
            .unwrap();
            for (k, &n) in counts.iter().enumerate() {
                let coarse = render_interval(
                    &scene,
                    &ray,
                    &trace,
                    &RenderSettings {
                        n_samples: n,
                        ..RenderSettings::default()
                    },
                    &mut ws,
                )
                .unwrap();
                let err = (0..3)
                    .map(|ch| (coarse.color[ch] - dense.color[ch]).abs())
                    .fold(0.0f64, f64::max)
                    .max((coarse.alpha - dense.alpha).abs());
                mean_err[k] += err / 100.0;
            }
        }
        for k in 1..counts.len() {
            assert!(
                mean_err[k] <= mean_err[k - 1] + 1e-9,
                "error grew from n={} ({}) to n={} ({})",
                counts[k - 1],
                mean_err[k - 1],
                counts[k],
                mean_err[k]
            );
        }
    }

    #[test]
    fn alpha_matches_the_telescoped_optical_depth() {
        let mut rng = SplitMix64::new(0x77aa);
        for _ in 0..50 {
            let (scene, ray, trace) = random_quadrature_case(&mut rng);
            let settings = RenderSettings::default();
            let mut ws = RenderScratch::default();
            let iv = render_interval(&scene, &ray, &trace, &settings, &mut ws).unwrap();

            let hw = settings.halfwidth(&scene.density);
            let delta = 2.0 * hw / settings.n_samples as f64;
            let mut total = 0.0;
            for i in 0..settings.n_samples {
                let t = trace.t - hw + (i as f64 + 0.5) * delta;
                let s = scene.field.eval(ray.at(t), &mut ws.field);
                total += sdf_to_density(s, &scene.density) * delta;
            }
            let bound = 1.0 - (-total).exp();
            assert!(iv.alpha >= 0.0 && iv.alpha <= 1.0);
            assert_abs_diff_eq!(iv.alpha, bound, epsilon = 1e-9);
        }
    }

    #[test]
    fn frontal_disc_area_matches_the_silhouette() {
        let radius = 0.4;
        let mut scene = sphere_scene(
            radius,
            5e-4,
            constant_decoder(default_in_dim(), [40.0, -40.0, -40.0, -40.0]),
        );
        scene.trace = TraceParams {
            eps: 1e-5,
            max_steps: 64,
            ..TraceParams::default()
        };
        let cam = OrthoCamera::frontal(DEFAULT_CAMERA_DISTANCE, 1.0, 0.5, 512, 256).unwrap();
        let out = render_view(&scene, &cam, &RenderSettings::default()).unwrap();

        let mut disc = 0usize;
        for row in 0..256 {
            for col in 0..512 {
                if out.m_s.scalar(col, row).unwrap() > 0.5 {
                    disc += 1;
                }
            }
        }
        let frac = disc as f64 / (512.0 * 256.0);
        let expect = std::f64::consts::PI * radius * radius / (4.0 * 1.0 * 0.5);
        assert!(
            (frac / expect - 1.0).abs() < 0.01,
            "disc fraction {frac} vs analytic {expect}"
        );

        // Center pixel: red surface over white background, with exactly the
        // saturated-interval transparency 1 - A = exp(-interval_scale)
        // bleeding white into the green and blue channels. Depth sits at the
        // front of the sphere; the corner pixel is untouched background.
        let leak = (-3.0f64).exp();
        let center = out.i_raw.pixel(256, 128).unwrap();
        assert!(center[0] > 0.99);
        assert_abs_diff_eq!(center[1], leak, epsilon = 2e-3);
        assert_abs_diff_eq!(center[2], leak, epsilon = 2e-3);
        let t_expect = DEFAULT_CAMERA_DISTANCE - radius;
        assert_abs_diff_eq!(out.depth.scalar(256, 128).unwrap(), t_expect, epsilon = 2e-3);
        let corner = out.i_raw.pixel(0, 0).unwrap();
        assert_eq!(corner, &[1.0, 1.0, 1.0][..]);
        assert_eq!(out.m_s.scalar(0, 0).unwrap(), 0.0);
        assert_eq!(out.i_map.scalar(0, 0).unwrap(), 0.0);
        assert_eq!(out.depth.scalar(0, 0).unwrap(), 0.0);
    }

    #[test]
    fn alpha_map_saturates_inside_and_vanishes_outside() {
        let radius = 0.8;
        let shape = SdfShape::Sphere {
            center: Vec3::new(0.0, 0.0, 0.0),
            radius,
        };
        let trace = TraceParams {
            eps: 1e-5,
            max_steps: 256,
            ..TraceParams::default()
        };
        let cam = OrthoCamera::frontal(DEFAULT_CAMERA_DISTANCE, 1.0, 0.5, 128, 64).unwrap();
        let density = DensityParams::new(0.01).unwrap();
        // The default interval scale saturates at 1 - e^-3 = 0.9502, leaving
        // no margin over the 0.95 bar once ray curvature bends the interval;
        // a doubled interval saturates at 0.9975.
        let settings = RenderSettings {
            interval_scale: 6.0,
            ..RenderSettings::default()
        };
        let mask = render_alpha_sdf(&shape, &density, &cam, &trace, &settings).unwrap();

        for row in 0..64 {
            for col in 0..128 {
                let ray = cam.camera_ray(col, row, (0.5, 0.5)).unwrap();
                let rho = (ray.origin.x * ray.origin.x + ray.origin.y * ray.origin.y).sqrt();
                let a = mask.scalar(col, row).unwrap();
                if rho < 0.9 * radius {
                    assert!(a > 0.95, "inside alpha {a} at rho {rho}");
                } else if rho > 1.1 * radius {
                    assert!(a < 0.05, "outside alpha {a} at rho {rho}");
                }
            }
        }
    }

    #[test]
    fn occupancy_mask_matches_the_analytic_disc() {
        let radius = 0.8;
        let oracle = OccupancyOracle::Hard {
            shape: Arc::new(SdfShape::Sphere {
                center: Vec3::new(0.0, 0.0, 0.0),
                radius,
            }),
        };
        let cam = OrthoCamera::frontal(DEFAULT_CAMERA_DISTANCE, 1.0, 0.5, 512, 256).unwrap();
        let mask = render_mask_occupancy(&oracle, &cam, &MarchParams::default()).unwrap();

        let (mut inter, mut union) = (0usize, 0usize);
        for row in 0..256 {
            for col in 0..512 {
                let ray = cam.camera_ray(col, row, (0.5, 0.5)).unwrap();
                let rho = (ray.origin.x * ray.origin.x + ray.origin.y * ray.origin.y).sqrt();
                let analytic = rho < radius;
                let rendered = mask.scalar(col, row).unwrap() > 0.5;
                if analytic && rendered {
                    inter += 1;
                }
                if analytic || rendered {
                    union += 1;
                }
            }
        }
        let iou = inter as f64 / union as f64;
        assert!(iou > 0.99, "IoU {iou}");
    }

    #[test]
    fn empty_scene_mask_is_all_zero() {
        let oracle = OccupancyOracle::Hard {
            shape: Arc::new(SdfShape::Sphere {
                center: Vec3::new(0.0, 50.0, 0.0),
                radius: 0.1,
            }),
        };
        let cam = OrthoCamera::frontal(DEFAULT_CAMERA_DISTANCE, 1.0, 0.5, 32, 16).unwrap();
        let mask = render_mask_occupancy(&oracle, &cam, &MarchParams::default()).unwrap();
        assert!(mask.data().iter().all(|&v| v == 0.0));
    }

    fn smooth_anchor(width: u32, height: u32) -> ImageBuffer {
        let mut img = ImageBuffer::new(width, height, 3).unwrap();
        for row in 0..height {
            for col in 0..width {
                let u = (col as f64 + 0.5) / width as f64;
                let v = (row as f64 + 0.5) / height as f64;
                let px = img.pixel_mut(col, row).unwrap();
                px[0] = 0.5 + 0.4 * (3.1 * u + 1.7 * v).sin() * (2.3 * v).cos();
                px[1] = 0.5 + 0.4 * (2.2 * u).cos() * (4.1 * v + 0.3).sin();
                px[2] = 0.5 + 0.4 * (1.3 * u + 2.9 * v).cos();
            }
        }
        img
    }

    #[test]
    fn full_blend_pipeline_reproduces_the_anchor() {
        let radius = 0.8;
        let mut scene = sphere_scene(
            radius,
            1e-3,
            constant_decoder(default_in_dim(), [0.0, 0.0, 0.0, 40.0]),
        );
        scene.trace = TraceParams {
            eps: 1e-6,
            max_steps: 256,
            ..TraceParams::default()
        };
        let cam = OrthoCamera::frontal(DEFAULT_CAMERA_DISTANCE, 1.0, 0.5, 128, 64).unwrap();
        scene.frontal = cam.clone();
        let anchor = smooth_anchor(128, 64);
        scene.anchor = Some(Arc::new(anchor.clone()));
        let settings = RenderSettings {
            interval_scale: 6.0,
            ..RenderSettings::default()
        };
        let out = render_view(&scene, &cam, &settings).unwrap();

        let mut err = 0.0;
        let mut count = 0usize;
        for row in 0..64 {
            for col in 0..128 {
                if out.m_s.scalar(col, row).unwrap() <= 0.5 {
                    continue;
                }
                let got = out.i_v.pixel(col, row).unwrap();
                let want = anchor.pixel(col, row).unwrap();
                for ch in 0..3 {
                    err += (got[ch] - want[ch]).powi(2);
                }
                count += 3;
            }
        }
        assert!(count > 1000, "mask unexpectedly small: {count}");
        let p = psnr(err / count as f64);
        assert!(p > 40.0, "masked PSNR {p} dB");
    }

    #[test]
    fn identity_warp_reproduces_the_anchor() {
        let anchor = smooth_anchor(64, 32);
        let cam = OrthoCamera::frontal(2.0, 1.0, 0.5, 64, 32).unwrap();
        let depth = ImageBuffer::from_data(64, 32, 1, vec![1.5; 64 * 32]).unwrap();
        let m_s = ImageBuffer::from_data(64, 32, 1, vec![1.0; 64 * 32]).unwrap();
        let warped = warp_anchor(&anchor, &cam, &cam, &depth, &m_s, [0.0; 3]).unwrap();

        let mut err = 0.0;
        for (a, b) in warped.data().iter().zip(anchor.data()) {
            err += (a - b) * (a - b);
        }
        let p = psnr(err / warped.data().len() as f64);
        assert!(p > 50.0, "identity warp PSNR {p} dB");
    }

    #[test]
    fn masked_out_warp_pixels_get_background() {
        let anchor = smooth_anchor(16, 8);
        let cam = OrthoCamera::frontal(2.0, 1.0, 0.5, 16, 8).unwrap();
        let depth = ImageBuffer::from_data(16, 8, 1, vec![2.0; 16 * 8]).unwrap();
        let mut m_s = ImageBuffer::new(16, 8, 1).unwrap();
        m_s.data_mut()[4 * 16 + 3] = 1.0;
        let bg = [0.25, 0.5, 0.75];
        let warped = warp_anchor(&anchor, &cam, &cam, &depth, &m_s, bg).unwrap();
        assert_eq!(warped.pixel(0, 0).unwrap(), &bg[..]);
        assert_ne!(warped.pixel(3, 4).unwrap(), &bg[..]);
    }

    #[test]
    fn back_view_warp_mirrors_the_front_texture() {
        let anchor = smooth_anchor(64, 32);
        let frontal = OrthoCamera::frontal(2.0, 1.0, 0.5, 64, 32).unwrap();
        let back =
            OrthoCamera::orbit(std::f64::consts::PI, 0.0, 2.0, 1.0, 0.5, 64, 32).unwrap();
        // Flat slab at z = 0 seen from the back: depth equals the orbit
        // radius everywhere.
        let depth = ImageBuffer::from_data(64, 32, 1, vec![2.0; 64 * 32]).unwrap();
        let m_s = ImageBuffer::from_data(64, 32, 1, vec![1.0; 64 * 32]).unwrap();
        let warped = warp_anchor(&anchor, &frontal, &back, &depth, &m_s, [0.0; 3]).unwrap();

        for row in 0..32 {
            for col in 0..64 {
                let got = warped.pixel(col, row).unwrap();
                let want = anchor.pixel(63 - col, row).unwrap();
                for ch in 0..3 {
                    assert_abs_diff_eq!(got[ch], want[ch], epsilon = 1e-9);
                }
            }
        }
    }

    #[test]
    fn image_blend_endpoints_and_pointwise_rule() {
        let raw = smooth_anchor(8, 4);
        let warp = {
            let mut w = smooth_anchor(8, 4);
            for v in w.data_mut() {
                *v = 1.0 - *v;
            }
            w
        };
        let zeros = ImageBuffer::new(8, 4, 1).unwrap();
        let ones = ImageBuffer::from_data(8, 4, 1, vec![1.0; 32]).unwrap();

        assert_eq!(image_blend(&raw, &zeros, &warp).unwrap().data(), raw.data());
        assert_eq!(image_blend(&raw, &ones, &warp).unwrap().data(), warp.data());

        let mut checker = ImageBuffer::new(8, 4, 1).unwrap();
        for row in 0..4u32 {
            for col in 0..8u32 {
                checker.data_mut()[(row * 8 + col) as usize] = ((row + col) % 2) as f64;
            }
        }
        let out = image_blend(&raw, &checker, &warp).unwrap();
        for row in 0..4 {
            for col in 0..8 {
                let m = checker.scalar(col, row).unwrap();
                let want = point_blend(
                    [
                        raw.pixel(col, row).unwrap()[0],
                        raw.pixel(col, row).unwrap()[1],
                        raw.pixel(col, row).unwrap()[2],
                    ],
                    m,
                    [
                        warp.pixel(col, row).unwrap()[0],
                        warp.pixel(col, row).unwrap()[1],
                        warp.pixel(col, row).unwrap()[2],
                    ],
                );
                assert_eq!(out.pixel(col, row).unwrap(), &want[..]);
            }
        }
    }

    #[test]
    fn image_blend_rejects_mismatched_shapes() {
        let raw = ImageBuffer::new(8, 4, 3).unwrap();
        let map = ImageBuffer::new(4, 4, 1).unwrap();
        let warp = ImageBuffer::new(8, 4, 3).unwrap();
        assert!(image_blend(&raw, &map, &warp).is_err());
    }

    #[test]
    fn scene_validation_names_mismatched_decoder_dims() {
        let scene = sphere_scene(0.5, 0.02, constant_decoder(7, [0.0; 4]));
        let err = scene.validate().unwrap_err().to_string();
        assert!(err.contains('7') && err.contains("32") && err.contains("257"), "{err}");
    }

    #[test]
    fn shared_rays_render_identically_across_camera_layouts() {
        let mut scene = sphere_scene(
            0.5,
            5e-3,
            decoder_seeded(default_in_dim(), 11).unwrap(),
        );
        scene.triplane = Arc::new(TriPlane::seeded(16, TriPlane::DEFAULT_CHANNELS, 3, 0.5).unwrap());
        let cam_a = OrthoCamera::frontal(DEFAULT_CAMERA_DISTANCE, 1.0, 0.5, 64, 32).unwrap();
        let cam_b = OrthoCamera::frontal(DEFAULT_CAMERA_DISTANCE, 2.0, 1.0, 128, 64).unwrap();
        let settings = RenderSettings::default();
        let out_a = render_view(&scene, &cam_a, &settings).unwrap();
        let out_b = render_view(&scene, &cam_b, &settings).unwrap();

        // Pixel (c, r) of camera A and (c + 32, r + 16) of camera B share a
        // bit-identical ray origin, so the full products must agree bitwise.
        for (col_a, row_a) in [(20u32, 15u32), (32, 16), (40, 6)] {
            let (col_b, row_b) = (col_a + 32, row_a + 16);
            assert_eq!(
                out_a.i_raw.pixel(col_a, row_a).unwrap(),
                out_b.i_raw.pixel(col_b, row_b).unwrap()
            );
            assert_eq!(
                out_a.depth.scalar(col_a, row_a).unwrap(),
                out_b.depth.scalar(col_b, row_b).unwrap()
            );
        }
    }

    #[test]
    fn renders_are_deterministic_and_pool_independent() {
        let mut scene = sphere_scene(
            0.5,
            5e-3,
            decoder_seeded(default_in_dim(), 21).unwrap(),
        );
        scene.triplane = Arc::new(TriPlane::seeded(16, TriPlane::DEFAULT_CHANNELS, 5, 0.5).unwrap());
        scene.anchor = Some(Arc::new(smooth_anchor(64, 32)));
        scene.frontal = OrthoCamera::frontal(DEFAULT_CAMERA_DISTANCE, 1.0, 0.5, 64, 32).unwrap();
        let cam = scene.frontal.clone();
        let settings = RenderSettings {
            jitter: Jitter::Seeded(17),
            ..RenderSettings::default()
        };

        let once = render_view(&scene, &cam, &settings).unwrap();
        let twice = render_view(&scene, &cam, &settings).unwrap();
        assert_eq!(once.i_v.data(), twice.i_v.data());

        let pool1 = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let pool2 = rayon::ThreadPoolBuilder::new().num_threads(2).build().unwrap();
        let from1 = pool1.install(|| render_view(&scene, &cam, &settings)).unwrap();
        let from2 = pool2.install(|| render_view(&scene, &cam, &settings)).unwrap();
        assert_eq!(from1.i_v.data(), from2.i_v.data());
        assert_eq!(from1.depth.data(), from2.depth.data());
    }

    #[test]
    fn seeded_jitter_is_reproducible_and_in_range() {
        let j = Jitter::Seeded(99);
        for col in 0..20 {
            for row in 0..20 {
                let a = j.offset(col, row);
                let b = j.offset(col, row);
                assert_eq!(a, b);
                assert!(a.0 >= 0.0 && a.0 < 1.0 && a.1 >= 0.0 && a.1 < 1.0);
            }
        }
        assert_ne!(j.offset(0, 1), j.offset(1, 0));
        assert_eq!(Jitter::Center.offset(5, 9), (0.5, 0.5));
    }

    #[test]
    fn constant_decoder_pins_its_outputs() {
        let dec = constant_decoder(10, [40.0, -40.0, 0.0, 40.0]);
        let mut ws = MlpScratch::default();
        let out = dec.forward(&vec![0.7; 10], &mut ws).unwrap();
        assert_eq!(out[0], 1.0);
        assert!(out[1] < 1e-15);
        assert_eq!(out[2], 0.5);
        assert_eq!(out[3], 1.0);
    }
}
