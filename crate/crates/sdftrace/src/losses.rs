//! Training objectives: silhouette, distance, and gradient-norm terms
//! against the shape prior, plus color-consistency terms that tie rendered
//! views to the anchor image and to the prior's color function.

use rayon::prelude::*;
use serde::Serialize;

use crate::core::{deterministic_mean, ImageBuffer, OrthoCamera, SplitMix64, Vec3};
use crate::error::{Error, Result};
use crate::fields::{DensityParams, FieldScratch, NeuralSdf, Sdf};
use crate::fitting::sample_surface_points;
use crate::neural::{MlpGrads, PriorOracle};
use crate::renderer::{
    decode_point, fetch_anchor_color, render_alpha_sdf, render_mask_occupancy, render_view,
    RenderScratch, RenderSettings, Scene, DEFAULT_CAMERA_DISTANCE,
};
use crate::tracer::{ray_march_occupancy, sphere_trace, MarchParams, TraceParams};

/// Weights of the three geometry objectives.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GeoLossWeights {
    pub mask: f64,
    pub sdf: f64,
    pub eik: f64,
}

impl Default for GeoLossWeights {
    fn default() -> Self {
        GeoLossWeights {
            mask: 1.0,
            sdf: 1.0,
            eik: 0.1,
        }
    }
}

impl GeoLossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("mask", self.mask), ("sdf", self.sdf), ("eik", self.eik)] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::config(format!(
                    "geometry loss weight {name} must be finite and nonnegative, got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// Weights of the color-consistency objectives.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConsistencyWeights {
    /// Blended frontal view against the anchor image.
    pub front_image: f64,
    /// Decoded surface color against the anchor fetch.
    pub point_rgb: f64,
    /// Pull of the blend map toward one.
    pub blend_reg: f64,
    /// Back view against the prior color.
    pub back_image: f64,
}

impl Default for ConsistencyWeights {
    fn default() -> Self {
        ConsistencyWeights {
            front_image: 1.0,
            point_rgb: 8.0,
            blend_reg: 1e-2,
            back_image: 8.0,
        }
    }
}

impl ConsistencyWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("front_image", self.front_image),
            ("point_rgb", self.point_rgb),
            ("blend_reg", self.blend_reg),
            ("back_image", self.back_image),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::config(format!(
                    "consistency loss weight {name} must be finite and nonnegative, got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// Geometry loss terms and their weighted sum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GeoLossTerms {
    pub mask: f64,
    pub sdf: f64,
    pub eik: f64,
    pub total: f64,
}

/// Frontal consistency terms and their weighted sum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FrontConsistency {
    pub image: f64,
    pub rgb: f64,
    pub blend_reg: f64,
    pub total: f64,
}

/// Mean squared distance value over a batch of points that are expected to
/// lie on the surface, where a signed distance field vanishes.
pub fn loss_surface_sdf<S: Sdf>(field: &S, points: &[Vec3]) -> Result<f64> {
    if points.is_empty() {
        return Err(Error::EmptyBatch("surface loss needs at least one point"));
    }
    let sq: Vec<f64> = points
        .par_iter()
        .map_init(FieldScratch::default, |ws, &p| field.eval(p, ws).powi(2))
        .collect();
    Ok(deterministic_mean(&sq))
}

/// As [`loss_surface_sdf`] for the neural field, adding the parameter
/// gradient of the mean into `grads`.
pub fn loss_surface_sdf_with_grads(
    field: &NeuralSdf,
    points: &[Vec3],
    ws: &mut FieldScratch,
    grads: &mut MlpGrads,
) -> Result<f64> {
    if points.is_empty() {
        return Err(Error::EmptyBatch("surface loss needs at least one point"));
    }
    let inv_n = 1.0 / points.len() as f64;
    let mut sq = Vec::with_capacity(points.len());
    for &p in points {
        let s = field.eval(p, ws);
        field.backward_value(ws, 2.0 * s * inv_n, grads);
        sq.push(s * s);
    }
    Ok(deterministic_mean(&sq))
}

/// Mean squared deviation of the field's gradient norm from one; zero
/// exactly on true distance fields.
pub fn loss_eikonal<S: Sdf>(field: &S, points: &[Vec3]) -> Result<f64> {
    if points.is_empty() {
        return Err(Error::EmptyBatch("eikonal loss needs at least one point"));
    }
    let sq: Vec<f64> = points
        .par_iter()
        .map_init(FieldScratch::default, |ws, &p| {
            let r = field.gradient(p, ws).length() - 1.0;
            r * r
        })
        .collect();
    Ok(deterministic_mean(&sq))
}

/// As [`loss_eikonal`] for the neural field, adding the parameter gradient
/// of the mean into `grads`.
pub fn loss_eikonal_with_grads(
    field: &NeuralSdf,
    points: &[Vec3],
    ws: &mut FieldScratch,
    grads: &mut MlpGrads,
) -> Result<f64> {
    if points.is_empty() {
        return Err(Error::EmptyBatch("eikonal loss needs at least one point"));
    }
    let inv_n = 1.0 / points.len() as f64;
    let mut sq = Vec::with_capacity(points.len());
    for &p in points {
        let (_, g) = field.eval_with_grad(p, ws);
        let norm = g.length();
        let r = norm - 1.0;
        // d/dg of (|g| - 1)^2 is 2 r g / |g|; the clamp only engages at the
        // isolated point where the norm (and the loss) is not differentiable.
        let scale = 2.0 * r * inv_n / norm.max(1e-12);
        field.backward_grad(ws, 0.0, g * scale, grads);
        sq.push(r * r);
    }
    Ok(deterministic_mean(&sq))
}

/// Mean squared difference between two scalar masks of equal resolution.
pub fn loss_mask(m_o: &ImageBuffer, m_s: &ImageBuffer) -> Result<f64> {
    if m_o.width() != m_s.width()
        || m_o.height() != m_s.height()
        || m_o.channels() != 1
        || m_s.channels() != 1
    {
        return Err(Error::shape(format!(
            "mask loss needs matching scalar images, got {}x{}x{} and {}x{}x{}",
            m_o.width(),
            m_o.height(),
            m_o.channels(),
            m_s.width(),
            m_s.height(),
            m_s.channels()
        )));
    }
    let sq: Vec<f64> = m_o
        .data()
        .iter()
        .zip(m_s.data())
        .map(|(a, b)| (a - b) * (a - b))
        .collect();
    Ok(deterministic_mean(&sq))
}

/// Deterministic stream of orbit cameras for silhouette supervision:
/// uniform yaw, elevation bounded away from the poles.
#[derive(Debug)]
pub struct ViewSampler {
    rng: SplitMix64,
    pub distance: f64,
    pub half_width: f64,
    pub half_height: f64,
    pub width: u32,
    pub height: u32,
    pub max_pitch: f64,
}

impl ViewSampler {
    pub fn new(seed: u64, width: u32, height: u32) -> Self {
        ViewSampler {
            rng: SplitMix64::new(seed),
            distance: DEFAULT_CAMERA_DISTANCE,
            // Full box cross-section, so the whole silhouette rim stays in
            // frame from every orbit angle.
            half_width: 2.0,
            half_height: 1.0,
            width,
            height,
            max_pitch: std::f64::consts::FRAC_PI_4,
        }
    }

    pub fn next_camera(&mut self) -> Result<OrthoCamera> {
        let yaw = self.rng.uniform(0.0, std::f64::consts::TAU);
        let pitch = self.rng.uniform(-self.max_pitch, self.max_pitch);
        OrthoCamera::orbit(
            yaw,
            pitch,
            self.distance,
            self.half_width,
            self.half_height,
            self.width,
            self.height,
        )
    }
}

/// Batch shapes and render controls for one geometry loss evaluation.
#[derive(Debug, Clone)]
pub struct GeoBatchParams {
    pub batch_surface: usize,
    pub batch_eik: usize,
    /// Standard deviation of the offsets pushing eikonal points off the
    /// surface.
    pub surface_sigma: f64,
    pub density: DensityParams,
    pub trace: TraceParams,
    pub march: MarchParams,
    pub render: RenderSettings,
}

impl Default for GeoBatchParams {
    fn default() -> Self {
        GeoBatchParams {
            batch_surface: 512,
            batch_eik: 1024,
            surface_sigma: 0.05,
            density: DensityParams::default(),
            trace: TraceParams::default(),
            march: MarchParams::default(),
            render: RenderSettings::default(),
        }
    }
}

/// Points where the unit-gradient property is enforced: half uniform in the
/// scene box, the rest scattered around the prior surface.
pub fn eikonal_batch(
    oracle: &PriorOracle,
    count: usize,
    sigma: f64,
    rng: &mut SplitMix64,
) -> Result<Vec<Vec3>> {
    if count == 0 {
        return Err(Error::EmptyBatch("eikonal batch needs at least one point"));
    }
    let n_box = count / 2;
    let mut points = Vec::with_capacity(count);
    for _ in 0..n_box {
        points.push(Vec3::new(
            rng.uniform(-1.0, 1.0),
            rng.uniform(-1.0, 1.0),
            rng.uniform(-1.0, 1.0),
        ));
    }
    if count > n_box {
        for p in sample_surface_points(oracle, count - n_box, rng)? {
            let offset = Vec3::new(rng.normal(), rng.normal(), rng.normal());
            points.push(p + offset * sigma);
        }
    }
    Ok(points)
}

/// One full geometry objective: a fresh orbit view supervises the
/// silhouette, fresh point batches supervise distances and gradient norms.
pub fn loss_geo<S: Sdf>(
    field: &S,
    oracle: &PriorOracle,
    views: &mut ViewSampler,
    weights: &GeoLossWeights,
    params: &GeoBatchParams,
    rng: &mut SplitMix64,
) -> Result<GeoLossTerms> {
    weights.validate()?;
    let camera = views.next_camera()?;
    let m_o = render_mask_occupancy(oracle.occupancy(), &camera, &params.march)?;
    let m_s = render_alpha_sdf(field, &params.density, &camera, &params.trace, &params.render)?;
    let mask = loss_mask(&m_o, &m_s)?;
    let surface = sample_surface_points(oracle, params.batch_surface, rng)?;
    let sdf = loss_surface_sdf(field, &surface)?;
    let eik_points = eikonal_batch(oracle, params.batch_eik, params.surface_sigma, rng)?;
    let eik = loss_eikonal(field, &eik_points)?;
    Ok(GeoLossTerms {
        mask,
        sdf,
        eik,
        total: weights.mask * mask + weights.sdf * sdf + weights.eik * eik,
    })
}

/// Frontal-view consistency: the blended render must reproduce the anchor
/// inside the silhouette, decoded surface colors must match the anchor
/// fetch, and the blend map is pulled toward one.
///
/// The image term averages over silhouette pixels; the color and blend terms
/// average over the silhouette pixels whose rays found a surface.
pub fn loss_front_consistency(
    scene: &Scene,
    settings: &RenderSettings,
    weights: &ConsistencyWeights,
) -> Result<FrontConsistency> {
    weights.validate()?;
    let anchor = scene
        .anchor
        .as_ref()
        .ok_or_else(|| Error::config("front consistency loss needs an anchor image in the scene"))?;
    let product = render_view(scene, &scene.frontal, settings)?;
    let (w, h) = (scene.frontal.width, scene.frontal.height);

    type Rows = Vec<(Vec<f64>, Vec<f64>, Vec<f64>)>;
    let rows: Result<Rows> = (0..h)
        .into_par_iter()
        .map(|row| {
            let mut ws = RenderScratch::default();
            let mut img = Vec::new();
            let mut rgb = Vec::new();
            let mut breg = Vec::new();
            for col in 0..w {
                if product.m_s.scalar(col, row)? <= 0.5 {
                    continue;
                }
                let u = (col as f64 + 0.5) / w as f64;
                let v = (row as f64 + 0.5) / h as f64;
                let target = anchor.bilinear_rgb(u, v);
                let got = product.i_v.pixel(col, row)?;
                for ch in 0..3 {
                    let d = got[ch] - target[ch];
                    img.push(d * d);
                }
                let ray = scene
                    .frontal
                    .camera_ray(col, row, settings.jitter.offset(col, row))?;
                let trace = sphere_trace(&scene.field, &ray, &scene.trace, &mut ws.field);
                if !trace.surface_like() {
                    continue;
                }
                let (c, b) = decode_point(scene, trace.x, &mut ws)?;
                let c_uv = fetch_anchor_color(anchor, trace.x, &scene.frontal);
                for ch in 0..3 {
                    let d = c[ch] - c_uv[ch];
                    rgb.push(d * d);
                }
                breg.push((1.0 - b) * (1.0 - b));
            }
            Ok((img, rgb, breg))
        })
        .collect();

    let mut img = Vec::new();
    let mut rgb = Vec::new();
    let mut breg = Vec::new();
    for (i, r, b) in rows? {
        img.extend(i);
        rgb.extend(r);
        breg.extend(b);
    }
    if img.is_empty() {
        return Err(Error::EmptyBatch(
            "front consistency found no silhouette pixels",
        ));
    }
    if rgb.is_empty() {
        return Err(Error::EmptyBatch("front consistency found no surface hits"));
    }
    let image = deterministic_mean(&img);
    let rgb = deterministic_mean(&rgb);
    let blend_reg = deterministic_mean(&breg);
    Ok(FrontConsistency {
        image,
        rgb,
        blend_reg,
        total: weights.front_image * image + weights.point_rgb * rgb + weights.blend_reg * blend_reg,
    })
}

/// Consistency of a random back-side view against the prior color: render
/// from behind and compare silhouette pixels whose rays cross the prior
/// surface with the prior color at the crossing. Returns the weighted term.
pub fn loss_back_consistency(
    scene: &Scene,
    settings: &RenderSettings,
    weights: &ConsistencyWeights,
    seed: u64,
) -> Result<f64> {
    weights.validate()?;
    if !scene.oracle.has_color() {
        return Err(Error::config(
            "back consistency loss needs a color prior on the scene oracle",
        ));
    }
    let mut rng = SplitMix64::new(seed);
    let yaw = std::f64::consts::PI + 0.4 * rng.normal();
    let max_pitch = std::f64::consts::FRAC_PI_4;
    let pitch = (0.4 * rng.normal()).clamp(-max_pitch, max_pitch);
    let camera = OrthoCamera::orbit(
        yaw,
        pitch,
        scene.frontal.center.length(),
        scene.frontal.half_width,
        scene.frontal.half_height,
        scene.frontal.width,
        scene.frontal.height,
    )?;
    let product = render_view(scene, &camera, settings)?;
    let rows: Result<Vec<Vec<f64>>> = (0..camera.height)
        .into_par_iter()
        .map(|row| {
            let mut sq = Vec::new();
            for col in 0..camera.width {
                if product.m_s.scalar(col, row)? <= 0.5 {
                    continue;
                }
                let ray = camera.camera_ray(col, row, settings.jitter.offset(col, row))?;
                let march = ray_march_occupancy(scene.oracle.occupancy(), &ray, &scene.march);
                if !march.hit {
                    continue;
                }
                let target = scene.oracle.color(ray.at(march.t))?;
                let got = product.i_v.pixel(col, row)?;
                for ch in 0..3 {
                    let d = got[ch] - target[ch];
                    sq.push(d * d);
                }
            }
            Ok(sq)
        })
        .collect();
    let sq: Vec<f64> = rows?.into_iter().flatten().collect();
    if sq.is_empty() {
        return Err(Error::EmptyBatch(
            "back consistency found no silhouette pixels over the prior",
        ));
    }
    Ok(weights.back_image * deterministic_mean(&sq))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::{OccupancyOracle, SdfShape};
    use crate::neural::{Activation, ColorFn, MlpWeights, TriPlane};
    use crate::renderer::constant_decoder;
    use approx::assert_relative_eq;
    use std::sync::Arc;

    fn sphere(radius: f64) -> SdfShape {
        SdfShape::Sphere {
            center: Vec3::ZERO,
            radius,
        }
    }

    fn sphere_oracle(radius: f64) -> PriorOracle {
        PriorOracle::new(
            OccupancyOracle::Hard {
                shape: Arc::new(sphere(radius)),
            },
            None,
        )
    }

    /// Field shifted by a constant, so the zero level set moves inward.
    struct Offset<S>(S, f64);

    impl<S: Sdf> Sdf for Offset<S> {
        fn eval(&self, x: Vec3, ws: &mut FieldScratch) -> f64 {
            self.0.eval(x, ws) + self.1
        }

        fn gradient(&self, x: Vec3, ws: &mut FieldScratch) -> Vec3 {
            self.0.gradient(x, ws)
        }
    }

    /// Field multiplied by a constant; gradient norm scales with it.
    struct Scaled<S>(S, f64);

    impl<S: Sdf> Sdf for Scaled<S> {
        fn eval(&self, x: Vec3, ws: &mut FieldScratch) -> f64 {
            self.0.eval(x, ws) * self.1
        }

        fn gradient(&self, x: Vec3, ws: &mut FieldScratch) -> Vec3 {
            self.0.gradient(x, ws) * self.1
        }
    }

    fn sphere_points(radius: f64, count: usize, seed: u64) -> Vec<Vec3> {
        let mut rng = SplitMix64::new(seed);
        (0..count)
            .map(|_| {
                let d = Vec3::new(rng.normal(), rng.normal(), rng.normal()).normalized();
                d * radius
            })
            .collect()
    }

    fn compact_neural(seed: u64) -> NeuralSdf {
        let oracle = Arc::new(
            PriorOracle::with_dims(
                OccupancyOracle::Hard {
                    shape: Arc::new(sphere(0.6)),
                },
                None,
                2,
                13,
            )
            .unwrap(),
        );
        let net = MlpWeights::seeded_xavier(
            &[16, 12, 8, 1],
            &[
                Activation::Softplus100,
                Activation::Softplus100,
                Activation::None,
            ],
            seed,
        )
        .unwrap();
        NeuralSdf::new(Arc::new(net), oracle).unwrap()
    }

    #[test]
    fn surface_loss_vanishes_on_the_level_set() {
        let pts = sphere_points(0.7, 64, 3);
        // Normalizing the sample directions leaves distances at rounding
        // scale, squared below 1e-30.
        assert!(loss_surface_sdf(&sphere(0.7), &pts).unwrap() < 1e-30);
        // Shifting the field by 0.1 leaves every point at distance 0.1.
        let shifted = Offset(sphere(0.7), 0.1);
        assert_relative_eq!(
            loss_surface_sdf(&shifted, &pts).unwrap(),
            0.01,
            epsilon = 1e-15
        );
    }

    #[test]
    fn losses_match_brute_force_on_a_neural_field() {
        let field = compact_neural(21);
        let mut rng = SplitMix64::new(4);
        let pts: Vec<Vec3> = (0..37)
            .map(|_| {
                Vec3::new(
                    rng.uniform(-1.0, 1.0),
                    rng.uniform(-1.0, 1.0),
                    rng.uniform(-1.0, 1.0),
                )
            })
            .collect();
        let mut ws = FieldScratch::default();
        let sdf_naive: f64 = pts.iter().map(|&p| field.eval(p, &mut ws).powi(2)).sum::<f64>()
            / pts.len() as f64;
        let eik_naive: f64 = pts
            .iter()
            .map(|&p| {
                let r = field.eval_with_grad(p, &mut ws).1.length() - 1.0;
                r * r
            })
            .sum::<f64>()
            / pts.len() as f64;
        assert_relative_eq!(
            loss_surface_sdf(&field, &pts).unwrap(),
            sdf_naive,
            epsilon = 1e-12
        );
        assert_relative_eq!(loss_eikonal(&field, &pts).unwrap(), eik_naive, epsilon = 1e-12);

        // The gradient-accumulating variants return the same values.
        let mut grads = MlpGrads::zeros_like(&field.net);
        assert_eq!(
            loss_surface_sdf_with_grads(&field, &pts, &mut ws, &mut grads).unwrap(),
            loss_surface_sdf(&field, &pts).unwrap()
        );
        assert_eq!(
            loss_eikonal_with_grads(&field, &pts, &mut ws, &mut grads).unwrap(),
            loss_eikonal(&field, &pts).unwrap()
        );
    }

    #[test]
    fn empty_batches_are_rejected() {
        let field = sphere(1.0);
        assert!(loss_surface_sdf(&field, &[]).is_err());
        assert!(loss_eikonal(&field, &[]).is_err());
        let mut rng = SplitMix64::new(1);
        assert!(eikonal_batch(&sphere_oracle(0.6), 0, 0.05, &mut rng).is_err());
    }

    #[test]
    fn eikonal_loss_distinguishes_unit_from_scaled_gradients() {
        let mut rng = SplitMix64::new(9);
        let pts: Vec<Vec3> = (0..50)
            .map(|_| {
                Vec3::new(
                    rng.uniform(-1.0, 1.0),
                    rng.uniform(-1.0, 1.0),
                    rng.uniform(-1.0, 1.0),
                )
            })
            .collect();
        assert!(loss_eikonal(&sphere(0.5), &pts).unwrap() < 1e-12);
        assert_relative_eq!(
            loss_eikonal(&Scaled(sphere(0.5), 2.0), &pts).unwrap(),
            1.0,
            epsilon = 1e-12
        );
    }

    #[test]
    fn loss_gradients_match_finite_differences() {
        let field = compact_neural(33);
        let mut rng = SplitMix64::new(8);
        let pts: Vec<Vec3> = (0..24)
            .map(|_| {
                Vec3::new(
                    rng.uniform(-0.8, 0.8),
                    rng.uniform(-0.8, 0.8),
                    rng.uniform(-0.8, 0.8),
                )
            })
            .collect();
        let weights = GeoLossWeights {
            mask: 0.0,
            sdf: 1.0,
            eik: 0.1,
        };

        let combined = |net: &NeuralSdf| -> f64 {
            let mut ws = FieldScratch::default();
            let mut sink = MlpGrads::zeros_like(&net.net);
            let s = loss_surface_sdf_with_grads(net, &pts, &mut ws, &mut sink).unwrap();
            let e = loss_eikonal_with_grads(net, &pts, &mut ws, &mut sink).unwrap();
            weights.sdf * s + weights.eik * e
        };

        let mut ws = FieldScratch::default();
        let mut term = MlpGrads::zeros_like(&field.net);
        let mut grads = MlpGrads::zeros_like(&field.net);
        loss_surface_sdf_with_grads(&field, &pts, &mut ws, &mut term).unwrap();
        grads.add_scaled(weights.sdf, &term);
        term.clear();
        loss_eikonal_with_grads(&field, &pts, &mut ws, &mut term).unwrap();
        grads.add_scaled(weights.eik, &term);

        // Rank parameters by analytic gradient magnitude and check the top
        // entries against central differences.
        let mut ranked: Vec<(usize, bool, usize, f64)> = Vec::new();
        for (l, (gw, gb)) in grads.w.iter().zip(&grads.b).enumerate() {
            for (i, &g) in gw.iter().enumerate() {
                ranked.push((l, false, i, g));
            }
            for (i, &g) in gb.iter().enumerate() {
                ranked.push((l, true, i, g));
            }
        }
        ranked.sort_by(|a, b| b.3.abs().total_cmp(&a.3.abs()));

        let h = 1e-5;
        for &(l, is_bias, i, an) in ranked.iter().take(20) {
            let mut probe = |delta: f64| -> f64 {
                let mut w = (*field.net).clone();
                let layer = &mut w.layers_mut()[l];
                if is_bias {
                    layer.b[i] += delta;
                } else {
                    layer.w[i] += delta;
                }
                let net = NeuralSdf::new(Arc::new(w), field.oracle.clone()).unwrap();
                combined(&net)
            };
            let fd = (probe(h) - probe(-h)) / (2.0 * h);
            let denom = fd.abs().max(an.abs());
            if denom < 1e-6 {
                continue;
            }
            assert!(
                ((fd - an) / denom).abs() < 1e-4,
                "layer {l} {} {i}: analytic {an} vs fd {fd}",
                if is_bias { "bias" } else { "weight" }
            );
        }
    }

    #[test]
    fn mask_loss_basics() {
        let zeros = ImageBuffer::new(8, 4, 1).unwrap();
        let mut ones = ImageBuffer::new(8, 4, 1).unwrap();
        ones.data_mut().fill(1.0);
        assert_eq!(loss_mask(&zeros, &zeros).unwrap(), 0.0);
        assert_relative_eq!(loss_mask(&ones, &zeros).unwrap(), 1.0);
        let narrow = ImageBuffer::new(4, 4, 1).unwrap();
        assert!(loss_mask(&zeros, &narrow).is_err());
        let rgb = ImageBuffer::new(8, 4, 3).unwrap();
        assert!(loss_mask(&zeros, &rgb).is_err());
    }

    #[test]
    fn view_sampler_is_deterministic_and_bounded() {
        let mut a = ViewSampler::new(5, 64, 32);
        let mut b = ViewSampler::new(5, 64, 32);
        for _ in 0..16 {
            let ca = a.next_camera().unwrap();
            let cb = b.next_camera().unwrap();
            assert_eq!(ca.center, cb.center);
            assert_eq!(ca.right, cb.right);
            // Elevation stays under the pitch bound.
            let sin_pitch = ca.center.y / ca.center.length();
            assert!(sin_pitch.abs() <= a.max_pitch.sin() + 1e-12);
        }
    }

    #[test]
    fn eikonal_batch_mixes_box_and_near_surface_points() {
        let oracle = sphere_oracle(0.6);
        let mut rng = SplitMix64::new(77);
        let pts = eikonal_batch(&oracle, 64, 0.05, &mut rng).unwrap();
        assert_eq!(pts.len(), 64);
        for p in &pts[..32] {
            assert!(p.x.abs() <= 1.0 && p.y.abs() <= 1.0 && p.z.abs() <= 1.0);
        }
        for p in &pts[32..] {
            // Surface point plus normal noise: within a few sigma of the
            // sphere.
            assert!((p.length() - 0.6).abs() < 0.05 * 6.0, "far point {p:?}");
        }
    }

    #[test]
    fn geo_loss_terms_recombine_with_weights() {
        let field = sphere(0.6);
        let oracle = sphere_oracle(0.6);
        let params = GeoBatchParams {
            batch_surface: 32,
            batch_eik: 64,
            ..GeoBatchParams::default()
        };
        let run = |weights: &GeoLossWeights| {
            let mut views = ViewSampler::new(11, 32, 16);
            let mut rng = SplitMix64::new(7);
            loss_geo(&field, &oracle, &mut views, weights, &params, &mut rng).unwrap()
        };
        let a = run(&GeoLossWeights::default());
        let w = GeoLossWeights {
            mask: 0.3,
            sdf: 2.0,
            eik: 5.0,
        };
        let b = run(&w);
        // Identical seeds reproduce the terms bit for bit.
        assert_eq!(a.mask, b.mask);
        assert_eq!(a.sdf, b.sdf);
        assert_eq!(a.eik, b.eik);
        assert_relative_eq!(
            b.total,
            w.mask * b.mask + w.sdf * b.sdf + w.eik * b.eik,
            epsilon = 1e-12
        );

        let zero = run(&GeoLossWeights {
            mask: 0.0,
            sdf: 0.0,
            eik: 0.0,
        });
        assert_eq!(zero.total, 0.0);
    }

    #[test]
    fn geo_loss_fixed_point_is_tiny() {
        // An exact distance field of the prior shape: the silhouette term is
        // limited only by opacity saturation, the distance and gradient
        // terms by floating point.
        let field = sphere(0.8);
        let oracle = sphere_oracle(0.8);
        let params = GeoBatchParams {
            batch_surface: 128,
            batch_eik: 128,
            density: DensityParams::new(1e-3).unwrap(),
            trace: TraceParams {
                max_steps: 4096,
                eps: 1e-6,
                ..TraceParams::default()
            },
            march: MarchParams {
                step: 2e-3,
                ..MarchParams::default()
            },
            render: RenderSettings {
                interval_scale: 6.0,
                ..RenderSettings::default()
            },
            ..GeoBatchParams::default()
        };
        let mut views = ViewSampler::new(2, 128, 64);
        let mut rng = SplitMix64::new(3);
        let terms = loss_geo(
            &field,
            &oracle,
            &mut views,
            &GeoLossWeights::default(),
            &params,
            &mut rng,
        )
        .unwrap();
        assert!(terms.sdf < 1e-20, "sdf {}", terms.sdf);
        assert!(terms.eik < 1e-20, "eik {}", terms.eik);
        assert!(terms.mask < 1e-4, "mask {}", terms.mask);
        assert!(terms.total < 1e-4, "total {}", terms.total);
    }

    fn front_scene(anchor: Option<ImageBuffer>, logits: [f64; 4]) -> Scene {
        let triplane = Arc::new(TriPlane::constant(8, 4, 0.0).unwrap());
        let oracle = Arc::new(sphere_oracle(0.8));
        let in_dim = triplane.channels() + oracle.feature_dim();
        Scene {
            field: crate::fields::SdfField::Analytic(sphere(0.8)),
            density: DensityParams::new(1e-3).unwrap(),
            triplane,
            decoder: Arc::new(constant_decoder(in_dim, logits)),
            oracle,
            anchor: anchor.map(Arc::new),
            frontal: OrthoCamera::frontal(2.0, 1.0, 0.5, 128, 64).unwrap(),
            trace: TraceParams {
                max_steps: 256,
                eps: 1e-6,
                ..TraceParams::default()
            },
            march: MarchParams::default(),
        }
    }

    fn smooth_anchor(width: u32, height: u32) -> ImageBuffer {
        let mut img = ImageBuffer::new(width, height, 3).unwrap();
        for row in 0..height {
            for col in 0..width {
                let u = col as f64 / (width - 1) as f64;
                let v = row as f64 / (height - 1) as f64;
                let px = img.pixel_mut(col, row).unwrap();
                px[0] = 0.2 + 0.6 * u;
                px[1] = 0.3 + 0.4 * v;
                px[2] = 0.5 + 0.3 * (u * std::f64::consts::PI).sin();
            }
        }
        img
    }

    #[test]
    fn front_consistency_passthrough_reproduces_the_anchor() {
        // Blend weight one everywhere: the point blend replaces the decoded
        // color with the anchor fetch, and the image blend replaces the raw
        // render with the warp, so the anchor error enters squared through
        // the tiny transmitted fraction.
        let scene = front_scene(Some(smooth_anchor(256, 128)), [0.0, 0.0, 0.0, 40.0]);
        let settings = RenderSettings {
            interval_scale: 6.0,
            ..RenderSettings::default()
        };
        let terms =
            loss_front_consistency(&scene, &settings, &ConsistencyWeights::default()).unwrap();
        assert!(terms.image < 1e-6, "image {}", terms.image);
        assert_eq!(terms.blend_reg, 0.0);
        assert_relative_eq!(
            terms.total,
            terms.image + 8.0 * terms.rgb,
            epsilon = 1e-12
        );
    }

    #[test]
    fn front_consistency_blend_extremes() {
        // Blend weight zero: the regularizer sits exactly at one.
        let scene = front_scene(Some(smooth_anchor(64, 32)), [0.0, 0.0, 0.0, -40.0]);
        let settings = RenderSettings::default();
        let terms =
            loss_front_consistency(&scene, &settings, &ConsistencyWeights::default()).unwrap();
        assert_relative_eq!(terms.blend_reg, 1.0, epsilon = 1e-12);

        // Decoded color equal to a constant anchor: no color residual.
        let flat = ImageBuffer::filled(64, 32, [0.5, 0.5, 0.5]).unwrap();
        let scene = front_scene(Some(flat), [0.0, 0.0, 0.0, 0.0]);
        let terms =
            loss_front_consistency(&scene, &settings, &ConsistencyWeights::default()).unwrap();
        assert!(terms.rgb < 1e-12, "rgb {}", terms.rgb);
    }

    #[test]
    fn front_consistency_rejects_missing_anchor_and_empty_silhouette() {
        let scene = front_scene(None, [0.0; 4]);
        let settings = RenderSettings::default();
        assert!(loss_front_consistency(&scene, &settings, &ConsistencyWeights::default()).is_err());

        // A shape outside the frustum leaves no silhouette pixels.
        let mut scene = front_scene(Some(smooth_anchor(16, 8)), [0.0; 4]);
        scene.field = crate::fields::SdfField::Analytic(SdfShape::Sphere {
            center: Vec3::new(3.0, 0.0, 0.0),
            radius: 0.1,
        });
        match loss_front_consistency(&scene, &settings, &ConsistencyWeights::default()) {
            Err(Error::EmptyBatch(_)) => {}
            other => panic!("expected empty batch, got {other:?}"),
        }
    }

    fn back_scene(logits: [f64; 4], color: ColorFn, background: [f64; 3]) -> (Scene, RenderSettings) {
        let mut scene = front_scene(None, logits);
        scene.oracle = Arc::new(sphere_oracle(0.8).with_color(color));
        let settings = RenderSettings {
            interval_scale: 6.0,
            background,
            ..RenderSettings::default()
        };
        (scene, settings)
    }

    #[test]
    fn back_consistency_fixed_point_and_contrast() {
        // White scene on white background against a white prior: zero.
        let (scene, settings) = back_scene(
            [40.0, 40.0, 40.0, 0.0],
            ColorFn::Constant([1.0, 1.0, 1.0]),
            [1.0, 1.0, 1.0],
        );
        let w = ConsistencyWeights::default();
        let loss = loss_back_consistency(&scene, &settings, &w, 12).unwrap();
        assert!(loss < 1e-12, "white fixed point {loss}");

        // Black render against a white prior: every channel differs by one,
        // so the term is exactly the weight.
        let (scene, settings) = back_scene(
            [-40.0, -40.0, -40.0, 0.0],
            ColorFn::Constant([1.0, 1.0, 1.0]),
            [0.0, 0.0, 0.0],
        );
        let loss = loss_back_consistency(&scene, &settings, &w, 12).unwrap();
        assert_relative_eq!(loss, w.back_image, epsilon = 1e-9);

        // Same seed, same value.
        assert_eq!(
            loss,
            loss_back_consistency(&scene, &settings, &w, 12).unwrap()
        );
    }

    #[test]
    fn back_consistency_requires_color_prior() {
        let scene = front_scene(None, [0.0; 4]);
        let settings = RenderSettings::default();
        match loss_back_consistency(&scene, &settings, &ConsistencyWeights::default(), 1) {
            Err(Error::Config(_)) => {}
            other => panic!("expected config error, got {other:?}"),
        }
    }
}
