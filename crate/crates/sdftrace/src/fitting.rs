//! Distilling an occupancy prior into a neural signed distance field with
//! Adam, plus the surface sampler shared with the loss batches.

use std::sync::Arc;
use std::time::Instant;

use serde::Serialize;

use crate::core::{deterministic_mean, ImageBuffer, OrthoCamera, SplitMix64, Vec3};
use crate::error::{Error, Result};
use crate::fields::{
    sdf_to_density, sdf_to_density_ds, DensityParams, FieldScratch, NeuralSdf,
};
use crate::losses::{
    eikonal_batch, loss_eikonal_with_grads, loss_surface_sdf_with_grads, GeoLossTerms,
    GeoLossWeights, ViewSampler,
};
use crate::neural::{sigmoid, MlpGrads, PriorOracle};
use crate::renderer::{render_alpha_sdf, render_mask_occupancy, RenderSettings};
use crate::tracer::{sphere_trace, sphere_trace_observed, MarchParams, TraceParams};

/// Points on the prior surface, found by shooting random rays through the
/// scene box and bisecting the first crossing of occupancy one half. Rays
/// that miss are redrawn; a budget of two hundred rays per requested point
/// (plus slack) bounds the search on sparse priors.
pub fn sample_surface_points(
    oracle: &PriorOracle,
    count: usize,
    rng: &mut SplitMix64,
) -> Result<Vec<Vec3>> {
    const STEP: f64 = 0.02;
    const RANGE: usize = 200;
    let occ = oracle.occupancy();
    let mut points = Vec::with_capacity(count);
    let max_attempts = 200 * count + 10_000;
    let mut attempts = 0;
    while points.len() < count {
        attempts += 1;
        if attempts > max_attempts {
            return Err(Error::EmptyBatch(
                "surface sampling found no occupancy crossings",
            ));
        }
        let dir = loop {
            let d = Vec3::new(rng.normal(), rng.normal(), rng.normal());
            if d.length() > 1e-6 {
                break d.normalized();
            }
        };
        let anchor = Vec3::new(
            rng.uniform(-1.0, 1.0),
            rng.uniform(-1.0, 1.0),
            rng.uniform(-1.0, 1.0),
        );
        let origin = anchor - dir * 2.0;

        // Coarse walk to bracket the first flip of the occupancy indicator.
        let mut bracket = None;
        let mut prev_t = 0.0;
        let mut prev_in = occ.eval(origin) >= 0.5;
        for k in 1..=RANGE {
            let t = k as f64 * STEP;
            let inside = occ.eval(origin + dir * t) >= 0.5;
            if inside != prev_in {
                bracket = Some((prev_t, t));
                break;
            }
            prev_t = t;
            prev_in = inside;
        }
        let Some((mut lo, mut hi)) = bracket else {
            continue;
        };
        let lo_in = occ.eval(origin + dir * lo) >= 0.5;
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            let o = occ.eval(origin + dir * mid);
            // Continuous oracles can land on the level set early; the hard
            // indicator never does and bisects to the bracket's full depth.
            if (o - 0.5).abs() < 1e-4 {
                lo = mid;
                hi = mid;
                break;
            }
            if (o >= 0.5) == lo_in {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        points.push(origin + dir * (0.5 * (lo + hi)));
    }
    Ok(points)
}

/// Intersection over union of two masks thresholded at `threshold`.
pub fn mask_iou(a: &ImageBuffer, b: &ImageBuffer, threshold: f64) -> Result<f64> {
    if a.width() != b.width()
        || a.height() != b.height()
        || a.channels() != 1
        || b.channels() != 1
    {
        return Err(Error::shape(format!(
            "mask IoU needs matching scalar images, got {}x{}x{} and {}x{}x{}",
            a.width(),
            a.height(),
            a.channels(),
            b.width(),
            b.height(),
            b.channels()
        )));
    }
    let mut inter = 0u64;
    let mut union = 0u64;
    for (x, y) in a.data().iter().zip(b.data()) {
        let ia = *x > threshold;
        let ib = *y > threshold;
        inter += (ia && ib) as u64;
        union += (ia || ib) as u64;
    }
    Ok(if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    })
}

/// Optimization controls for distilling an occupancy prior into a field.
#[derive(Debug, Clone)]
pub struct FitConfig {
    pub steps: usize,
    pub batch_surface: usize,
    pub batch_eik: usize,
    /// Standard deviation of the offsets pushing eikonal points off the
    /// surface.
    pub surface_sigma: f64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    /// Resolution of the per-step silhouette supervision.
    pub mask_width: u32,
    pub mask_height: u32,
    /// Resolution of the held-out silhouette comparison. Rays cost a full
    /// sphere trace each, so small fits should shrink this too.
    pub eval_width: u32,
    pub eval_height: u32,
    /// Warm-start steps regressing the field onto the prior's best-fit
    /// sphere before the main objective runs. The silhouette term needs
    /// traces that already land near the prior: on a rough field they stall
    /// at phantom crossings and the gradient digs those in deeper.
    pub warmup_steps: usize,
    /// Exponential learning-rate decay floor for the main loop, as a
    /// fraction of `lr`. Every step silhouettes a fresh view, and the rim
    /// pixels it disagrees on jitter the surface by an amount proportional
    /// to the step size; decaying toward a small floor lets the distance
    /// and eikonal terms polish what the silhouette noise would otherwise
    /// keep shaking.
    pub lr_floor: f64,
    pub weights: GeoLossWeights,
    /// Density sharpness at step zero; it is learned in log space.
    pub alpha_init: f64,
    pub seed: u64,
    /// Trace controls for the per-step silhouette renders. The step budget
    /// is generous compared to the display default: rays grazing the
    /// silhouette rim creep by tiny safe steps near closest approach, and
    /// a budget-exhausted graze is shaded surface-like with alpha near one
    /// half, handing an outside-the-mask pixel a large wrong-signed
    /// gradient. With enough steps those rays walk past the rim and escape
    /// to an exact zero.
    pub trace: TraceParams,
    pub march: MarchParams,
    pub n_samples: usize,
    /// Interval half-width in units of alpha. Wider than the render default:
    /// a window centered on the crossing integrates to half its saturated
    /// optical depth, and at 3 the resulting alpha of 0.95 leaves the
    /// silhouette term forever pushing hit pixels toward 1, inflating the
    /// surface one mask pixel outward. At 6 the deficit is e^-6 and the
    /// pressure vanishes.
    pub interval_scale: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            steps: 2000,
            batch_surface: 512,
            batch_eik: 1024,
            surface_sigma: 0.05,
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            mask_width: 128,
            mask_height: 64,
            eval_width: 512,
            eval_height: 256,
            warmup_steps: 300,
            lr_floor: 0.01,
            weights: GeoLossWeights::default(),
            alpha_init: 0.1,
            seed: 0,
            trace: TraceParams {
                max_steps: 48,
                ..TraceParams::default()
            },
            march: MarchParams::default(),
            n_samples: 6,
            interval_scale: 6.0,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::config("fit needs at least one step"));
        }
        if self.batch_surface == 0 || self.batch_eik == 0 {
            return Err(Error::config("fit batches must be nonempty"));
        }
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return Err(Error::config(format!(
                "learning rate must be positive, got {}",
                self.lr
            )));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::config(format!(
                    "{name} must lie in [0, 1), got {b}"
                )));
            }
        }
        if !(self.adam_eps > 0.0) {
            return Err(Error::config("adam epsilon must be positive"));
        }
        if self.mask_width == 0 || self.mask_height == 0 {
            return Err(Error::config("mask resolution must be positive"));
        }
        if !(self.lr_floor > 0.0 && self.lr_floor <= 1.0) {
            return Err(Error::config(format!(
                "lr floor must lie in (0, 1], got {}",
                self.lr_floor
            )));
        }
        if self.eval_width == 0 || self.eval_height == 0 {
            return Err(Error::config("evaluation resolution must be positive"));
        }
        if !(self.alpha_init > 0.0) || !self.alpha_init.is_finite() {
            return Err(Error::config(format!(
                "initial alpha must be positive and finite, got {}",
                self.alpha_init
            )));
        }
        if self.n_samples < 2 {
            return Err(Error::config("interval needs at least 2 samples"));
        }
        if !(self.interval_scale > 0.0) {
            return Err(Error::config("interval scale must be positive"));
        }
        if !(self.surface_sigma >= 0.0) {
            return Err(Error::config("surface sigma must be nonnegative"));
        }
        self.weights.validate()?;
        self.trace.validate()?;
        self.march.validate()
    }
}

/// Loss terms with parameter gradients for one optimization step.
#[derive(Debug)]
pub struct StepEval {
    pub terms: GeoLossTerms,
    pub grads: MlpGrads,
    /// Gradient of the total with respect to ln(alpha).
    pub alpha_grad: f64,
}

/// Evaluates the geometry objective and its gradients at fixed batches.
///
/// The silhouette term treats the traced interval as fixed geometry: per
/// sample, density responds to the field value and to alpha (whose change
/// also rescales the sample spacing), but the hit parameter and sample
/// positions are not differentiated through.
///
/// Escaped rays contribute their mask error with zero opacity, matching
/// the renderer. Their gradient is a straight-through estimate over a
/// window at the ray's closest approach to the surface: the loss value is
/// flat in the escaped regime, and without that pull a surface that slips
/// inside its silhouette by more than the hit tolerance can never be
/// pulled back out, only pushed further in by grazing phantom hits.
pub fn geo_step_eval(
    net: &NeuralSdf,
    log_alpha: f64,
    camera: &OrthoCamera,
    m_o: &ImageBuffer,
    surface: &[Vec3],
    eik: &[Vec3],
    weights: &GeoLossWeights,
    cfg: &FitConfig,
) -> Result<StepEval> {
    let alpha = log_alpha.exp();
    let density = DensityParams::new(alpha)?;
    if m_o.width() != camera.width || m_o.height() != camera.height || m_o.channels() != 1 {
        return Err(Error::shape(format!(
            "occupancy mask {}x{}x{} does not match camera {}x{}",
            m_o.width(),
            m_o.height(),
            m_o.channels(),
            camera.width,
            camera.height
        )));
    }

    let mut ws = FieldScratch::default();
    let mut grads = MlpGrads::zeros_like(&net.net);
    let mut term = MlpGrads::zeros_like(&net.net);
    let sdf = loss_surface_sdf_with_grads(net, surface, &mut ws, &mut term)?;
    grads.add_scaled(weights.sdf, &term);
    term.clear();
    let eik_term = loss_eikonal_with_grads(net, eik, &mut ws, &mut term)?;
    grads.add_scaled(weights.eik, &term);

    // Silhouette term, serial in row-major order so accumulation into the
    // shared gradient buffer is deterministic.
    let n = cfg.n_samples;
    let hw = cfg.interval_scale * alpha;
    let delta = 2.0 * hw / n as f64;
    let n_pix = camera.width as usize * camera.height as usize;
    let mut sq = Vec::with_capacity(n_pix);
    let mut s_buf = vec![0.0; n];
    let mut alpha_grad = 0.0;
    for row in 0..camera.height {
        for col in 0..camera.width {
            let target = m_o.scalar(col, row)?;
            let ray = camera.camera_ray(col, row, (0.5, 0.5))?;
            let mut min_s = f64::INFINITY;
            let mut min_t = 0.0;
            let trace = sphere_trace_observed(net, &ray, &cfg.trace, &mut ws, |smp| {
                if smp.s < min_s {
                    min_s = smp.s;
                    min_t = smp.t;
                }
            });
            let surface_like = trace.surface_like();
            // Only escaped rays that should have hit need the pull, and
            // only if they pass close enough for the window to see any
            // density. An escaped ray outside the silhouette already has
            // exactly the opacity its pixel asks for.
            if !surface_like && (target < 0.5 || min_s >= hw) {
                sq.push(target * target);
                continue;
            }
            let t_center = if surface_like { trace.t } else { min_t };
            let t0 = t_center - hw;
            let mut optical = 0.0;
            for (i, s) in s_buf.iter_mut().enumerate() {
                *s = net.eval(ray.at(t0 + (i as f64 + 0.5) * delta), &mut ws);
                optical += sdf_to_density(*s, &density) * delta;
            }
            let a = 1.0 - (-optical).exp();
            sq.push(if surface_like {
                (a - target) * (a - target)
            } else {
                target * target
            });
            // d(loss)/d(tau_i) through A = 1 - exp(-sum tau).
            let cot_tau = 2.0 * (a - target) * weights.mask / n_pix as f64 * (1.0 - a);
            for i in 0..n {
                let s = s_buf[i];
                // Second forward restores this sample's tape for backward.
                net.eval(ray.at(t0 + (i as f64 + 0.5) * delta), &mut ws);
                net.backward_value(&mut ws, cot_tau * delta * sdf_to_density_ds(s, &density), &mut grads);
                let g = sigmoid(-s / alpha);
                alpha_grad += cot_tau * delta * s * g * (1.0 - g) / (alpha * alpha);
            }
        }
    }
    let mask = deterministic_mean(&sq);
    let total = weights.mask * mask + weights.sdf * sdf + weights.eik * eik_term;
    Ok(StepEval {
        terms: GeoLossTerms {
            mask,
            sdf,
            eik: eik_term,
            total,
        },
        grads,
        alpha_grad,
    })
}

/// Per-step loss history and held-out quality of a finished fit.
#[derive(Debug, Clone, Serialize)]
pub struct FitReport {
    pub history: Vec<GeoLossTerms>,
    pub final_alpha: f64,
    /// Mean |s| over held-out prior surface points.
    pub held_out_mean_abs_s: f64,
    /// Mean | |grad s| - 1 | over a held-out eikonal batch.
    pub held_out_mean_eik_dev: f64,
    /// Silhouette IoU against the prior at the frontal evaluation view.
    pub final_iou: f64,
    pub wall_seconds: f64,
}

struct AdamState {
    m: MlpGrads,
    v: MlpGrads,
    m_alpha: f64,
    v_alpha: f64,
    t: i32,
}

impl AdamState {
    fn new(net: &crate::neural::MlpWeights) -> Self {
        AdamState {
            m: MlpGrads::zeros_like(net),
            v: MlpGrads::zeros_like(net),
            m_alpha: 0.0,
            v_alpha: 0.0,
            t: 0,
        }
    }

    fn prepared(&mut self, cfg: &FitConfig) -> (f64, f64) {
        self.t += 1;
        let bc1 = 1.0 - cfg.beta1.powi(self.t);
        let bc2 = 1.0 - cfg.beta2.powi(self.t);
        (bc1, bc2)
    }
}

struct TailAverage {
    sums: MlpGrads,
    log_alpha: f64,
    count: usize,
}

impl TailAverage {
    fn new(net: &crate::neural::MlpWeights) -> Self {
        TailAverage {
            sums: MlpGrads::zeros_like(net),
            log_alpha: 0.0,
            count: 0,
        }
    }

    fn accumulate(&mut self, net: &crate::neural::MlpWeights, log_alpha: f64) {
        for (l, layer) in net.layers().iter().enumerate() {
            for (acc, w) in self.sums.w[l].iter_mut().zip(&layer.w) {
                *acc += w;
            }
            for (acc, b) in self.sums.b[l].iter_mut().zip(&layer.b) {
                *acc += b;
            }
        }
        self.log_alpha += log_alpha;
        self.count += 1;
    }

    /// Replaces `params` with the accumulated mean and returns the mean
    /// log alpha.
    fn write_back(&self, params: &mut crate::neural::MlpWeights) -> f64 {
        let k = self.count as f64;
        for (l, layer) in params.layers_mut().iter_mut().enumerate() {
            for (w, acc) in layer.w.iter_mut().zip(&self.sums.w[l]) {
                *w = acc / k;
            }
            for (b, acc) in layer.b.iter_mut().zip(&self.sums.b[l]) {
                *b = acc / k;
            }
        }
        self.log_alpha / k
    }
}

fn adam_scalar(m: &mut f64, v: &mut f64, g: f64, bc: (f64, f64), lr: f64, cfg: &FitConfig) -> f64 {
    *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
    *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
    lr * (*m / bc.0) / ((*v / bc.1).sqrt() + cfg.adam_eps)
}

fn adam_update(
    params: &mut crate::neural::MlpWeights,
    adam: &mut AdamState,
    grads: &MlpGrads,
    bc: (f64, f64),
    lr: f64,
    cfg: &FitConfig,
) {
    for (l, layer) in params.layers_mut().iter_mut().enumerate() {
        for (w, (m, (v, g))) in layer.w.iter_mut().zip(
            adam.m.w[l]
                .iter_mut()
                .zip(adam.v.w[l].iter_mut().zip(&grads.w[l])),
        ) {
            *w -= adam_scalar(m, v, *g, bc, lr, cfg);
        }
        for (b, (m, (v, g))) in layer.b.iter_mut().zip(
            adam.m.b[l]
                .iter_mut()
                .zip(adam.v.b[l].iter_mut().zip(&grads.b[l])),
        ) {
            *b -= adam_scalar(m, v, *g, bc, lr, cfg);
        }
    }
}

const HELD_OUT_SALT: u64 = 0x9e37_79b9_7f4a_7c15;

/// Fits the standard field network to the prior's occupancy by stochastic
/// gradient descent on the geometry objective: per step, a fresh orbit view
/// supervises the silhouette and fresh point batches supervise distances
/// and gradient norms. Alpha is learned jointly in log space.
pub fn fit_sdf(
    oracle: Arc<PriorOracle>,
    cfg: &FitConfig,
) -> Result<(NeuralSdf, DensityParams, FitReport)> {
    cfg.validate()?;
    let start = Instant::now();
    let mut rng = SplitMix64::new(cfg.seed);
    let mut net = NeuralSdf::seeded(oracle.clone(), rng.next_u64())?;

    // Warm start: regress the field onto the prior's best-fit sphere over
    // volume points. The seeded net only approximates that sphere; the
    // remaining wobble is enough for silhouette traces to stall at phantom
    // crossings, and the mask gradient entrenches whatever the trace finds.
    if cfg.warmup_steps > 0 {
        let radius = crate::fields::prior_mean_radius(&oracle);
        let mut wrng = SplitMix64::new(rng.next_u64());
        let mut adam = AdamState::new(&net.net);
        let mut ws = FieldScratch::default();
        let mut grads = MlpGrads::zeros_like(&net.net);
        const BATCH: usize = 512;
        // Fixed lr leaves the regression bouncing on an Adam noise floor an
        // order of magnitude above what the silhouette term tolerates, so
        // the rate decays to a few percent of the configured one.
        const LR_FLOOR: f64 = 0.03;
        for step in 0..cfg.warmup_steps {
            grads.clear();
            let mut mse = 0.0;
            for i in 0..BATCH {
                // Half box-uniform, half radius-uniform so the deep
                // interior and the shell outside the box both get signed
                // supervision.
                let p = if i % 2 == 0 {
                    Vec3::new(
                        wrng.uniform(-1.0, 1.0),
                        wrng.uniform(-1.0, 1.0),
                        wrng.uniform(-1.0, 1.0),
                    )
                } else {
                    let dir = loop {
                        let d = Vec3::new(wrng.normal(), wrng.normal(), wrng.normal());
                        if d.length() > 1e-6 {
                            break d.normalized();
                        }
                    };
                    dir * wrng.uniform(0.0, 2.1)
                };
                let s = net.eval(p, &mut ws);
                let resid = s - (p.length() - radius);
                mse += resid * resid / BATCH as f64;
                net.backward_value(&mut ws, 2.0 * resid / BATCH as f64, &mut grads);
            }
            if !mse.is_finite() {
                return Err(Error::NonFiniteLoss {
                    step,
                    breakdown: format!("warmup sphere regression mse {mse}"),
                });
            }
            let bc = adam.prepared(cfg);
            let frac = step as f64 / cfg.warmup_steps as f64;
            let lr = cfg.lr * LR_FLOOR.powf(frac);
            let params =
                Arc::get_mut(&mut net.net).expect("fit holds the only live network handle");
            adam_update(params, &mut adam, &grads, bc, lr, cfg);
        }
    }

    let mut views = ViewSampler::new(rng.next_u64(), cfg.mask_width, cfg.mask_height);
    let mut log_alpha = cfg.alpha_init.ln();
    let mut adam = AdamState::new(&net.net);
    let mut history = Vec::with_capacity(cfg.steps);

    // Every step silhouettes a different view, so the iterates jitter
    // around the optimum; averaging the last quarter of them cancels most
    // of that noise. A window of one step reduces to the final iterate.
    let avg_window = (cfg.steps / 4).max(1);
    let avg_from = cfg.steps - avg_window;
    let mut tail = TailAverage::new(&net.net);

    for step in 0..cfg.steps {
        let camera = views.next_camera()?;
        let m_o = render_mask_occupancy(oracle.occupancy(), &camera, &cfg.march)?;
        let surface = sample_surface_points(&oracle, cfg.batch_surface, &mut rng)?;
        let eik = eikonal_batch(&oracle, cfg.batch_eik, cfg.surface_sigma, &mut rng)?;
        let eval = geo_step_eval(&net, log_alpha, &camera, &m_o, &surface, &eik, &cfg.weights, cfg)?;
        if !eval.terms.total.is_finite() {
            return Err(Error::NonFiniteLoss {
                step,
                breakdown: format!("{:?}", eval.terms),
            });
        }

        let bc = adam.prepared(cfg);
        let lr = cfg.lr * cfg.lr_floor.powf(step as f64 / cfg.steps as f64);
        let params = Arc::get_mut(&mut net.net).expect("fit holds the only live network handle");
        adam_update(params, &mut adam, &eval.grads, bc, lr, cfg);
        log_alpha -= adam_scalar(
            &mut adam.m_alpha,
            &mut adam.v_alpha,
            eval.alpha_grad,
            bc,
            lr,
            cfg,
        );
        if step >= avg_from {
            tail.accumulate(&net.net, log_alpha);
        }
        history.push(eval.terms);
    }

    log_alpha = tail.write_back(
        Arc::get_mut(&mut net.net).expect("fit holds the only live network handle"),
    );

    let density = DensityParams::new(log_alpha.exp())?;
    let mut ho_rng = SplitMix64::new(cfg.seed ^ HELD_OUT_SALT);
    let mut ws = FieldScratch::default();
    let surface = sample_surface_points(&oracle, 1024, &mut ho_rng)?;
    let abs_s: Vec<f64> = surface.iter().map(|&p| net.eval(p, &mut ws).abs()).collect();
    let eik = eikonal_batch(&oracle, 1024, cfg.surface_sigma, &mut ho_rng)?;
    let dev: Vec<f64> = eik
        .iter()
        .map(|&p| (net.eval_with_grad(p, &mut ws).1.length() - 1.0).abs())
        .collect();

    let eval_cam = OrthoCamera::frontal(2.0, 2.0, 1.0, cfg.eval_width, cfg.eval_height)?;
    // The mask thresholds at one half, so hits need only sub-alpha accuracy;
    // a micro eps would just make near-surface rays creep for dozens of
    // extra field evaluations.
    let eval_trace = TraceParams {
        max_steps: 64,
        eps: 1e-4,
        ..TraceParams::default()
    };
    let eval_settings = RenderSettings {
        n_samples: cfg.n_samples,
        interval_scale: cfg.interval_scale,
        ..RenderSettings::default()
    };
    let m_o = render_mask_occupancy(oracle.occupancy(), &eval_cam, &cfg.march)?;
    let m_s = render_alpha_sdf(&net, &density, &eval_cam, &eval_trace, &eval_settings)?;
    let final_iou = mask_iou(&m_o, &m_s, 0.5)?;

    let report = FitReport {
        history,
        final_alpha: density.alpha(),
        held_out_mean_abs_s: deterministic_mean(&abs_s),
        held_out_mean_eik_dev: deterministic_mean(&dev),
        final_iou,
        wall_seconds: start.elapsed().as_secs_f64(),
    };
    Ok((net, density, report))
}
