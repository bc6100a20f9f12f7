//! Dev probe: replicate the fit warm-start regression standalone and watch
//! its convergence at different learning rates.

use std::sync::Arc;

use sdftrace::core::{OrthoCamera, SplitMix64, Vec3};
use sdftrace::fields::{sdf_to_density, DensityParams, FieldScratch, NeuralSdf};
use sdftrace::neural::{MlpGrads, MlpWeights, PriorOracle};
use sdftrace::renderer::render_mask_occupancy;
use sdftrace::tracer::{sphere_trace, MarchParams, TraceOutcome, TraceParams};

struct Adam {
    m: MlpGrads,
    v: MlpGrads,
    t: u64,
}

impl Adam {
    fn new(w: &MlpWeights) -> Self {
        Adam { m: MlpGrads::zeros_like(w), v: MlpGrads::zeros_like(w), t: 0 }
    }

    fn step(&mut self, w: &mut MlpWeights, g: &MlpGrads, lr: f64) {
        self.t += 1;
        let (b1, b2, eps): (f64, f64, f64) = (0.9, 0.999, 1e-8);
        let c1 = 1.0 - b1.powi(self.t as i32);
        let c2 = 1.0 - b2.powi(self.t as i32);
        for (l, layer) in w.layers_mut().iter_mut().enumerate() {
            for (p, (m, (v, gg))) in layer.w.iter_mut().zip(
                self.m.w[l].iter_mut().zip(self.v.w[l].iter_mut().zip(&g.w[l])),
            ) {
                *m = b1 * *m + (1.0 - b1) * gg;
                *v = b2 * *v + (1.0 - b2) * gg * gg;
                *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
            }
            for (p, (m, (v, gg))) in layer.b.iter_mut().zip(
                self.m.b[l].iter_mut().zip(self.v.b[l].iter_mut().zip(&g.b[l])),
            ) {
                *m = b1 * *m + (1.0 - b1) * gg;
                *v = b2 * *v + (1.0 - b2) * gg * gg;
                *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
            }
        }
    }
}

fn surface_rms(net: &NeuralSdf, radius: f64) -> f64 {
    let mut rng = SplitMix64::new(77);
    let mut ws = FieldScratch::default();
    let mut acc = 0.0;
    const N: usize = 2048;
    for _ in 0..N {
        let d = Vec3::new(rng.normal(), rng.normal(), rng.normal()).normalized();
        let s = net.eval(d * radius, &mut ws);
        acc += s * s;
    }
    (acc / N as f64).sqrt()
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let steps: usize = args.get(1).map(|s| s.parse().unwrap()).unwrap_or(3000);
    let lr: f64 = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(1e-3);
    let batch: usize = args.get(3).map(|s| s.parse().unwrap()).unwrap_or(256);
    let lr_end: f64 = args.get(4).map(|s| s.parse().unwrap()).unwrap_or(lr);

    let oracle = Arc::new(PriorOracle::new(
        sdftrace::fields::OccupancyOracle::Hard {
            shape: Arc::new(sdftrace::fields::SdfShape::Sphere {
                center: Vec3::ZERO,
                radius: 1.0,
            }),
        },
        None,
    ));
    let mut net = NeuralSdf::seeded(oracle, 0x1234).unwrap();
    let radius = 1.0;

    let mut rng = SplitMix64::new(42);
    let mut adam = Adam::new(&net.net);
    let mut ws = FieldScratch::default();
    let mut grads = MlpGrads::zeros_like(&net.net);

    println!("init surface rms {:.4e}", surface_rms(&net, radius));
    for step in 0..steps {
        grads.clear();
        let mut mse = 0.0;
        for i in 0..batch {
            let p = if i % 2 == 0 {
                Vec3::new(
                    rng.uniform(-1.0, 1.0),
                    rng.uniform(-1.0, 1.0),
                    rng.uniform(-1.0, 1.0),
                )
            } else {
                let dir = loop {
                    let d = Vec3::new(rng.normal(), rng.normal(), rng.normal());
                    if d.length() > 1e-6 {
                        break d.normalized();
                    }
                };
                dir * rng.uniform(0.0, 2.1)
            };
            let s = net.eval(p, &mut ws);
            let resid = s - (p.length() - radius);
            mse += resid * resid / batch as f64;
            net.backward_value(&mut ws, 2.0 * resid / batch as f64, &mut grads);
        }
        let frac = step as f64 / steps.max(1) as f64;
        let lr_now = lr * (lr_end / lr).powf(frac);
        let params = Arc::get_mut(&mut net.net).unwrap();
        adam.step(params, &grads, lr_now);
        if step % 200 == 0 || step + 1 == steps {
            println!(
                "step {:5}  mse {:.4e}  surf_rms {:.4e}",
                step,
                mse,
                surface_rms(&net, radius)
            );
        }
    }

    for ms in [12, 24, 48, 96] {
        mask_diagnostic(&net, 48, 24, 0.01, 6.0, ms);
    }
    mask_diagnostic(&net, 128, 64, 0.01, 6.0, 48);
}

fn mask_diagnostic(net: &NeuralSdf, w: u32, h: u32, alpha: f64, k: f64, max_steps: usize) {
    let cam = OrthoCamera::frontal(2.0, 2.0, 1.0, w, h).unwrap();
    let oracle = Arc::new(PriorOracle::new(
        sdftrace::fields::OccupancyOracle::Hard {
            shape: Arc::new(sdftrace::fields::SdfShape::Sphere {
                center: Vec3::ZERO,
                radius: 1.0,
            }),
        },
        None,
    ));
    let m_o = render_mask_occupancy(oracle.occupancy(), &cam, &MarchParams::default()).unwrap();
    let density = DensityParams::new(alpha).unwrap();
    let trace_params = TraceParams {
        max_steps,
        ..TraceParams::default()
    };
    let hw = k * alpha;
    let n = 6usize;
    let delta = 2.0 * hw / n as f64;
    let mut ws = FieldScratch::default();

    // per (target, outcome) class: count, sum sq, sum A
    let mut stats: [[(usize, f64, f64); 3]; 2] = Default::default();
    let mut t_err_sum = 0.0;
    let mut t_err_max: f64 = 0.0;
    let mut t_err_n = 0usize;
    for row in 0..h {
        for col in 0..w {
            let target = m_o.scalar(col, row).unwrap();
            let ray = cam.camera_ray(col, row, (0.5, 0.5)).unwrap();
            let trace = sphere_trace(net, &ray, &trace_params, &mut ws);
            let a = if trace.surface_like() {
                let t0 = trace.t - hw;
                let mut optical = 0.0;
                for i in 0..n {
                    let s = net.eval(ray.at(t0 + (i as f64 + 0.5) * delta), &mut ws);
                    optical += sdf_to_density(s, &density) * delta;
                }
                1.0 - (-optical).exp()
            } else {
                0.0
            };
            let diff = a - target;
            let ti = (target > 0.5) as usize;
            let oi = match trace.outcome {
                TraceOutcome::Hit => 0,
                TraceOutcome::MaxSteps => 1,
                TraceOutcome::Escaped => 2,
            };
            stats[ti][oi].0 += 1;
            stats[ti][oi].1 += diff * diff;
            stats[ti][oi].2 += a;
            // analytic hit parameter for rays crossing the unit sphere
            if trace.surface_like() {
                let t_ca = -ray.origin.dot(ray.dir);
                let d2 = ray.origin.dot(ray.origin) - t_ca * t_ca;
                if d2 < 1.0 {
                    let t_true = t_ca - (1.0 - d2).sqrt();
                    let err = (trace.t - t_true).abs();
                    t_err_sum += err;
                    t_err_max = t_err_max.max(err);
                    t_err_n += 1;
                }
            }
        }
    }
    let n_pix = (w * h) as f64;
    println!(
        "--- mask diag {}x{} alpha {} k {} max_steps {} ---",
        w, h, alpha, k, max_steps
    );
    let names = ["hit", "maxsteps", "escaped"];
    for ti in 0..2 {
        for oi in 0..3 {
            let (c, sq, asum) = stats[ti][oi];
            if c == 0 {
                continue;
            }
            println!(
                "target {}  {:8}  n {:5}  loss_contrib {:.3e}  mean_A {:.4}",
                ti,
                names[oi],
                c,
                sq / n_pix,
                asum / c as f64
            );
        }
    }
    if t_err_n > 0 {
        println!(
            "hit-param err: mean {:.3e}  max {:.3e}  (n {})",
            t_err_sum / t_err_n as f64,
            t_err_max,
            t_err_n
        );
    }
}
