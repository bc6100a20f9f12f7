use std::sync::Arc;
use sdftrace::core::Vec3;
use sdftrace::fields::{OccupancyOracle, SdfShape};
use sdftrace::fitting::{fit_sdf, FitConfig};
use sdftrace::neural::PriorOracle;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let steps: usize = args.get(1).map(|s| s.parse().unwrap()).unwrap_or(500);
    let lr: f64 = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(3e-3);
    let mw: u32 = args.get(3).map(|s| s.parse().unwrap()).unwrap_or(64);
    let bs: usize = args.get(4).map(|s| s.parse().unwrap()).unwrap_or(512);
    let be: usize = args.get(5).map(|s| s.parse().unwrap()).unwrap_or(1024);
    let ew: u32 = args.get(6).map(|s| s.parse().unwrap()).unwrap_or(512);
    let w: Vec<f64> = args
        .get(7)
        .map(|s| s.split(',').map(|v| v.parse().unwrap()).collect())
        .unwrap_or_else(|| vec![1.0, 1.0, 0.1]);
    let a0: f64 = args.get(8).map(|s| s.parse().unwrap()).unwrap_or(0.1);
    let tr: Vec<f64> = args
        .get(9)
        .map(|s| s.split(',').map(|v| v.parse().unwrap()).collect())
        .unwrap_or_else(|| vec![12.0, 0.0, 4.0]);
    let wu: usize = args.get(10).map(|s| s.parse().unwrap()).unwrap_or(300);
    let oracle = Arc::new(PriorOracle::new(
        OccupancyOracle::Hard {
            shape: Arc::new(SdfShape::Sphere { center: Vec3::ZERO, radius: 1.0 }),
        },
        None,
    ));
    let cfg = FitConfig {
        steps,
        lr,
        mask_width: mw,
        mask_height: mw / 2,
        batch_surface: bs,
        batch_eik: be,
        eval_width: ew,
        eval_height: ew / 2,
        weights: sdftrace::losses::GeoLossWeights { mask: w[0], sdf: w[1], eik: w[2] },
        alpha_init: a0,
        warmup_steps: wu,
        lr_floor: args.get(11).map(|s| s.parse().unwrap()).unwrap_or(0.01),
        seed: args.get(12).map(|s| s.parse().unwrap()).unwrap_or(0),
        trace: sdftrace::tracer::TraceParams {
            max_steps: tr[0] as usize,
            t_start: tr[1],
            t_max: tr[2],
            eps: tr.get(3).copied().unwrap_or(1e-3),
        },
        ..FitConfig::default()
    };
    let (net, density, report) = fit_sdf(oracle, &cfg).unwrap();
    let mut ws = sdftrace::fields::FieldScratch::default();
    {
        let mut rng = sdftrace::core::SplitMix64::new(99);
        let mut signed = 0.0;
        const N: usize = 1000;
        for _ in 0..N {
            let d = Vec3::new(rng.normal(), rng.normal(), rng.normal()).normalized();
            signed += net.eval(d, &mut ws) / N as f64;
        }
        println!("mean signed s on unit sphere: {signed:.3e}");
    }
    print!("s(+x): ");
    for i in 0..=20 {
        let x = i as f64 * 0.1;
        print!("{:.3} ", net.eval(Vec3::new(x, 0.0, 0.0), &mut ws));
    }
    println!();
    print!("s(diag): ");
    for i in 0..=20 {
        let t = i as f64 * 0.1;
        let x = Vec3::new(t / 1.732, t / 1.732, t / 1.732);
        print!("{:.3} ", net.eval(x, &mut ws));
    }
    println!();
    for (i, t) in report.history.iter().enumerate() {
        if i % 25 == 0 || i + 1 == report.history.len() {
            println!(
                "step {i:4}  total {:.3e}  mask {:.3e}  sdf {:.3e}  eik {:.3e}",
                t.total, t.mask, t.sdf, t.eik
            );
        }
    }
    println!(
        "alpha {:.4}  |s| {:.3e}  eikdev {:.3e}  IoU {:.4}  wall {:.1}s",
        density.alpha(),
        report.held_out_mean_abs_s,
        report.held_out_mean_eik_dev,
        report.final_iou,
        report.wall_seconds
    );
}
