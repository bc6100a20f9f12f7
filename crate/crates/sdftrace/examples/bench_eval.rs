use std::sync::Arc;
use std::time::Instant;
use sdftrace::core::{SplitMix64, Vec3};
use sdftrace::fields::{FieldScratch, NeuralSdf, OccupancyOracle, SdfShape};
use sdftrace::neural::{MlpScratch, PriorOracle};

fn main() {
    let oracle = Arc::new(PriorOracle::new(
        OccupancyOracle::Hard {
            shape: Arc::new(SdfShape::Sphere { center: Vec3::ZERO, radius: 0.6 }),
        },
        None,
    ));
    let net = NeuralSdf::seeded(oracle.clone(), 7).unwrap();
    let mut ws = FieldScratch::default();
    let mut rng = SplitMix64::new(1);
    let pts: Vec<Vec3> = (0..1000)
        .map(|_| Vec3::new(rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0)))
        .collect();
    let mut acc = 0.0;
    for &p in &pts { acc += net.eval(p, &mut ws); }

    let n = 100_000usize;
    // features_into alone
    let mut feat = vec![0.0; 273];
    let t = Instant::now();
    for i in 0..n {
        let p = pts[i % 1000];
        feat[0] = p.x;
        feat[1] = p.y;
        feat[2] = p.z;
        oracle.features_into(p, &mut feat[3..3 + 257]).unwrap();
        acc += feat[3];
    }
    let dt = t.elapsed().as_secs_f64();
    println!("features_into: {:.2} us/call", dt / n as f64 * 1e6);

    // raw forward on the fixed feature vector
    let mut mws = MlpScratch::default();
    let t = Instant::now();
    for _ in 0..n { acc += net.net.forward_scalar(&feat, &mut mws).unwrap(); }
    let dt = t.elapsed().as_secs_f64();
    println!("forward:       {:.2} us/call", dt / n as f64 * 1e6);

    // full value eval
    let t = Instant::now();
    for i in 0..n { acc += net.eval(pts[i % 1000], &mut ws); }
    let dt = t.elapsed().as_secs_f64();
    println!("value eval:    {:.2} us/call", dt / n as f64 * 1e6);

    // jet eval
    let m = 20_000usize;
    let t = Instant::now();
    for i in 0..m { acc += net.eval_with_grad(pts[i % 1000], &mut ws).0; }
    let dt = t.elapsed().as_secs_f64();
    println!("jet eval:      {:.2} us/call", dt / m as f64 * 1e6);
    println!("sink {acc}");
}
