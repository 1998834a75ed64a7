use rand::Rng;
use rand_chacha::{rand_core::SeedableRng, ChaCha8Rng};
use sphervox::geometry::{PointCloud, Point3};
use sphervox::harmonics::{quadrature_weights, So3Fft};
use sphervox::sphgrid::{build_signal, GridSpec};
use sphervox::svconv::{svc_forward, SvcKernel};
use std::time::Instant;

fn ring_means(grid: &sphervox::sphgrid::SphericalVoxelGrid<f64>) -> Vec<f64> {
    let spec = *grid.spec();
    let n = spec.angular_res();
    let kk = spec.h_res();
    let mut means = vec![0.0; n];
    for j in 0..n {
        let mut s = 0.0;
        for i in 0..n {
            for k in 0..kk {
                s += grid.at(0, i, j, k);
            }
        }
        means[j] = s / (n * kk) as f64;
    }
    means
}

fn cv(v: &[f64]) -> f64 {
    let m = v.iter().sum::<f64>() / v.len() as f64;
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / v.len() as f64;
    var.sqrt() / m
}

fn main() {
    // --- criterion 5 probe: uniform shell, CV of ring means, daas on/off ---
    let mut rng = ChaCha8Rng::seed_from_u64(55);
    let n_pts = 100_000;
    let r = 0.8;
    let mut points = Vec::with_capacity(n_pts);
    for _ in 0..n_pts {
        let z: f64 = rng.gen_range(-1.0..1.0);
        let t: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
        let s = (1.0 - z * z).sqrt();
        points.push(Point3 { x: r * s * t.cos(), y: r * s * t.sin(), z: r * z });
    }
    let cloud = PointCloud { points, labels: None };
    for (b, kk, d) in [(8usize, 8usize, 1.0 / 16.0), (8, 16, 1.0 / 32.0), (16, 8, 1.0 / 16.0)] {
        let spec = GridSpec::new(b, kk, d).unwrap();
        let on = build_signal(&cloud, &spec, true).unwrap();
        let off = build_signal(&cloud, &spec, false).unwrap();
        println!(
            "B={b} K={kk}: CV daas_on={:.6} daas_off={:.6}  (on < off ? {})",
            cv(&ring_means(&on)),
            cv(&ring_means(&off)),
            cv(&ring_means(&on)) < cv(&ring_means(&off))
        );
    }
    // quadrature identity
    for b in [4usize, 8, 16] {
        let w = quadrature_weights::<f64>(b);
        let betas: Vec<f64> = (0..2 * b)
            .map(|j| std::f64::consts::PI * (2 * j + 1) as f64 / (4 * b) as f64)
            .collect();
        let s: f64 = w.iter().zip(&betas).map(|(wj, bj)| wj * bj.cos().powi(2)).sum();
        println!("B={b}: sum w_j cos^2(beta_j) = {s:.15} (err {:.3e})", (s - 2.0 / 3.0).abs());
    }
    // --- criterion 3 probe: svc_forward timing at B=8 and B=16 ---
    for b in [8usize, 16] {
        let spec = GridSpec::new(b, 8, 1.0 / 16.0).unwrap();
        let grid = build_signal(&cloud, &spec, true).unwrap();
        let fft = So3Fft::<f64>::new(b);
        let mut kernel = SvcKernel::new_ring(b, 8, 1, 1);
        let mut krng = ChaCha8Rng::seed_from_u64(1);
        let params: Vec<f64> = (0..kernel.param_count()).map(|_| krng.gen_range(-1.0..1.0)).collect();
        kernel.set_params(&params).unwrap();
        let t0 = Instant::now();
        let out = svc_forward(&grid, &kernel, &fft).unwrap();
        println!("B={b}: svc_forward took {:.3}s (out mass {:.3e})", t0.elapsed().as_secs_f64(), out.data().iter().map(|v| v.abs()).sum::<f64>());
    }
}
