use rand::Rng;
use rand_chacha::{rand_core::SeedableRng, ChaCha8Rng};
use sphervox::geometry::{apply_rotation, cart_to_sph, haar_random_rotation, SphCoord};
use sphervox::harmonics::So3Fft;
use sphervox::netkit::{gen_synthetic_dataset, DatasetParams};
use sphervox::resample::trilinear_sample_sph;
use sphervox::sphgrid::{build_signal, GridSpec};
use sphervox::svconv::{svc_forward_limited, SvcKernel};

fn pipeline(
    cloud: &sphervox::geometry::PointCloud<f64>,
    spec: &GridSpec<f64>,
    kernel: &SvcKernel<f64>,
    fft: &So3Fft<f64>,
    band: usize,
) -> Vec<f64> {
    let grid = build_signal(cloud, spec, true).unwrap();
    let conv = svc_forward_limited(&grid, kernel, fft, band).unwrap();
    let coords: Vec<SphCoord<f64>> = cloud.points.iter().map(cart_to_sph).collect();
    trilinear_sample_sph(&conv, &coords)
}

fn deviation(b: usize, points: usize, band: usize, delta: f64) -> f64 {
    let ds = gen_synthetic_dataset::<f64>(
        &DatasetParams { per_class: 1, points, noise_sigma: 0.0 },
        314,
    );
    let cloud = &ds.samples[0].cloud;
    let spec = GridSpec::new(b, 8, delta).unwrap();
    let fft = So3Fft::<f64>::new(b);
    let mut kernel = SvcKernel::new_ring(b, 8, 1, 1);
    let mut krng = ChaCha8Rng::seed_from_u64(99);
    let params: Vec<f64> =
        (0..kernel.param_count()).map(|_| krng.gen_range(-1.0..1.0)).collect();
    kernel.set_params(&params).unwrap();
    let base = pipeline(cloud, &spec, &kernel, &fft, band);
    let scale: f64 = (base.iter().map(|v| v * v).sum::<f64>() / base.len() as f64).sqrt();
    let mut rot_rng = ChaCha8Rng::seed_from_u64(2718);
    let mut mean_dev = 0.0;
    for _ in 0..50 {
        let rot = haar_random_rotation(&mut rot_rng);
        let moved = apply_rotation(cloud, &rot);
        let feats = pipeline(&moved, &spec, &kernel, &fft, band);
        let dev: f64 = (base
            .iter()
            .zip(&feats)
            .map(|(a, c)| (a - c) * (a - c))
            .sum::<f64>()
            / base.len() as f64)
            .sqrt()
            / scale;
        mean_dev += dev / 50.0;
    }
    mean_dev
}

fn main() {
    for (label, band, delta) in [
        ("tiling delta=0.20, band 6", 6usize, 0.20),
        ("tiling delta=0.20, band 8", 8, 0.20),
        ("delta=0.125,       band 6", 6, 0.125),
        ("delta=0.25,        band 6", 6, 0.25),
    ] {
        let d8 = deviation(8, 2048, band, delta);
        let d16 = deviation(16, 2048, band, delta);
        println!("{label}: B=8 {d8:.6}  B=16 {d16:.6}  converges? {}", d16 < d8);
    }
}
