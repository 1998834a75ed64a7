use rand_chacha::{rand_core::SeedableRng, ChaCha8Rng};
use sphervox::geometry::{apply_rotation, haar_random_rotation};
use sphervox::matching::{build_descriptor_db, match_points, matching_accuracy, self_match_rate};
use sphervox::netkit::{
    evaluate, gen_synthetic_dataset, train, Activation, AdamParams, DatasetParams, HeadKind,
    Model, ModelConfig, RotationMode, Sample, SvcLayerSpec, SyntheticDataset, TrainParams,
};
use sphervox::sphgrid::GridSpec;
use std::time::Instant;

fn layer(c: usize, b: usize) -> SvcLayerSpec {
    SvcLayerSpec { channels: c, bandwidth: b }
}

fn config(head: HeadKind, k: usize, daas: bool, layers: Vec<SvcLayerSpec>, fc: Vec<usize>, seed: u64) -> ModelConfig<f64> {
    ModelConfig {
        grid: GridSpec::new(8usize, k, 0.25).unwrap(),
        density_aware: daas,
        layers,
        head,
        fc_widths: fc,
        activation: Activation::Relu,
        classes: 4,
        parts: 3,
        seed,
    }
}

fn main() {
    let t0 = Instant::now();
    for (name, layers, fc, pc, epochs) in [
        ("P1 off k16 (6,3)(8,2) pc16 e60", vec![layer(6, 3), layer(8, 2)], vec![16usize], 16usize, 60usize),
        ("P2 off k16 (6,4)(8,3) pc24 e80", vec![layer(6, 4), layer(8, 3)], vec![16], 24, 80),
        ("P3 off k16 (8,4)(10,3)(10,3) pc16 e60", vec![layer(8, 4), layer(10, 3), layer(10, 3)], vec![16], 16, 60),
        ("P4 off k16 (6,4)(8,3) fc24 pc16 e60", vec![layer(6, 4), layer(8, 3)], vec![24], 16, 60),
    ] {
        let mut model = Model::new(config(HeadKind::Classification, 16, false, layers, fc, 0)).unwrap();
        let train_set = gen_synthetic_dataset::<f64>(
            &DatasetParams { per_class: pc, points: 512, noise_sigma: 0.0 },
            0xA11CE,
        );
        train(
            &mut model,
            &train_set,
            &TrainParams {
                epochs,
                batch_size: 8,
                adam: AdamParams { lr: 0.02, decay_every: usize::MAX, ..AdamParams::default() },
            },
        )
        .unwrap();
        let test_set = gen_synthetic_dataset::<f64>(
            &DatasetParams { per_class: 25, points: 512, noise_sigma: 0.0 },
            0xB0B,
        );
        let nr = evaluate(&model, &test_set, RotationMode::None, 7).unwrap();
        let ar = evaluate(&model, &test_set, RotationMode::Haar, 0xC0DE).unwrap();
        println!(
            "c7 {name}: NR={:.3} AR={:.3} gap={:.3}  [{:.0}s]",
            nr.accuracy, ar.accuracy, (nr.accuracy - ar.accuracy).abs(), t0.elapsed().as_secs_f64()
        );
    }

    // c9: rotation-augmented descriptor training.
    for (name, k, layers, copies, epochs) in [
        ("S1 off k8 (8,8)(12,6) fc24 aug4 e60", 8usize, vec![layer(8, 8), layer(12, 6)], 4usize, 60usize),
        ("S2 off k16 (8,6)(12,4) fc24 aug4 e60", 16, vec![layer(8, 6), layer(12, 4)], 4, 60),
    ] {
        let t1 = Instant::now();
        let mut seg = Model::new(config(HeadKind::Segmentation, k, false, layers, vec![24], 1)).unwrap();
        let base = gen_synthetic_dataset::<f64>(
            &DatasetParams { per_class: 6, points: 512, noise_sigma: 0.0 },
            0xD0E,
        );
        let mut aug_rng = ChaCha8Rng::seed_from_u64(0xA06);
        let mut samples = Vec::new();
        for s in &base.samples {
            samples.push(s.clone());
            for _ in 1..copies {
                let rot = haar_random_rotation(&mut aug_rng);
                samples.push(Sample { cloud: apply_rotation(&s.cloud, &rot), class: s.class });
            }
        }
        let train_set = SyntheticDataset {
            samples,
            classes: base.classes,
            parts_per_class: base.parts_per_class.clone(),
        };
        train(
            &mut seg,
            &train_set,
            &TrainParams {
                epochs,
                batch_size: 8,
                adam: AdamParams { lr: 0.02, decay_every: usize::MAX, ..AdamParams::default() },
            },
        )
        .unwrap();
        let mut db_clouds = Vec::new();
        for class in 0..4 {
            let mut taken = 0;
            for s in &base.samples {
                if s.class == class && taken < 2 {
                    db_clouds.push(s.cloud.clone());
                    taken += 1;
                }
            }
        }
        let db = build_descriptor_db(&seg, &db_clouds).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0xFACE);
        let mut same = 0.0;
        let mut total = 0.0;
        let mut min_self = f64::INFINITY;
        for (obj, cloud) in db_clouds.iter().enumerate() {
            let rot = haar_random_rotation(&mut rng);
            let m = match_points(cloud, Some(&rot), &seg, &db, 1).unwrap();
            same += matching_accuracy(&m) * m.len() as f64;
            total += m.len() as f64;
            let unrot = match_points(cloud, None, &seg, &db, 1).unwrap();
            min_self = min_self.min(self_match_rate(&unrot, obj));
        }
        println!(
            "c9 {name}: part acc={:.4} min self={:.4}  [{:.0}s]",
            same / total, min_self, t1.elapsed().as_secs_f64()
        );
    }
}
