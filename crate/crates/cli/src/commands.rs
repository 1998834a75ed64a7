//! The command implementations behind the argument surface in `main`.

use std::io::Write as _;
use std::path::Path;

use rand::Rng;
use rand_chacha::{rand_core::SeedableRng, ChaCha8Rng};

use sphervox::geometry::{
    apply_rotation, cart_to_sph, haar_random_rotation, normalize_cloud, rot_from_zyz, PointCloud,
    RotationZyz, SphCoord,
};
use sphervox::io::{
    db_to_tensor_file, model_from_tensor_file, model_to_tensor_file, parse_xyz, NamedTensor,
    TensorFile,
};
use sphervox::matching::{build_descriptor_db, match_points, matching_accuracy};
use sphervox::netkit::{
    evaluate, gen_synthetic_dataset, train, HeadKind, Model, RotationMode, SvcLayerSpec,
    SyntheticDataset,
};
use sphervox::resample::trilinear_sample_sph;
use sphervox::sphgrid::{build_signal, GridSpec, SphericalVoxelGrid};

use crate::config::FileConfig;
use crate::{Axis, CliError, Rotate, Task};

/// Grid defaults for the featurize/verify commands when no flag is given.
const DEFAULT_BANDWIDTH: usize = 8;
const DEFAULT_H_RES: usize = 16;
const DEFAULT_DELTA: f64 = 1.0 / 32.0;

fn read_cloud(path: &Path) -> Result<PointCloud<f64>, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Parse(format!("{}: {e}", path.display())))?;
    let cloud = parse_xyz::<f64>(&text)
        .map_err(|e| CliError::Parse(format!("{}: {e}", path.display())))?;
    normalize_cloud(&cloud).map_err(|e| CliError::Invalid(format!("{}: {e}", path.display())))
}

fn read_checkpoint(path: &Path) -> Result<Model<f64>, CliError> {
    let bytes =
        std::fs::read(path).map_err(|e| CliError::Parse(format!("{}: {e}", path.display())))?;
    let file = TensorFile::from_bytes(&bytes)
        .map_err(|e| CliError::Parse(format!("{}: {e}", path.display())))?;
    model_from_tensor_file(&file).map_err(CliError::from)
}

/// Writes through a temporary file in the target directory and renames, so a
/// crash never leaves a half-written artifact.
fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)
        .map_err(|e| CliError::Invalid(format!("{}: {e}", path.display())))?;
    tmp.write_all(bytes)
        .map_err(|e| CliError::Invalid(format!("{}: {e}", path.display())))?;
    tmp.persist(path)
        .map_err(|e| CliError::Invalid(format!("{}: {e}", path.display())))?;
    Ok(())
}

/// Grid settings requested on the command line; `None` means "use the
/// default".
pub struct GridFlags {
    pub bandwidth: Option<usize>,
    pub h_res: Option<usize>,
    pub delta: Option<f64>,
    pub no_daas: bool,
}

impl GridFlags {
    fn resolve(&self) -> Result<(GridSpec<f64>, bool), CliError> {
        let spec = GridSpec::new(
            self.bandwidth.unwrap_or(DEFAULT_BANDWIDTH),
            self.h_res.unwrap_or(DEFAULT_H_RES),
            self.delta.unwrap_or(DEFAULT_DELTA),
        )
        .map_err(|e| CliError::Invalid(e.to_string()))?;
        Ok((spec, !self.no_daas))
    }

    /// Checks every explicitly given flag against a checkpoint's grid.
    fn check_against(&self, model: &Model<f64>) -> Result<(), CliError> {
        let grid = &model.config().grid;
        if let Some(b) = self.bandwidth {
            if b != grid.bandwidth() {
                return Err(CliError::Mismatch(format!(
                    "--bandwidth {b} but the checkpoint was built at {}",
                    grid.bandwidth()
                )));
            }
        }
        if let Some(k) = self.h_res {
            if k != grid.h_res() {
                return Err(CliError::Mismatch(format!(
                    "--h-res {k} but the checkpoint was built at {}",
                    grid.h_res()
                )));
            }
        }
        if let Some(d) = self.delta {
            if d != grid.delta() {
                return Err(CliError::Mismatch(format!(
                    "--delta {d} but the checkpoint was built at {}",
                    grid.delta()
                )));
            }
        }
        if self.no_daas && model.config().density_aware {
            return Err(CliError::Mismatch(
                "--no-daas but the checkpoint uses the density-aware window".to_owned(),
            ));
        }
        Ok(())
    }
}

pub fn cmd_featurize(
    input: &Path,
    grid_flags: &GridFlags,
    model_path: Option<&Path>,
    out: &Path,
) -> Result<(), CliError> {
    let cloud = read_cloud(input)?;
    let file = match model_path {
        None => {
            let (spec, density_aware) = grid_flags.resolve()?;
            let grid = build_signal(&cloud, &spec, density_aware)
                .map_err(|e| CliError::Invalid(e.to_string()))?;
            let dims = vec![
                grid.channels() as u32,
                spec.angular_res() as u32,
                spec.angular_res() as u32,
                spec.h_res() as u32,
            ];
            TensorFile {
                tensors: vec![NamedTensor {
                    name: "grid".to_owned(),
                    dims,
                    data: grid.data().iter().map(|&v| v as f32).collect(),
                }],
            }
        }
        Some(path) => {
            let model = read_checkpoint(path)?;
            grid_flags.check_against(&model)?;
            if model.config().head != HeadKind::Segmentation {
                return Err(CliError::Mismatch(
                    "per-point features need a segmentation checkpoint".to_owned(),
                ));
            }
            let features = model.penultimate_features(&cloud)?;
            TensorFile {
                tensors: vec![NamedTensor::matrix(
                    "features",
                    cloud.points.len() as u32,
                    model.penultimate_dim() as u32,
                    features.iter().map(|&v| v as f32).collect(),
                )],
            }
        }
    };
    write_atomic(out, &file.to_bytes().map_err(CliError::from)?)
}

/// Per-channel maximum over all grid sites: the pooled global feature.
fn pooled_max(grid: &SphericalVoxelGrid<f64>) -> Vec<f64> {
    let count = grid.spec().voxel_count();
    (0..grid.channels())
        .map(|c| {
            grid.data()[c * count..(c + 1) * count]
                .iter()
                .copied()
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .collect()
}

fn deviation_scale(values: &[f64]) -> f64 {
    let m = values.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    if m > 0.0 {
        m
    } else {
        1.0
    }
}

pub fn cmd_verify_invariance(
    input: &Path,
    grid_flags: &GridFlags,
    trials: usize,
    grid_exact: bool,
    seed: u64,
) -> Result<(), CliError> {
    let cloud = read_cloud(input)?;
    let (spec, density_aware) = grid_flags.resolve()?;
    let base_grid = build_signal(&cloud, &spec, density_aware)
        .map_err(|e| CliError::Invalid(e.to_string()))?;
    let base_coords: Vec<SphCoord<f64>> = cloud.points.iter().map(cart_to_sph).collect();
    let base_points = trilinear_sample_sph(&base_grid, &base_coords);
    let base_pooled = pooled_max(&base_grid);
    let point_scale = deviation_scale(&base_points);
    let pooled_scale = deviation_scale(&base_pooled);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut point_max = 0.0f64;
    let mut point_mean_sum = 0.0f64;
    let mut pooled_worst = 0.0f64;
    let mut pooled_sum = 0.0f64;
    for _ in 0..trials {
        let rot: RotationZyz<f64> = if grid_exact {
            let steps = rng.gen_range(1..spec.angular_res());
            rot_from_zyz(
                steps as f64 * std::f64::consts::TAU / spec.angular_res() as f64,
                0.0,
                0.0,
            )
        } else {
            haar_random_rotation(&mut rng)
        };
        let moved = apply_rotation(&cloud, &rot);
        let grid = build_signal(&moved, &spec, density_aware)
            .map_err(|e| CliError::Invalid(e.to_string()))?;
        let coords: Vec<SphCoord<f64>> = moved.points.iter().map(cart_to_sph).collect();
        let points = trilinear_sample_sph(&grid, &coords);
        let mut trial_sum = 0.0f64;
        for (a, b) in base_points.iter().zip(&points) {
            let d = (a - b).abs() / point_scale;
            point_max = point_max.max(d);
            trial_sum += d;
        }
        point_mean_sum += trial_sum / base_points.len().max(1) as f64;
        let pooled = pooled_max(&grid);
        let mut pd = 0.0f64;
        for (a, b) in base_pooled.iter().zip(&pooled) {
            pd = pd.max((a - b).abs() / pooled_scale);
        }
        pooled_worst = pooled_worst.max(pd);
        pooled_sum += pd;
    }
    let denom = trials.max(1) as f64;
    println!(
        "mode={} trials={trials} per_point_max={point_max} per_point_mean={} pooled_max={pooled_worst} pooled_mean={}",
        if grid_exact { "grid-exact" } else { "haar" },
        point_mean_sum / denom,
        pooled_sum / denom,
    );
    Ok(())
}

fn head_of(task: Task) -> HeadKind {
    match task {
        Task::Cls => HeadKind::Classification,
        Task::Seg => HeadKind::Segmentation,
    }
}

pub fn cmd_train(
    task: Task,
    config_path: &Path,
    seed: Option<u64>,
    out: &Path,
) -> Result<(), CliError> {
    let config = FileConfig::load(config_path)?;
    let mut model = Model::new(config.model_config(head_of(task), seed)?)?;
    let dataset: SyntheticDataset<f64> =
        gen_synthetic_dataset(&config.dataset_params(), config.dataset.seed);
    let report = train(&mut model, &dataset, &config.train_params())?;
    let mut stdout = std::io::stdout().lock();
    for m in &report.epochs {
        writeln!(stdout, "{}\t{}\t{}", m.epoch, m.loss, m.accuracy)
            .map_err(|e| CliError::Invalid(e.to_string()))?;
    }
    drop(stdout);
    let file = model_to_tensor_file(&model).map_err(CliError::from)?;
    write_atomic(out, &file.to_bytes().map_err(CliError::from)?)
}

pub fn cmd_eval(
    task: Task,
    config_path: &Path,
    ckpt: &Path,
    rotate: Rotate,
    seed: u64,
) -> Result<(), CliError> {
    let config = FileConfig::load(config_path)?;
    let model = read_checkpoint(ckpt)?;
    if model.config().head != head_of(task) {
        return Err(CliError::Mismatch(format!(
            "--task asks for a {:?} head but the checkpoint holds {:?}",
            head_of(task),
            model.config().head
        )));
    }
    let dataset: SyntheticDataset<f64> = gen_synthetic_dataset(&config.dataset_params(), seed);
    let mode = match rotate {
        Rotate::None => RotationMode::None,
        Rotate::Haar => RotationMode::Haar,
    };
    let eval = evaluate(&model, &dataset, mode, seed)?;
    let mut stdout = std::io::stdout().lock();
    writeln!(stdout, "accuracy\t{}", eval.accuracy)
        .map_err(|e| CliError::Invalid(e.to_string()))?;
    for (c, acc) in eval.per_class_accuracy.iter().enumerate() {
        writeln!(stdout, "class_{c}_accuracy\t{acc}")
            .map_err(|e| CliError::Invalid(e.to_string()))?;
    }
    if let Some(miou) = eval.miou_instance {
        writeln!(stdout, "miou_instance\t{miou}").map_err(|e| CliError::Invalid(e.to_string()))?;
    }
    if let Some(miou) = eval.miou_class {
        writeln!(stdout, "miou_class\t{miou}").map_err(|e| CliError::Invalid(e.to_string()))?;
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
pub fn cmd_match(
    db_objects: &[std::path::PathBuf],
    query: &Path,
    ckpt: &Path,
    k: usize,
    rotate: Rotate,
    seed: u64,
    table: bool,
    db_out: Option<&Path>,
) -> Result<(), CliError> {
    let model = read_checkpoint(ckpt)?;
    let clouds = db_objects
        .iter()
        .map(|p| read_cloud(p))
        .collect::<Result<Vec<_>, _>>()?;
    let db = build_descriptor_db(&model, &clouds)?;
    if let Some(path) = db_out {
        let file = db_to_tensor_file(&db).map_err(CliError::from)?;
        write_atomic(path, &file.to_bytes().map_err(CliError::from)?)?;
    }
    let query_cloud = read_cloud(query)?;
    let rotation = match rotate {
        Rotate::None => None,
        Rotate::Haar => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            Some(haar_random_rotation(&mut rng))
        }
    };
    let matches = match_points(&query_cloud, rotation.as_ref(), &model, &db, k)?;
    let accuracy = matching_accuracy(&matches);
    let mut stdout = std::io::stdout().lock();
    writeln!(stdout, "matching_accuracy\t{accuracy}")
        .map_err(|e| CliError::Invalid(e.to_string()))?;
    if table {
        for c in &matches {
            for h in &c.hits {
                writeln!(
                    stdout,
                    "{}\t{}\t{}\t{}",
                    c.query_point, h.record.object, h.record.point, h.distance
                )
                .map_err(|e| CliError::Invalid(e.to_string()))?;
            }
        }
    }
    Ok(())
}

pub fn cmd_ablate(axis: Axis, task: Task, seed: u64) -> Result<(), CliError> {
    // One fixed toy recipe per run; only the swept axis changes between the
    // two rows, so they are comparable. Kept small enough to train in
    // seconds per setting.
    struct Setting {
        label: String,
        bandwidth: usize,
        h_res: usize,
        density_aware: bool,
    }
    let settings: Vec<Setting> = match axis {
        Axis::Bandwidth => [4usize, 8]
            .iter()
            .map(|&b| Setting {
                label: format!("bandwidth={b}"),
                bandwidth: b,
                h_res: 8,
                density_aware: true,
            })
            .collect(),
        Axis::HRes => [1usize, 8]
            .iter()
            .map(|&k| Setting {
                label: format!("h_res={k}"),
                bandwidth: 8,
                h_res: k,
                density_aware: true,
            })
            .collect(),
        Axis::Daas => [false, true]
            .iter()
            .map(|&on| Setting {
                label: format!("daas={}", if on { "on" } else { "off" }),
                bandwidth: 8,
                h_res: 8,
                density_aware: on,
            })
            .collect(),
    };
    let mut stdout = std::io::stdout().lock();
    for s in settings {
        let mut config = FileConfig::default();
        config.model.bandwidth = s.bandwidth;
        config.model.h_res = s.h_res;
        // Tent half-width matched to the radial cell height so each shell
        // sees its own slab (and the K = 1 row sees the whole ball).
        config.model.delta = 1.0 / (2.0 * s.h_res as f64);
        config.model.density_aware = s.density_aware;
        config.model.layers = vec![
            SvcLayerSpec {
                channels: 6,
                bandwidth: s.bandwidth,
            },
            SvcLayerSpec {
                channels: 8,
                bandwidth: (3 * s.bandwidth / 4).max(1),
            },
        ];
        config.dataset.per_class = 6;
        config.dataset.points = 512;
        config.dataset.seed = seed ^ 0x5eed;
        // Long enough at a constant rate to lift segmentation clearly above
        // majority-label prediction; with the default decay schedule the
        // later epochs would barely move.
        config.train.epochs = 30;
        config.train.batch_size = 8;
        config.train.lr = 0.02;
        config.train.decay_every = usize::MAX;
        let mut model = Model::new(config.model_config(head_of(task), Some(seed))?)?;
        let train_set: SyntheticDataset<f64> =
            gen_synthetic_dataset(&config.dataset_params(), config.dataset.seed);
        train(&mut model, &train_set, &config.train_params())?;
        let test_set: SyntheticDataset<f64> =
            gen_synthetic_dataset(&config.dataset_params(), config.dataset.seed ^ 0x7e57);
        let eval = evaluate(&model, &test_set, RotationMode::Haar, seed ^ 0xe0a1)?;
        match (eval.miou_instance, eval.miou_class) {
            (Some(mi), Some(mc)) => {
                writeln!(stdout, "{}\t{}\t{}\t{}", s.label, eval.accuracy, mi, mc)
            }
            _ => writeln!(stdout, "{}\t{}", s.label, eval.accuracy),
        }
        .map_err(|e| CliError::Invalid(e.to_string()))?;
    }
    Ok(())
}
