//! Toy-scale trainable models on spherical voxel grids.
//!
//! A model is a stack of group-convolution layers ([`crate::svconv`]) with a
//! rectifier after each, followed by one of two heads:
//!
//! - **classification**: global max over all voxel sites per channel, then a
//!   fully connected stack down to class logits;
//! - **segmentation**: per-point trilinear reads off the final grid
//!   ([`crate::resample`]), then a per-point fully connected stack down to
//!   part logits.
//!
//! Gradients come from a [`Tape`]: the forward pass records each primitive
//! operation with the inputs its adjoint needs, and [`Model::backward`]
//! replays the records in reverse. Every trainable parameter belongs to
//! exactly one record per forward pass, so replay touches each exactly once.
//!
//! Training ([`train`]) uses mini-batch Adam with a stepped learning-rate
//! decay and applies **no rotation augmentation**: the training path never
//! draws a random rotation (the geometry module's draw counter lets tests
//! assert this). Evaluation ([`evaluate`]) optionally applies a fresh uniform
//! random rotation to every sample, which is the train-unrotated /
//! test-rotated protocol the rest of the test suite measures.
//!
//! [`gen_synthetic_dataset`] provides small labeled clouds (four shape
//! families with analytic part labels) so the whole loop runs in seconds.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{
    apply_rotation, cart_to_sph, haar_random_rotation, normalize_cloud, Point3, PointCloud,
    SphCoord,
};
use crate::harmonics::{So3Fft, So3Spectrum};
use crate::resample::{trilinear_backward_sph, trilinear_sample_sph, ResampleError};
use crate::scalar::Real;
use crate::sphgrid::{build_signal, GridError, GridSpec, SphericalVoxelGrid};
use crate::svconv::{
    svc_backward_limited, svc_forward_limited, svc_forward_with_spectra_limited, SvcError,
    SvcKernel,
};

/// Errors from model construction, forward passes, and training.
#[derive(Debug, Error, PartialEq)]
pub enum NetError {
    #[error("model head is {actual:?} but this call requires {required:?}")]
    HeadMismatch { required: HeadKind, actual: HeadKind },
    #[error("invalid model configuration: {0}")]
    BadConfig(String),
    #[error("parameter vector has {got} entries; the model has {want}")]
    BadParamCount { got: usize, want: usize },
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("training diverged at epoch {epoch}, step {step}: loss {loss}")]
    Diverged { epoch: usize, step: usize, loss: f64 },
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Svc(#[from] SvcError),
    #[error(transparent)]
    Resample(#[from] ResampleError),
}

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

/// Which head sits on top of the convolution stack.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadKind {
    Classification,
    Segmentation,
}

/// Nonlinearity applied after every layer except the final logits layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
}

/// One convolution layer: output channel count and the coefficient band
/// retained by spectral truncation (degrees at or above it are dropped).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SvcLayerSpec {
    pub channels: usize,
    pub bandwidth: usize,
}

/// Everything needed to build a [`Model`] deterministically.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig<T> {
    pub grid: GridSpec<T>,
    /// Whether voxelization widens windows toward the poles to keep the
    /// real-space footprint isotropic.
    pub density_aware: bool,
    /// Convolution stack; retained bandwidths must be non-increasing.
    pub layers: Vec<SvcLayerSpec>,
    pub head: HeadKind,
    /// Hidden widths of the fully connected stack (the logits layer size is
    /// implied by `classes`/`parts`).
    pub fc_widths: Vec<usize>,
    pub activation: Activation,
    pub classes: usize,
    pub parts: usize,
    /// Seed for parameter initialization and the training shuffle.
    pub seed: u64,
}

/// Serializable mirror of [`ModelConfig`] with plain `f64` fields, used by
/// checkpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfigData {
    pub bandwidth: usize,
    pub h_res: usize,
    pub delta: f64,
    pub density_aware: bool,
    pub layers: Vec<SvcLayerSpec>,
    pub head: HeadKind,
    pub fc_widths: Vec<usize>,
    pub activation: Activation,
    pub classes: usize,
    pub parts: usize,
    pub seed: u64,
}

impl<T: Real> ModelConfig<T> {
    /// Flattens into the serializable form.
    pub fn to_data(&self) -> ModelConfigData {
        ModelConfigData {
            bandwidth: self.grid.bandwidth(),
            h_res: self.grid.h_res(),
            delta: self.grid.delta().to_f64_value(),
            density_aware: self.density_aware,
            layers: self.layers.clone(),
            head: self.head,
            fc_widths: self.fc_widths.clone(),
            activation: self.activation,
            classes: self.classes,
            parts: self.parts,
            seed: self.seed,
        }
    }

    /// Rebuilds from the serializable form, revalidating the grid.
    pub fn from_data(data: &ModelConfigData) -> Result<Self, NetError> {
        let grid = GridSpec::new(data.bandwidth, data.h_res, T::of(data.delta))
            .map_err(NetError::Grid)?;
        Ok(Self {
            grid,
            density_aware: data.density_aware,
            layers: data.layers.clone(),
            head: data.head,
            fc_widths: data.fc_widths.clone(),
            activation: data.activation,
            classes: data.classes,
            parts: data.parts,
            seed: data.seed,
        })
    }

    fn head_outputs(&self) -> usize {
        match self.head {
            HeadKind::Classification => self.classes,
            HeadKind::Segmentation => self.parts,
        }
    }

    fn validate(&self) -> Result<(), NetError> {
        if self.layers.is_empty() {
            return Err(NetError::BadConfig("at least one layer required".into()));
        }
        let b = self.grid.bandwidth();
        let mut prev = b;
        for (idx, layer) in self.layers.iter().enumerate() {
            if layer.channels == 0 {
                return Err(NetError::BadConfig(format!(
                    "layer {idx} has zero channels"
                )));
            }
            if layer.bandwidth == 0 || layer.bandwidth > b {
                return Err(NetError::BadConfig(format!(
                    "layer {idx} bandwidth {} outside 1..={b}",
                    layer.bandwidth
                )));
            }
            if layer.bandwidth > prev {
                return Err(NetError::BadConfig(format!(
                    "layer {idx} bandwidth {} exceeds previous {prev}; \
                     truncation can only shrink the band",
                    layer.bandwidth
                )));
            }
            prev = layer.bandwidth;
        }
        if self.fc_widths.iter().any(|&w| w == 0) {
            return Err(NetError::BadConfig("zero-width FC layer".into()));
        }
        if self.classes == 0 || self.parts == 0 {
            return Err(NetError::BadConfig(
                "class and part counts must be positive".into(),
            ));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Layers
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
struct DenseLayer<T> {
    weight: Vec<T>, // out x in, row-major
    bias: Vec<T>,   // out
    in_dim: usize,
    out_dim: usize,
}

impl<T: Real> DenseLayer<T> {
    fn forward(&self, input: &[T], rows: usize) -> Vec<T> {
        debug_assert_eq!(input.len(), rows * self.in_dim);
        let mut out = vec![T::zero(); rows * self.out_dim];
        for r in 0..rows {
            let x = &input[r * self.in_dim..(r + 1) * self.in_dim];
            let y = &mut out[r * self.out_dim..(r + 1) * self.out_dim];
            for (o, y_o) in y.iter_mut().enumerate() {
                let w = &self.weight[o * self.in_dim..(o + 1) * self.in_dim];
                let mut acc = self.bias[o];
                for (wi, xi) in w.iter().zip(x) {
                    acc += *wi * *xi;
                }
                *y_o = acc;
            }
        }
        out
    }
}

fn relu_in_place<T: Real>(data: &mut [T]) -> Vec<bool> {
    let mut mask = vec![false; data.len()];
    for (v, m) in data.iter_mut().zip(mask.iter_mut()) {
        if *v > T::zero() {
            *m = true;
        } else {
            *v = T::zero();
        }
    }
    mask
}

// ---------------------------------------------------------------------------
// Tape
// ---------------------------------------------------------------------------

enum TapeOp<T> {
    Svc {
        layer: usize,
        input: SphericalVoxelGrid<T>,
    },
    ReluGrid {
        mask: Vec<bool>,
    },
    MaxPool {
        arg: Vec<usize>,
        spec: GridSpec<T>,
        channels: usize,
    },
    Sample {
        coords: Vec<SphCoord<T>>,
        spec: GridSpec<T>,
        channels: usize,
    },
    Dense {
        layer: usize,
        input: Vec<T>,
        rows: usize,
    },
    ReluFlat {
        mask: Vec<bool>,
    },
}

/// Ordered record of the primitive operations a forward pass executed,
/// together with the saved inputs their adjoints need. Replaying it in
/// reverse ([`Model::backward`]) produces the gradient of every trainable
/// parameter exactly once, because each parameter is used by exactly one
/// recorded operation per pass.
pub struct Tape<T> {
    ops: Vec<TapeOp<T>>,
}

impl<T> Tape<T> {
    /// An empty tape to pass to a recording forward pass.
    pub fn new() -> Self {
        Self { ops: Vec::new() }
    }
}

impl<T> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

enum Cot<T> {
    Grid(SphericalVoxelGrid<T>),
    Flat(Vec<T>),
}

// ---------------------------------------------------------------------------
// Model
// ---------------------------------------------------------------------------

/// Scale constant for kernel initialization, chosen so that one convolution
/// layer roughly preserves the root-mean-square magnitude of a typical voxel
/// signal. The spectral contraction weighs each kernel site by its quadrature
/// cell mass (which shrinks like bandwidth^-3); the 2B ring columns
/// accumulate coherently (a factor B^2 after mass) while the one-layer-thick
/// depth profile spreads incoherently over the lifted axis (a further
/// sqrt(2B)), so unit-variance ring kernels attenuate the signal by about
/// 7 / (B^2 sqrt(2B)). The initializer undoes that growth law, scaled by
/// 1/sqrt(c_in) so wider inputs do not inflate sums; this constant is the
/// residual factor, fit on measured layer gains at bandwidths 4, 8, and 16
/// (inverse gains 5.7, 37, 207 against B^2 sqrt(2B) = 45, 256, 1448).
const KERNEL_INIT_GAIN: f64 = 1.0 / 7.0;

/// A trainable convolution stack with one of the two heads.
pub struct Model<T: Real> {
    config: ModelConfig<T>,
    kernels: Vec<SvcKernel<T>>,
    fcs: Vec<DenseLayer<T>>,
    fft: So3Fft<T>,
}

impl<T: Real> Model<T> {
    /// Builds a model with deterministic random initialization from the
    /// config seed.
    pub fn new(config: ModelConfig<T>) -> Result<Self, NetError> {
        config.validate()?;
        let b = config.grid.bandwidth();
        let k_res = config.grid.h_res();
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut kernels = Vec::with_capacity(config.layers.len());
        let mut c_in = 1usize;
        for layer in &config.layers {
            let mut kernel = SvcKernel::new_ring(b, k_res, c_in, layer.channels);
            let sites_per_filter = kernel.param_count() / (c_in * layer.channels);
            let scale = T::of(
                KERNEL_INIT_GAIN
                    * (b * b) as f64
                    * (sites_per_filter as f64 / c_in as f64).sqrt(),
            );
            let values: Vec<T> = (0..kernel.param_count())
                .map(|_| T::of(rng.gen_range(-1.0..1.0)) * scale)
                .collect();
            kernel
                .set_params(&values)
                .expect("fresh kernel accepts its own parameter count");
            kernels.push(kernel);
            c_in = layer.channels;
        }
        let mut dims = vec![c_in];
        dims.extend_from_slice(&config.fc_widths);
        dims.push(config.head_outputs());
        let mut fcs = Vec::with_capacity(dims.len() - 1);
        for w in dims.windows(2) {
            let (din, dout) = (w[0], w[1]);
            let scale = (6.0 / (din + dout) as f64).sqrt();
            let weight: Vec<T> = (0..din * dout)
                .map(|_| T::of(rng.gen_range(-scale..scale)))
                .collect();
            fcs.push(DenseLayer {
                weight,
                bias: vec![T::zero(); dout],
                in_dim: din,
                out_dim: dout,
            });
        }
        let fft = So3Fft::new(b);
        Ok(Self {
            config,
            kernels,
            fcs,
            fft,
        })
    }

    pub fn config(&self) -> &ModelConfig<T> {
        &self.config
    }

    pub fn fft(&self) -> &So3Fft<T> {
        &self.fft
    }

    /// Total number of trainable parameters.
    pub fn param_count(&self) -> usize {
        self.kernels
            .iter()
            .map(|k| k.param_count())
            .sum::<usize>()
            + self
                .fcs
                .iter()
                .map(|f| f.weight.len() + f.bias.len())
                .sum::<usize>()
    }

    /// All trainable parameters as one flat vector: kernel banks in layer
    /// order, then each dense layer's weights followed by its biases.
    pub fn params(&self) -> Vec<T> {
        let mut out = Vec::with_capacity(self.param_count());
        for k in &self.kernels {
            out.extend_from_slice(&k.params());
        }
        for f in &self.fcs {
            out.extend_from_slice(&f.weight);
            out.extend_from_slice(&f.bias);
        }
        out
    }

    /// Writes a flat vector from [`Self::params`] back into the model.
    pub fn set_params(&mut self, flat: &[T]) -> Result<(), NetError> {
        if flat.len() != self.param_count() {
            return Err(NetError::BadParamCount {
                got: flat.len(),
                want: self.param_count(),
            });
        }
        let mut cursor = 0usize;
        for k in &mut self.kernels {
            let n = k.param_count();
            k.set_params(&flat[cursor..cursor + n])?;
            cursor += n;
        }
        for f in &mut self.fcs {
            let wn = f.weight.len();
            f.weight.copy_from_slice(&flat[cursor..cursor + wn]);
            cursor += wn;
            let bn = f.bias.len();
            f.bias.copy_from_slice(&flat[cursor..cursor + bn]);
            cursor += bn;
        }
        Ok(())
    }

    /// Voxelizes a normalized cloud with the model's grid settings.
    pub fn voxelize(&self, cloud: &PointCloud<T>) -> Result<SphericalVoxelGrid<T>, NetError> {
        Ok(build_signal(
            cloud,
            &self.config.grid,
            self.config.density_aware,
        )?)
    }

    /// Coefficients of every kernel filter, per layer, for reuse across the
    /// forward passes of one parameter state.
    pub fn kernel_spectra(&self) -> Result<Vec<Vec<So3Spectrum<T>>>, NetError> {
        self.kernels
            .iter()
            .map(|k| k.spectra(&self.fft).map_err(NetError::Svc))
            .collect()
    }

    fn stack_forward(
        &self,
        grid: &SphericalVoxelGrid<T>,
        spectra: Option<&[Vec<So3Spectrum<T>>]>,
        mut tape: Option<&mut Tape<T>>,
    ) -> Result<SphericalVoxelGrid<T>, NetError> {
        let mut current = grid.clone();
        for (idx, kernel) in self.kernels.iter().enumerate() {
            let band = self.config.layers[idx].bandwidth;
            let mut next = match spectra {
                Some(all) => svc_forward_with_spectra_limited(
                    &current, kernel, &all[idx], &self.fft, band,
                )?,
                None => svc_forward_limited(&current, kernel, &self.fft, band)?,
            };
            if let Some(t) = tape.as_deref_mut() {
                t.ops.push(TapeOp::Svc {
                    layer: idx,
                    input: current,
                });
            }
            let mask = relu_in_place(next.data_mut());
            if let Some(t) = tape.as_deref_mut() {
                t.ops.push(TapeOp::ReluGrid { mask });
            }
            current = next;
        }
        Ok(current)
    }

    fn fc_forward(
        &self,
        mut flat: Vec<T>,
        rows: usize,
        mut tape: Option<&mut Tape<T>>,
    ) -> Vec<T> {
        let last = self.fcs.len() - 1;
        for (idx, fc) in self.fcs.iter().enumerate() {
            let out = fc.forward(&flat, rows);
            if let Some(t) = tape.as_deref_mut() {
                t.ops.push(TapeOp::Dense {
                    layer: idx,
                    input: flat,
                    rows,
                });
            }
            flat = out;
            if idx != last {
                let mask = relu_in_place(&mut flat);
                if let Some(t) = tape.as_deref_mut() {
                    t.ops.push(TapeOp::ReluFlat { mask });
                }
            }
        }
        flat
    }

    /// Class logits from a prepared voxel grid; records onto `tape` when
    /// given one. `spectra` short-circuits kernel analysis when the caller
    /// has cached [`Self::kernel_spectra`].
    pub fn forward_grid_classification(
        &self,
        grid: &SphericalVoxelGrid<T>,
        spectra: Option<&[Vec<So3Spectrum<T>>]>,
        mut tape: Option<&mut Tape<T>>,
    ) -> Result<Vec<T>, NetError> {
        if self.config.head != HeadKind::Classification {
            return Err(NetError::HeadMismatch {
                required: HeadKind::Classification,
                actual: self.config.head,
            });
        }
        let features = self.stack_forward(grid, spectra, tape.as_deref_mut())?;
        let count = features.spec().voxel_count();
        let channels = features.channels();
        let mut pooled = vec![T::zero(); channels];
        let mut arg = vec![0usize; channels];
        for c in 0..channels {
            let slice = &features.data()[c * count..(c + 1) * count];
            let (mut best, mut best_at) = (slice[0], 0usize);
            for (s, v) in slice.iter().enumerate().skip(1) {
                if *v > best {
                    best = *v;
                    best_at = s;
                }
            }
            pooled[c] = best;
            arg[c] = best_at;
        }
        if let Some(t) = tape.as_deref_mut() {
            t.ops.push(TapeOp::MaxPool {
                arg,
                spec: *features.spec(),
                channels,
            });
        }
        Ok(self.fc_forward(pooled, 1, tape))
    }

    /// Per-point part logits (`N x parts`, row-major) from a prepared grid
    /// and the points' spherical coordinates.
    pub fn forward_grid_segmentation(
        &self,
        grid: &SphericalVoxelGrid<T>,
        coords: &[SphCoord<T>],
        spectra: Option<&[Vec<So3Spectrum<T>>]>,
        mut tape: Option<&mut Tape<T>>,
    ) -> Result<Vec<T>, NetError> {
        if self.config.head != HeadKind::Segmentation {
            return Err(NetError::HeadMismatch {
                required: HeadKind::Segmentation,
                actual: self.config.head,
            });
        }
        let features = self.stack_forward(grid, spectra, tape.as_deref_mut())?;
        let per_point = trilinear_sample_sph(&features, coords);
        if let Some(t) = tape.as_deref_mut() {
            t.ops.push(TapeOp::Sample {
                coords: coords.to_vec(),
                spec: *features.spec(),
                channels: features.channels(),
            });
        }
        Ok(self.fc_forward(per_point, coords.len(), tape))
    }

    /// Class logits for a normalized cloud.
    pub fn forward_classification(&self, cloud: &PointCloud<T>) -> Result<Vec<T>, NetError> {
        let grid = self.voxelize(cloud)?;
        self.forward_grid_classification(&grid, None, None)
    }

    /// Per-point part logits (`N x parts`, row-major) for a normalized cloud.
    pub fn forward_segmentation(&self, cloud: &PointCloud<T>) -> Result<Vec<T>, NetError> {
        let grid = self.voxelize(cloud)?;
        let coords: Vec<SphCoord<T>> = cloud.points.iter().map(cart_to_sph).collect();
        self.forward_grid_segmentation(&grid, &coords, None, None)
    }

    /// Width of the per-point feature that feeds the final dense layer; this
    /// is the descriptor dimension used for correspondence search.
    pub fn penultimate_dim(&self) -> usize {
        self.fcs.last().expect("at least the logits layer").in_dim
    }

    /// Per-point features (`N x penultimate_dim`, row-major) taken right
    /// before the final dense layer of a segmentation model: the sampled
    /// convolution channels pushed through every hidden dense layer and its
    /// activation, but not the logits map.
    pub fn penultimate_features(&self, cloud: &PointCloud<T>) -> Result<Vec<T>, NetError> {
        if self.config.head != HeadKind::Segmentation {
            return Err(NetError::HeadMismatch {
                required: HeadKind::Segmentation,
                actual: self.config.head,
            });
        }
        let grid = self.voxelize(cloud)?;
        let coords: Vec<SphCoord<T>> = cloud.points.iter().map(cart_to_sph).collect();
        let features = self.stack_forward(&grid, None, None)?;
        let mut flat = trilinear_sample_sph(&features, &coords);
        for fc in &self.fcs[..self.fcs.len() - 1] {
            flat = fc.forward(&flat, coords.len());
            relu_in_place(&mut flat);
        }
        Ok(flat)
    }

    fn param_offsets(&self) -> (Vec<usize>, Vec<(usize, usize)>) {
        let mut kernel_offsets = Vec::with_capacity(self.kernels.len());
        let mut cursor = 0usize;
        for k in &self.kernels {
            kernel_offsets.push(cursor);
            cursor += k.param_count();
        }
        let mut fc_offsets = Vec::with_capacity(self.fcs.len());
        for f in &self.fcs {
            let w = cursor;
            cursor += f.weight.len();
            let b = cursor;
            cursor += f.bias.len();
            fc_offsets.push((w, b));
        }
        (kernel_offsets, fc_offsets)
    }

    /// Replays a recorded forward pass in reverse, returning the gradient of
    /// the scalar whose logit cotangent is given, flattened in
    /// [`Self::params`] order.
    pub fn backward(&self, tape: &Tape<T>, logit_cotangent: &[T]) -> Result<Vec<T>, NetError> {
        let (kernel_offsets, fc_offsets) = self.param_offsets();
        let mut grads = vec![T::zero(); self.param_count()];
        let mut cot = Cot::Flat(logit_cotangent.to_vec());
        for op in tape.ops.iter().rev() {
            cot = match (op, cot) {
                (TapeOp::ReluFlat { mask }, Cot::Flat(mut v)) => {
                    for (x, m) in v.iter_mut().zip(mask) {
                        if !*m {
                            *x = T::zero();
                        }
                    }
                    Cot::Flat(v)
                }
                (TapeOp::Dense { layer, input, rows }, Cot::Flat(v)) => {
                    let fc = &self.fcs[*layer];
                    let (w_off, b_off) = fc_offsets[*layer];
                    let mut down = vec![T::zero(); rows * fc.in_dim];
                    for r in 0..*rows {
                        let c = &v[r * fc.out_dim..(r + 1) * fc.out_dim];
                        let x = &input[r * fc.in_dim..(r + 1) * fc.in_dim];
                        for (o, c_o) in c.iter().enumerate() {
                            grads[b_off + o] += *c_o;
                            let g = &mut grads[w_off + o * fc.in_dim..w_off + (o + 1) * fc.in_dim];
                            for (gi, xi) in g.iter_mut().zip(x) {
                                *gi += *c_o * *xi;
                            }
                            let w = &fc.weight[o * fc.in_dim..(o + 1) * fc.in_dim];
                            let d = &mut down[r * fc.in_dim..(r + 1) * fc.in_dim];
                            for (di, wi) in d.iter_mut().zip(w) {
                                *di += *c_o * *wi;
                            }
                        }
                    }
                    Cot::Flat(down)
                }
                (
                    TapeOp::MaxPool {
                        arg,
                        spec,
                        channels,
                    },
                    Cot::Flat(v),
                ) => {
                    let mut grid = SphericalVoxelGrid::zeros(*spec, *channels);
                    let count = spec.voxel_count();
                    for c in 0..*channels {
                        grid.data_mut()[c * count + arg[c]] = v[c];
                    }
                    Cot::Grid(grid)
                }
                (
                    TapeOp::Sample {
                        coords,
                        spec,
                        channels,
                    },
                    Cot::Flat(v),
                ) => Cot::Grid(trilinear_backward_sph(spec, *channels, coords, &v)?),
                (TapeOp::ReluGrid { mask }, Cot::Grid(mut g)) => {
                    for (x, m) in g.data_mut().iter_mut().zip(mask) {
                        if !*m {
                            *x = T::zero();
                        }
                    }
                    Cot::Grid(g)
                }
                (TapeOp::Svc { layer, input }, Cot::Grid(g)) => {
                    let band = self.config.layers[*layer].bandwidth;
                    let (grad_grid, grad_kernel) =
                        svc_backward_limited(input, &self.kernels[*layer], &g, &self.fft, band)?;
                    let off = kernel_offsets[*layer];
                    for (dst, src) in grads[off..off + grad_kernel.param_count()]
                        .iter_mut()
                        .zip(grad_kernel.params())
                    {
                        *dst += src;
                    }
                    Cot::Grid(grad_grid)
                }
                _ => {
                    unreachable!("tape record does not match the cotangent kind")
                }
            };
        }
        Ok(grads)
    }
}

// ---------------------------------------------------------------------------
// Loss
// ---------------------------------------------------------------------------

/// Mean softmax cross-entropy over rows, with the logit cotangent of that
/// mean. `logits` is `rows x classes` row-major; one target class per row.
pub fn softmax_cross_entropy<T: Real>(
    logits: &[T],
    classes: usize,
    targets: &[usize],
) -> (T, Vec<T>) {
    let rows = targets.len();
    assert_eq!(logits.len(), rows * classes, "logit shape");
    let mut loss = T::zero();
    let mut cot = vec![T::zero(); logits.len()];
    let inv_rows = T::one() / T::of_usize(rows);
    for (r, &target) in targets.iter().enumerate() {
        let row = &logits[r * classes..(r + 1) * classes];
        let m = row.iter().fold(row[0], |a, b| a.max(*b));
        let mut z = T::zero();
        for v in row {
            z += (*v - m).exp();
        }
        loss += (z.ln() - (row[target] - m)) * inv_rows;
        let c = &mut cot[r * classes..(r + 1) * classes];
        for (o, v) in row.iter().enumerate() {
            let p = (*v - m).exp() / z;
            c[o] = (p - if o == target { T::one() } else { T::zero() }) * inv_rows;
        }
    }
    (loss, cot)
}

// ---------------------------------------------------------------------------
// Optimizer
// ---------------------------------------------------------------------------

/// Adam settings plus the stepped learning-rate schedule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamParams<T> {
    pub lr: T,
    pub beta1: T,
    pub beta2: T,
    pub eps: T,
    /// The learning rate is multiplied by `decay_factor` every
    /// `decay_every` epochs.
    pub decay_every: usize,
    pub decay_factor: T,
}

impl<T: Real> Default for AdamParams<T> {
    fn default() -> Self {
        Self {
            lr: T::of(0.01),
            beta1: T::of(0.9),
            beta2: T::of(0.999),
            eps: T::of(1e-8),
            decay_every: 5,
            decay_factor: T::of(0.5),
        }
    }
}

/// First-order moment-tracking optimizer state over a flat parameter vector.
pub struct Adam<T> {
    m: Vec<T>,
    v: Vec<T>,
    t: u32,
    params: AdamParams<T>,
}

impl<T: Real> Adam<T> {
    pub fn new(dim: usize, params: AdamParams<T>) -> Self {
        Self {
            m: vec![T::zero(); dim],
            v: vec![T::zero(); dim],
            t: 0,
            params,
        }
    }

    /// One update with the given learning rate (the caller applies the epoch
    /// schedule).
    pub fn step(&mut self, lr: T, weights: &mut [T], grads: &[T]) {
        assert_eq!(weights.len(), self.m.len());
        assert_eq!(grads.len(), self.m.len());
        self.t += 1;
        let t = T::of(f64::from(self.t));
        let b1 = self.params.beta1;
        let b2 = self.params.beta2;
        let corr1 = T::one() - b1.powf(t);
        let corr2 = T::one() - b2.powf(t);
        for i in 0..weights.len() {
            self.m[i] = b1 * self.m[i] + (T::one() - b1) * grads[i];
            self.v[i] = b2 * self.v[i] + (T::one() - b2) * grads[i] * grads[i];
            let mh = self.m[i] / corr1;
            let vh = self.v[i] / corr2;
            weights[i] -= lr * mh / (vh.sqrt() + self.params.eps);
        }
    }
}

// ---------------------------------------------------------------------------
// Datasets
// ---------------------------------------------------------------------------

/// One labeled cloud: per-point part labels ride inside the cloud.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample<T> {
    pub cloud: PointCloud<T>,
    pub class: usize,
}

/// A generated labeled dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDataset<T> {
    pub samples: Vec<Sample<T>>,
    pub classes: usize,
    /// Number of parts per class family (global part labels are drawn from
    /// `0..max`).
    pub parts_per_class: Vec<usize>,
}

impl<T> SyntheticDataset<T> {
    /// The size of the global part-label space.
    pub fn max_parts(&self) -> usize {
        self.parts_per_class.iter().copied().max().unwrap_or(0)
    }
}

/// Generation settings for [`gen_synthetic_dataset`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DatasetParams {
    pub per_class: usize,
    pub points: usize,
    /// Standard deviation of optional Gaussian jitter (0 disables it).
    pub noise_sigma: f64,
}

impl Default for DatasetParams {
    fn default() -> Self {
        Self {
            per_class: 8,
            points: 512,
            noise_sigma: 0.0,
        }
    }
}

/// Splits `total` into integer counts proportional to `weights` (largest
/// remainder; deterministic).
fn allocate_counts(total: usize, weights: &[f64]) -> Vec<usize> {
    let sum: f64 = weights.iter().sum();
    let quotas: Vec<f64> = weights
        .iter()
        .map(|w| w / sum * total as f64)
        .collect();
    let mut counts: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = quotas[a] - quotas[a].floor();
        let fb = quotas[b] - quotas[b].floor();
        fb.partial_cmp(&fa).unwrap().then(a.cmp(&b))
    });
    for i in 0..total - assigned {
        counts[order[i % order.len()]] += 1;
    }
    counts
}

fn gen_cylinder<T: Real>(rng: &mut ChaCha8Rng, n: usize) -> (Vec<Point3<T>>, Vec<usize>) {
    let r = rng.gen_range(0.3..0.5);
    let height = rng.gen_range(1.0..1.6);
    let side = std::f64::consts::TAU * r * height;
    let cap = std::f64::consts::PI * r * r;
    let counts = allocate_counts(n, &[side, cap, cap]);
    let mut points = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for (part, &count) in counts.iter().enumerate() {
        for _ in 0..count {
            let phi = rng.gen_range(0.0..std::f64::consts::TAU);
            let p = match part {
                0 => {
                    let z = rng.gen_range(-height / 2.0..height / 2.0);
                    [r * phi.cos(), r * phi.sin(), z]
                }
                1 | 2 => {
                    let rho = r * rng.gen_range(0.0f64..1.0).sqrt();
                    let z = if part == 1 { height / 2.0 } else { -height / 2.0 };
                    [rho * phi.cos(), rho * phi.sin(), z]
                }
                _ => unreachable!(),
            };
            points.push(Point3::new(T::of(p[0]), T::of(p[1]), T::of(p[2])));
            labels.push(part);
        }
    }
    (points, labels)
}

fn gen_box<T: Real>(rng: &mut ChaCha8Rng, n: usize) -> (Vec<Point3<T>>, Vec<usize>) {
    let a = rng.gen_range(0.4..0.7);
    let b = rng.gen_range(0.4..0.7);
    let c = rng.gen_range(0.4..0.7);
    // Opposite faces share a part: the three axis pairs.
    let areas = [8.0 * b * c, 8.0 * a * c, 8.0 * a * b];
    let counts = allocate_counts(n, &areas);
    let half = [a, b, c];
    let mut points = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for (part, &count) in counts.iter().enumerate() {
        for _ in 0..count {
            let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
            let u = rng.gen_range(-1.0f64..1.0);
            let v = rng.gen_range(-1.0f64..1.0);
            let mut p = [0.0f64; 3];
            p[part] = sign * half[part];
            let (u_axis, v_axis) = ((part + 1) % 3, (part + 2) % 3);
            p[u_axis] = u * half[u_axis];
            p[v_axis] = v * half[v_axis];
            points.push(Point3::new(T::of(p[0]), T::of(p[1]), T::of(p[2])));
            labels.push(part);
        }
    }
    (points, labels)
}

fn gen_cone<T: Real>(rng: &mut ChaCha8Rng, n: usize) -> (Vec<Point3<T>>, Vec<usize>) {
    let r: f64 = rng.gen_range(0.4..0.6);
    let h: f64 = rng.gen_range(0.9..1.4);
    let slant = (r * r + h * h).sqrt();
    let lateral = std::f64::consts::PI * r * slant;
    let base = std::f64::consts::PI * r * r;
    let counts = allocate_counts(n, &[lateral, base]);
    let mut points = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for (part, &count) in counts.iter().enumerate() {
        for _ in 0..count {
            let phi = rng.gen_range(0.0..std::f64::consts::TAU);
            let p = match part {
                0 => {
                    // Distance from the apex along the slant, area-uniform.
                    let t = slant * rng.gen_range(0.0f64..1.0).sqrt();
                    let rho = r * t / slant;
                    let z = h * (1.0 - t / slant);
                    [rho * phi.cos(), rho * phi.sin(), z]
                }
                1 => {
                    let rho = r * rng.gen_range(0.0f64..1.0).sqrt();
                    [rho * phi.cos(), rho * phi.sin(), 0.0]
                }
                _ => unreachable!(),
            };
            points.push(Point3::new(T::of(p[0]), T::of(p[1]), T::of(p[2])));
            labels.push(part);
        }
    }
    (points, labels)
}

fn gen_torus_segment<T: Real>(rng: &mut ChaCha8Rng, n: usize) -> (Vec<Point3<T>>, Vec<usize>) {
    let big = rng.gen_range(0.6..0.8);
    let small = rng.gen_range(0.15..0.25);
    let arc = rng.gen_range(std::f64::consts::PI..1.5 * std::f64::consts::PI);
    // The two halves of the arc have equal area; sample within each half.
    let counts = allocate_counts(n, &[1.0, 1.0]);
    let mut points = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for (part, &count) in counts.iter().enumerate() {
        let (u_lo, u_hi) = if part == 0 {
            (0.0, arc / 2.0)
        } else {
            (arc / 2.0, arc)
        };
        for _ in 0..count {
            let u = rng.gen_range(u_lo..u_hi);
            // Tube angle with density proportional to the local area element.
            let v = loop {
                let cand = rng.gen_range(0.0..std::f64::consts::TAU);
                let accept = (big + small * cand.cos()) / (big + small);
                if rng.gen_range(0.0..1.0) < accept {
                    break cand;
                }
            };
            let ring = big + small * v.cos();
            points.push(Point3::new(
                T::of(ring * u.cos()),
                T::of(ring * u.sin()),
                T::of(small * v.sin()),
            ));
            labels.push(part);
        }
    }
    (points, labels)
}

/// Number of part labels per shape family, indexed by class.
pub const FAMILY_PARTS: [usize; 4] = [3, 3, 2, 2];

/// Generates a class-balanced labeled dataset of four shape families
/// (cylinder, box, cone, torus segment), each sampled uniformly by surface
/// area with analytic part labels, jittered, normalized into the unit ball,
/// and left in its canonical orientation. Deterministic for a fixed seed.
pub fn gen_synthetic_dataset<T: Real>(params: &DatasetParams, seed: u64) -> SyntheticDataset<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut samples = Vec::with_capacity(params.per_class * 4);
    for class in 0..4 {
        for _ in 0..params.per_class {
            let (mut points, labels) = match class {
                0 => gen_cylinder::<T>(&mut rng, params.points),
                1 => gen_box::<T>(&mut rng, params.points),
                2 => gen_cone::<T>(&mut rng, params.points),
                3 => gen_torus_segment::<T>(&mut rng, params.points),
                _ => unreachable!(),
            };
            if params.noise_sigma > 0.0 {
                for p in &mut points {
                    p.x += T::of(params.noise_sigma * standard_normal(&mut rng));
                    p.y += T::of(params.noise_sigma * standard_normal(&mut rng));
                    p.z += T::of(params.noise_sigma * standard_normal(&mut rng));
                }
            }
            let cloud = normalize_cloud(&PointCloud::with_labels(points, labels))
                .expect("generated clouds are non-empty");
            samples.push(Sample { cloud, class });
        }
    }
    SyntheticDataset {
        samples,
        classes: 4,
        parts_per_class: FAMILY_PARTS.to_vec(),
    }
}

fn standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    use rand_distr::{Distribution, StandardNormal};
    <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng)
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

/// Settings for [`train`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainParams<T> {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamParams<T>,
}

impl<T: Real> Default for TrainParams<T> {
    fn default() -> Self {
        Self {
            epochs: 20,
            batch_size: 16,
            adam: AdamParams::default(),
        }
    }
}

/// One epoch's averaged training metrics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochMetrics<T> {
    pub epoch: usize,
    pub lr: T,
    pub loss: T,
    pub accuracy: T,
}

/// Per-epoch log of a training run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport<T> {
    pub epochs: Vec<EpochMetrics<T>>,
}

struct Prepared<T> {
    grid: SphericalVoxelGrid<T>,
    coords: Vec<SphCoord<T>>,
    class: usize,
    parts: Vec<usize>,
}

fn prepare_samples<T: Real>(
    model: &Model<T>,
    dataset: &SyntheticDataset<T>,
) -> Result<Vec<Prepared<T>>, NetError> {
    dataset
        .samples
        .iter()
        .map(|s| {
            let grid = model.voxelize(&s.cloud)?;
            let coords = s.cloud.points.iter().map(cart_to_sph).collect();
            Ok(Prepared {
                grid,
                coords,
                class: s.class,
                parts: s.cloud.labels.clone().unwrap_or_default(),
            })
        })
        .collect()
}

fn sample_loss_grad<T: Real>(
    model: &Model<T>,
    sample: &Prepared<T>,
    spectra: &[Vec<So3Spectrum<T>>],
) -> Result<(T, usize, usize, Vec<T>), NetError> {
    let mut tape = Tape::new();
    match model.config.head {
        HeadKind::Classification => {
            let logits = model.forward_grid_classification(
                &sample.grid,
                Some(spectra),
                Some(&mut tape),
            )?;
            let (loss, cot) =
                softmax_cross_entropy(&logits, model.config.classes, &[sample.class]);
            let hit = usize::from(argmax(&logits) == sample.class);
            let grads = model.backward(&tape, &cot)?;
            Ok((loss, hit, 1, grads))
        }
        HeadKind::Segmentation => {
            let logits = model.forward_grid_segmentation(
                &sample.grid,
                &sample.coords,
                Some(spectra),
                Some(&mut tape),
            )?;
            let parts = model.config.parts;
            let (loss, cot) = softmax_cross_entropy(&logits, parts, &sample.parts);
            let hits = sample
                .parts
                .iter()
                .enumerate()
                .filter(|(p, &label)| argmax(&logits[p * parts..(p + 1) * parts]) == label)
                .count();
            let grads = model.backward(&tape, &cot)?;
            Ok((loss, hits, sample.parts.len(), grads))
        }
    }
}

fn argmax<T: Real>(values: &[T]) -> usize {
    let mut best = 0usize;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Trains in place with mini-batch Adam and the stepped learning-rate decay.
/// Input grids are voxelized once up front (the protocol applies no rotation
/// augmentation, so they never change). Batch members run in parallel;
/// gradient accumulation is in fixed order, so a fixed seed reproduces the
/// parameter trajectory bit for bit. A non-finite loss aborts.
pub fn train<T: Real>(
    model: &mut Model<T>,
    dataset: &SyntheticDataset<T>,
    params: &TrainParams<T>,
) -> Result<TrainReport<T>, NetError> {
    if dataset.samples.is_empty() {
        return Err(NetError::EmptyDataset);
    }
    let prepared = prepare_samples(model, dataset)?;
    let batch = params.batch_size.max(1);
    let mut adam = Adam::new(model.param_count(), params.adam);
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(model.config.seed ^ 0x7261_696e);
    let mut report = TrainReport { epochs: Vec::new() };
    let mut indices: Vec<usize> = (0..prepared.len()).collect();
    for epoch in 0..params.epochs {
        let lr = params.adam.lr
            * params
                .adam
                .decay_factor
                .powi((epoch / params.adam.decay_every.max(1)) as i32);
        indices.shuffle(&mut shuffle_rng);
        let mut epoch_loss = T::zero();
        let mut epoch_hits = 0usize;
        let mut epoch_total = 0usize;
        for (step, chunk) in indices.chunks(batch).enumerate() {
            let spectra = model.kernel_spectra()?;
            let model_ref: &Model<T> = model;
            let results: Result<Vec<_>, NetError> = chunk
                .par_iter()
                .map(|&i| sample_loss_grad(model_ref, &prepared[i], &spectra))
                .collect();
            let results = results?;
            let mut grads = vec![T::zero(); model.param_count()];
            let mut batch_loss = T::zero();
            for (loss, hits, total, g) in &results {
                batch_loss += *loss;
                epoch_hits += hits;
                epoch_total += total;
                for (dst, src) in grads.iter_mut().zip(g) {
                    *dst += *src;
                }
            }
            let inv = T::one() / T::of_usize(chunk.len());
            batch_loss *= inv;
            if !batch_loss.is_finite() {
                return Err(NetError::Diverged {
                    epoch,
                    step,
                    loss: batch_loss.to_f64_value(),
                });
            }
            for g in &mut grads {
                *g *= inv;
            }
            let mut weights = model.params();
            adam.step(lr, &mut weights, &grads);
            model.set_params(&weights)?;
            epoch_loss += batch_loss * T::of_usize(chunk.len());
        }
        report.epochs.push(EpochMetrics {
            epoch,
            lr,
            loss: epoch_loss / T::of_usize(prepared.len()),
            accuracy: T::of_usize(epoch_hits) / T::of_usize(epoch_total.max(1)),
        });
    }
    Ok(report)
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

/// Whether evaluation rotates each sample before the forward pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RotationMode {
    /// Canonical orientation, as generated.
    None,
    /// A fresh uniform random rotation per sample.
    Haar,
}

/// Aggregated evaluation metrics. `accuracy` is instance accuracy for
/// classification models and per-point accuracy for segmentation models;
/// the intersection-over-union averages are segmentation-only.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation<T> {
    pub accuracy: T,
    pub per_class_accuracy: Vec<T>,
    pub miou_instance: Option<T>,
    pub miou_class: Option<T>,
}

/// Mean intersection-over-union of predicted part labels, averaged two ways:
/// per instance (mean of per-instance part-averaged IoU) and per class (the
/// per-instance values grouped and averaged by class first). A part absent
/// from both prediction and truth counts as IoU 1 for its instance.
pub fn miou_from_predictions<T: Real>(
    predictions: &[Vec<usize>],
    truths: &[Vec<usize>],
    classes: &[usize],
    parts_per_class: &[usize],
) -> (T, T) {
    assert_eq!(predictions.len(), truths.len());
    assert_eq!(predictions.len(), classes.len());
    let mut per_instance = Vec::with_capacity(predictions.len());
    for ((pred, truth), &class) in predictions.iter().zip(truths).zip(classes) {
        assert_eq!(pred.len(), truth.len(), "one prediction per point");
        let parts = parts_per_class[class];
        let mut sum = T::zero();
        for part in 0..parts {
            let mut inter = 0usize;
            let mut union = 0usize;
            for (&p, &t) in pred.iter().zip(truth) {
                let in_p = p == part;
                let in_t = t == part;
                if in_p && in_t {
                    inter += 1;
                }
                if in_p || in_t {
                    union += 1;
                }
            }
            sum += if union == 0 {
                T::one()
            } else {
                T::of_usize(inter) / T::of_usize(union)
            };
        }
        per_instance.push((class, sum / T::of_usize(parts)));
    }
    let inst_avg = per_instance
        .iter()
        .map(|(_, v)| *v)
        .fold(T::zero(), |a, b| a + b)
        / T::of_usize(per_instance.len().max(1));
    let n_classes = parts_per_class.len();
    let mut class_sum = vec![T::zero(); n_classes];
    let mut class_count = vec![0usize; n_classes];
    for (class, v) in &per_instance {
        class_sum[*class] += *v;
        class_count[*class] += 1;
    }
    let mut cls_avg = T::zero();
    let mut present = 0usize;
    for (sum, count) in class_sum.iter().zip(&class_count) {
        if *count > 0 {
            cls_avg += *sum / T::of_usize(*count);
            present += 1;
        }
    }
    (inst_avg, cls_avg / T::of_usize(present.max(1)))
}

/// Runs the model over a dataset, optionally rotating every sample by a
/// fresh uniform random rotation first (drawn from a generator seeded with
/// `seed`), and aggregates accuracy and — for segmentation —
/// intersection-over-union.
pub fn evaluate<T: Real>(
    model: &Model<T>,
    dataset: &SyntheticDataset<T>,
    mode: RotationMode,
    seed: u64,
) -> Result<Evaluation<T>, NetError> {
    if dataset.samples.is_empty() {
        return Err(NetError::EmptyDataset);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let spectra = model.kernel_spectra()?;
    let mut hits = 0usize;
    let mut total = 0usize;
    let mut class_hits = vec![0usize; dataset.classes];
    let mut class_total = vec![0usize; dataset.classes];
    let mut predictions = Vec::new();
    let mut truths = Vec::new();
    let mut classes = Vec::new();
    for sample in &dataset.samples {
        let cloud = match mode {
            RotationMode::None => sample.cloud.clone(),
            RotationMode::Haar => {
                let rot = haar_random_rotation(&mut rng);
                apply_rotation(&sample.cloud, &rot)
            }
        };
        let grid = model.voxelize(&cloud)?;
        match model.config.head {
            HeadKind::Classification => {
                let logits =
                    model.forward_grid_classification(&grid, Some(&spectra), None)?;
                let pred = argmax(&logits);
                let hit = usize::from(pred == sample.class);
                hits += hit;
                total += 1;
                class_hits[sample.class] += hit;
                class_total[sample.class] += 1;
            }
            HeadKind::Segmentation => {
                let coords: Vec<SphCoord<T>> =
                    cloud.points.iter().map(cart_to_sph).collect();
                let logits = model.forward_grid_segmentation(
                    &grid,
                    &coords,
                    Some(&spectra),
                    None,
                )?;
                let parts = model.config.parts;
                let labels = cloud
                    .labels
                    .as_ref()
                    .expect("segmentation dataset carries part labels");
                let pred: Vec<usize> = (0..labels.len())
                    .map(|p| argmax(&logits[p * parts..(p + 1) * parts]))
                    .collect();
                let sample_hits = pred
                    .iter()
                    .zip(labels)
                    .filter(|(p, t)| p == t)
                    .count();
                hits += sample_hits;
                total += labels.len();
                class_hits[sample.class] += sample_hits;
                class_total[sample.class] += labels.len();
                predictions.push(pred);
                truths.push(labels.clone());
                classes.push(sample.class);
            }
        }
    }
    let per_class_accuracy = class_hits
        .iter()
        .zip(&class_total)
        .map(|(h, t)| {
            if *t == 0 {
                T::zero()
            } else {
                T::of_usize(*h) / T::of_usize(*t)
            }
        })
        .collect();
    let (miou_instance, miou_class) = if model.config.head == HeadKind::Segmentation {
        let (i, c) = miou_from_predictions::<T>(
            &predictions,
            &truths,
            &classes,
            &dataset.parts_per_class,
        );
        (Some(i), Some(c))
    } else {
        (None, None)
    };
    Ok(Evaluation {
        accuracy: T::of_usize(hits) / T::of_usize(total.max(1)),
        per_class_accuracy,
        miou_instance,
        miou_class,
    })
}
