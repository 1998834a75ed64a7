//! Rotation-robust point-cloud features built from spherical voxelization and
//! SO(3) group convolution.
//!
//! The pipeline has three stages:
//!
//! 1. [`sphgrid::build_signal`] turns a normalized point cloud into a signal on
//!    a spherical voxel grid `S^2 x H` (azimuth x inclination x radius), with an
//!    optional density-aware window that keeps the voxel footprint isotropic in
//!    real space across latitudes.
//! 2. [`svconv::svc_forward`] applies a group convolution over SO(3), computed
//!    spectrally: the radial axis is transferred onto the third Euler angle,
//!    the signal is expanded in Wigner-D matrices, combined with the kernel
//!    per degree, and synthesized back.
//! 3. [`resample::trilinear_sample_sph`] reads per-point features back off the
//!    grid at each input point, so every point receives a feature vector that
//!    is stable under rotations of the input.
//!
//! [`netkit`] adds small trainable heads (classification/segmentation) with
//! reverse-mode gradients, [`matching`] turns per-point features into a
//! descriptor database for correspondence search, and [`io`] holds the binary
//! tensor container and the xyz text format used by the CLI.
//!
//! All numerics are generic over the scalar type via [`scalar::Real`]
//! (implemented for `f32` and `f64`); concrete aliases for the common
//! double-precision instantiations are exported at the crate root.

pub mod geometry;
pub mod harmonics;
pub mod io;
pub mod matching;
pub mod netkit;
pub mod resample;
pub mod scalar;
pub mod sphgrid;
pub mod svconv;

pub use scalar::Real;

/// Double-precision instantiations of the main public types.
pub type Point3F64 = geometry::Point3<f64>;
pub type SphCoordF64 = geometry::SphCoord<f64>;
pub type RotationF64 = geometry::RotationZyz<f64>;
pub type PointCloudF64 = geometry::PointCloud<f64>;
pub type GridSpecF64 = sphgrid::GridSpec<f64>;
pub type VoxelGridF64 = sphgrid::SphericalVoxelGrid<f64>;
pub type So3SignalF64 = harmonics::So3Signal<f64>;
pub type So3SpectrumF64 = harmonics::So3Spectrum<f64>;
pub type SvcKernelF64 = svconv::SvcKernel<f64>;
pub type ModelConfigF64 = netkit::ModelConfig<f64>;
pub type ModelF64 = netkit::Model<f64>;
pub type DescriptorDbF64 = matching::DescriptorDB<f64>;

/// Single-precision instantiations (compile-checked; the tight-tolerance test
/// suite runs on the `f64` aliases).
pub type Point3F32 = geometry::Point3<f32>;
pub type PointCloudF32 = geometry::PointCloud<f32>;
pub type GridSpecF32 = sphgrid::GridSpec<f32>;
pub type VoxelGridF32 = sphgrid::SphericalVoxelGrid<f32>;
