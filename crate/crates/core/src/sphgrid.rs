//! Spherical voxelization of normalized point clouds.
//!
//! The grid discretizes `(alpha, beta, h)` — azimuth, inclination, radius —
//! into `2B x 2B x K` voxels for bandwidth `B` and radial resolution `K`:
//!
//! * `alpha_i = 2πi / (2B)` for `i = 0..2B-1` (periodic),
//! * `beta_j  = π(2j+1) / (4B)` for `j = 0..2B-1` (offset grid: no sample sits
//!   exactly on a pole),
//! * `h_k     = (k + 1/2) / K` for `k = 0..K-1` (cell-centered radii).
//!
//! [`build_signal`] averages a tent profile in `h` over a window around each
//! voxel center. With the density-aware option the `beta` window is scaled by
//! `sin(beta_j)`, which keeps the window's real-space footprint isotropic
//! across latitudes instead of elongated along meridians near the poles.

use thiserror::Error;

use crate::geometry::{cart_to_sph, PointCloud, SphCoord};
use crate::scalar::Real;

/// Grid geometry: bandwidth, radial resolution, and window half-width.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec<T> {
    bandwidth: usize,
    h_res: usize,
    delta: T,
}

/// Errors from grid construction.
#[derive(Debug, Error, PartialEq)]
pub enum GridError {
    #[error("bandwidth must be at least 2, got {0}")]
    BadBandwidth(usize),
    #[error("radial resolution must be at least 1, got {0}")]
    BadHRes(usize),
    #[error("window half-width must lie in (0, 1), got {0}")]
    BadDelta(f64),
    #[error("cloud must be normalized into the unit ball; found point norm {0}")]
    UnnormalizedCloud(f64),
    #[error("operation requires a non-empty point cloud")]
    EmptyCloud,
}

impl<T: Real> GridSpec<T> {
    /// Creates a validated spec: `bandwidth >= 2`, `h_res >= 1`, `delta ∈ (0, 1)`.
    pub fn new(bandwidth: usize, h_res: usize, delta: T) -> Result<Self, GridError> {
        if bandwidth < 2 {
            return Err(GridError::BadBandwidth(bandwidth));
        }
        if h_res < 1 {
            return Err(GridError::BadHRes(h_res));
        }
        if delta <= T::zero() || delta >= T::one() {
            return Err(GridError::BadDelta(delta.to_f64_value()));
        }
        Ok(Self {
            bandwidth,
            h_res,
            delta,
        })
    }

    pub fn bandwidth(&self) -> usize {
        self.bandwidth
    }

    /// Number of samples along each angular axis (`2B`).
    pub fn angular_res(&self) -> usize {
        2 * self.bandwidth
    }

    pub fn h_res(&self) -> usize {
        self.h_res
    }

    pub fn delta(&self) -> T {
        self.delta
    }

    /// Azimuth of column `i`: `2πi / (2B)`.
    pub fn alpha_center(&self, i: usize) -> T {
        T::tau() * T::of_usize(i) / T::of_usize(self.angular_res())
    }

    /// Inclination of ring `j`: `π(2j+1) / (4B)`.
    pub fn beta_center(&self, j: usize) -> T {
        T::PI() * T::of_usize(2 * j + 1) / T::of_usize(4 * self.bandwidth)
    }

    /// Radius of shell `k`: `(k + 1/2) / K`.
    pub fn h_center(&self, k: usize) -> T {
        (T::of_usize(k) + T::of(0.5)) / T::of_usize(self.h_res)
    }

    pub fn voxel_count(&self) -> usize {
        self.angular_res() * self.angular_res() * self.h_res
    }
}

impl<T: Real> Default for GridSpec<T> {
    /// The reference resolution: `B = 32`, `K = 64`, `delta = 1/32`.
    fn default() -> Self {
        Self::new(32, 64, T::of(1.0 / 32.0)).expect("default spec is valid")
    }
}

/// Latitude compensation factor for the density-aware window: `sin(beta)`.
pub fn density_factor<T: Real>(beta: T) -> T {
    beta.sin()
}

/// A real-valued signal on the spherical voxel grid, shape `C x 2B x 2B x K`.
#[derive(Debug, Clone, PartialEq)]
pub struct SphericalVoxelGrid<T> {
    spec: GridSpec<T>,
    channels: usize,
    data: Vec<T>,
}

impl<T: Real> SphericalVoxelGrid<T> {
    pub fn zeros(spec: GridSpec<T>, channels: usize) -> Self {
        Self {
            spec,
            channels,
            data: vec![T::zero(); channels * spec.voxel_count()],
        }
    }

    pub fn spec(&self) -> &GridSpec<T> {
        &self.spec
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    #[inline]
    pub fn index(&self, c: usize, i: usize, j: usize, k: usize) -> usize {
        let a = self.spec.angular_res();
        let kk = self.spec.h_res();
        ((c * a + i) * a + j) * kk + k
    }

    #[inline]
    pub fn at(&self, c: usize, i: usize, j: usize, k: usize) -> T {
        self.data[self.index(c, i, j, k)]
    }

    #[inline]
    pub fn at_mut(&mut self, c: usize, i: usize, j: usize, k: usize) -> &mut T {
        let idx = self.index(c, i, j, k);
        &mut self.data[idx]
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    /// Cyclically shifts the signal along the azimuth axis by `shift` columns
    /// (column `i` of the result reads column `i - shift` of the input).
    pub fn roll_alpha(&self, shift: usize) -> Self {
        let a = self.spec.angular_res();
        let kk = self.spec.h_res();
        let mut out = Self::zeros(self.spec, self.channels);
        for c in 0..self.channels {
            for i in 0..a {
                let src = (i + a - (shift % a)) % a;
                for j in 0..a {
                    for k in 0..kk {
                        *out.at_mut(c, i, j, k) = self.at(c, src, j, k);
                    }
                }
            }
        }
        out
    }
}

/// One `(voxel, tent value)` contribution from a point.
type Contribution<T> = (u32, T);

/// Collects every point-window contribution. Window membership along azimuth
/// is evaluated in index units (`t = alpha·B/π` against integer centers) so
/// that wraparound needs no special cases.
fn gather_contributions<T: Real>(
    coords: &[SphCoord<T>],
    spec: &GridSpec<T>,
    density_aware: bool,
    out: &mut Vec<Contribution<T>>,
) {
    let two_b = spec.angular_res();
    let k_res = spec.h_res();
    let delta = spec.delta();
    let alpha_scale = T::of_usize(spec.bandwidth()) / T::PI(); // index units per radian
    let delta_alpha_idx = delta * alpha_scale;
    let beta_spacing = T::PI() / T::of_usize(two_b);
    let beta_windows: Vec<T> = (0..two_b)
        .map(|j| {
            if density_aware {
                delta * density_factor(spec.beta_center(j))
            } else {
                delta
            }
        })
        .collect();

    for s in coords {
        // Azimuth candidates: integer centers within delta of t, on the circle.
        let t = s.alpha * alpha_scale;
        let i_lo = (t - delta_alpha_idx).ceil().to_f64_value() as i64;
        let i_hi = (t + delta_alpha_idx).floor().to_f64_value() as i64;

        // Inclination candidates: the density-aware window is never wider than
        // delta, so enumerate the delta-superset and filter per ring.
        let jc = s.beta / beta_spacing - T::of(0.5);
        let j_lo = ((jc - delta / beta_spacing).ceil().to_f64_value() as i64).max(0);
        let j_hi =
            ((jc + delta / beta_spacing).floor().to_f64_value() as i64).min(two_b as i64 - 1);

        // Radial candidates.
        let u = s.h * T::of_usize(k_res) - T::of(0.5);
        let k_lo = ((u - delta * T::of_usize(k_res)).ceil().to_f64_value() as i64).max(0);
        let k_hi = ((u + delta * T::of_usize(k_res)).floor().to_f64_value() as i64)
            .min(k_res as i64 - 1);

        for i_raw in i_lo..=i_hi {
            let ti = T::of(i_raw as f64);
            if (t - ti).abs() >= delta_alpha_idx {
                continue;
            }
            let i = i_raw.rem_euclid(two_b as i64) as usize;
            for j in j_lo..=j_hi {
                let j = j as usize;
                if (s.beta - spec.beta_center(j)).abs() >= beta_windows[j] {
                    continue;
                }
                for k in k_lo..=k_hi {
                    let k = k as usize;
                    let dist = (s.h - spec.h_center(k)).abs();
                    if dist >= delta {
                        continue;
                    }
                    let flat = ((i * two_b + j) * k_res + k) as u32;
                    out.push((flat, delta - dist));
                }
            }
        }
    }
}

fn reduce_contributions<T: Real>(
    spec: &GridSpec<T>,
    contributions: &mut Vec<Contribution<T>>,
) -> (SphericalVoxelGrid<T>, Vec<u32>) {
    // Canonical order (voxel, then value) makes the sums independent of point
    // order, so shuffling the input cloud reproduces the grid bit for bit.
    contributions.sort_unstable_by(|a, b| {
        a.0.cmp(&b.0)
            .then_with(|| a.1.partial_cmp(&b.1).expect("tent values are finite"))
    });
    let mut grid = SphericalVoxelGrid::zeros(*spec, 1);
    let mut counts = vec![0u32; spec.voxel_count()];
    let mut pos = 0;
    while pos < contributions.len() {
        let voxel = contributions[pos].0;
        let mut sum = T::zero();
        let mut count = 0u32;
        while pos < contributions.len() && contributions[pos].0 == voxel {
            sum += contributions[pos].1;
            count += 1;
            pos += 1;
        }
        grid.data[voxel as usize] = sum / T::of_usize(count as usize);
        counts[voxel as usize] = count;
    }
    (grid, counts)
}

pub(crate) fn build_signal_with_counts<T: Real>(
    coords: &[SphCoord<T>],
    spec: &GridSpec<T>,
    density_aware: bool,
) -> (SphericalVoxelGrid<T>, Vec<u32>) {
    let mut contributions = Vec::new();
    gather_contributions(coords, spec, density_aware, &mut contributions);
    reduce_contributions(spec, &mut contributions)
}

/// Builds the voxel signal from precomputed spherical coordinates.
///
/// Each voxel holds the window average of the radial tent `delta - |h - h_k|`
/// over the points inside its window; empty windows hold 0. Values therefore
/// lie in `[0, delta]`.
pub fn build_signal_sph<T: Real>(
    coords: &[SphCoord<T>],
    spec: &GridSpec<T>,
    density_aware: bool,
) -> SphericalVoxelGrid<T> {
    build_signal_with_counts(coords, spec, density_aware).0
}

/// Builds the voxel signal from a normalized Cartesian cloud.
///
/// The cloud must already be normalized into the unit ball
/// (see [`crate::geometry::normalize_cloud`]); a point with norm beyond
/// `1 + 1e-9` is rejected.
pub fn build_signal<T: Real>(
    cloud: &PointCloud<T>,
    spec: &GridSpec<T>,
    density_aware: bool,
) -> Result<SphericalVoxelGrid<T>, GridError> {
    if cloud.is_empty() {
        return Err(GridError::EmptyCloud);
    }
    let tol = T::one() + T::of(1e-9);
    let mut coords = Vec::with_capacity(cloud.len());
    for p in &cloud.points {
        let s = cart_to_sph(p);
        if s.h > tol {
            return Err(GridError::UnnormalizedCloud(s.h.to_f64_value()));
        }
        coords.push(s);
    }
    Ok(build_signal_sph(&coords, spec, density_aware))
}

/// Per-ring statistics of a grid signal: for each inclination ring `j`, the
/// mean and population variance of the values over `(i, k)`.
#[derive(Debug, Clone, PartialEq)]
pub struct RingStats<T> {
    pub mean: Vec<T>,
    pub variance: Vec<T>,
}

/// Computes [`RingStats`] for every channel.
pub fn signal_statistics<T: Real>(grid: &SphericalVoxelGrid<T>) -> Vec<RingStats<T>> {
    let a = grid.spec().angular_res();
    let kk = grid.spec().h_res();
    let n = T::of_usize(a * kk);
    (0..grid.channels())
        .map(|c| {
            let mut mean = vec![T::zero(); a];
            let mut variance = vec![T::zero(); a];
            for (j, (mean_j, var_j)) in mean.iter_mut().zip(variance.iter_mut()).enumerate() {
                let mut sum = T::zero();
                let mut sum_sq = T::zero();
                for i in 0..a {
                    for k in 0..kk {
                        let v = grid.at(c, i, j, k);
                        sum += v;
                        sum_sq += v * v;
                    }
                }
                let m = sum / n;
                *mean_j = m;
                *var_j = (sum_sq / n - m * m).max(T::zero());
            }
            RingStats { mean, variance }
        })
        .collect()
}
