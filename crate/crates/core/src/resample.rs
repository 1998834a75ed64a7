//! Per-point feature read-out from the spherical voxel grid.
//!
//! Each point is converted to spherical coordinates and its feature vector is
//! the trilinear blend of the eight surrounding voxel centers: the azimuth
//! axis wraps, while inclination and radius clamp to their outermost centers
//! (the offset inclination grid leaves thin polar caps; clamping is the
//! documented approximation there). The backward pass scatter-adds the same
//! eight weights and visits points in input order, so results are
//! reproducible bit for bit.

use thiserror::Error;

use crate::geometry::{cart_to_sph, PointCloud, SphCoord};
use crate::scalar::Real;
use crate::sphgrid::{GridSpec, SphericalVoxelGrid};

#[derive(Debug, Error, PartialEq)]
pub enum ResampleError {
    #[error("cloud must be normalized into the unit ball; found point norm {0}")]
    UnnormalizedCloud(f64),
    #[error("upstream gradient length {got} does not match points x channels = {want}")]
    BadUpstreamShape { got: usize, want: usize },
}

/// Linear-interpolation stencil `(lower, upper, upper-weight)` for sampling a
/// length-`len` row at continuous index `u`, clamping outside `[0, len-1]`.
pub(crate) fn clamped_lerp<T: Real>(u: T, len: usize) -> (usize, usize, T) {
    if len == 1 {
        return (0, 0, T::zero());
    }
    let max = T::of_usize(len - 1);
    let uc = u.max(T::zero()).min(max);
    let mut lo = uc.floor().to_f64_value() as usize;
    if lo >= len - 1 {
        lo = len - 2;
    }
    (lo, lo + 1, uc - T::of_usize(lo))
}

/// Periodic variant: indices wrap modulo `len`.
pub(crate) fn wrapped_lerp<T: Real>(u: T, len: usize) -> (usize, usize, T) {
    let len_t = T::of_usize(len);
    let mut v = u % len_t;
    if v < T::zero() {
        v += len_t;
    }
    if v >= len_t {
        v = T::zero();
    }
    let lo = (v.floor().to_f64_value() as usize).min(len - 1);
    (lo, (lo + 1) % len, v - T::of_usize(lo))
}

/// The eight-corner stencil of one point: paired indices and 1D weights per
/// axis, in grid index units.
struct Stencil<T> {
    i: [usize; 2],
    j: [usize; 2],
    k: [usize; 2],
    wi: [T; 2],
    wj: [T; 2],
    wk: [T; 2],
}

fn stencil<T: Real>(spec: &GridSpec<T>, s: &SphCoord<T>) -> Stencil<T> {
    let n = spec.angular_res();
    let k_res = spec.h_res();
    // Azimuth centers sit at 2πi/(2B): continuous index u = alpha·2B/(2π).
    let u = s.alpha * T::of_usize(n) / T::tau();
    let (i0, i1, fi) = wrapped_lerp(u, n);
    // Inclination centers sit at π(2j+1)/(4B): index v = beta·2B/π − ½.
    let v = s.beta * T::of_usize(n) / T::PI() - T::of(0.5);
    let (j0, j1, fj) = clamped_lerp(v, n);
    // Radial centers sit at (k+½)/K: index w = h·K − ½.
    let w = s.h * T::of_usize(k_res) - T::of(0.5);
    let (k0, k1, fk) = clamped_lerp(w, k_res);
    Stencil {
        i: [i0, i1],
        j: [j0, j1],
        k: [k0, k1],
        wi: [T::one() - fi, fi],
        wj: [T::one() - fj, fj],
        wk: [T::one() - fk, fk],
    }
}

fn check_normalized<T: Real>(cloud: &PointCloud<T>) -> Result<Vec<SphCoord<T>>, ResampleError> {
    let limit = T::of(1.0 + 1e-9);
    let mut coords = Vec::with_capacity(cloud.points.len());
    for p in &cloud.points {
        let norm = p.norm();
        if norm > limit {
            return Err(ResampleError::UnnormalizedCloud(norm.to_f64_value()));
        }
        coords.push(cart_to_sph(p));
    }
    Ok(coords)
}

/// Reads a `C`-vector for each point, row-major `N x C`. The cloud must
/// already be normalized into the unit ball.
pub fn trilinear_sample<T: Real>(
    grid: &SphericalVoxelGrid<T>,
    cloud: &PointCloud<T>,
) -> Result<Vec<T>, ResampleError> {
    Ok(trilinear_sample_sph(grid, &check_normalized(cloud)?))
}

/// Same as [`trilinear_sample`] but from spherical coordinates directly.
pub fn trilinear_sample_sph<T: Real>(grid: &SphericalVoxelGrid<T>, coords: &[SphCoord<T>]) -> Vec<T> {
    let channels = grid.channels();
    let mut out = vec![T::zero(); coords.len() * channels];
    for (p, s) in coords.iter().enumerate() {
        let st = stencil(grid.spec(), s);
        for c in 0..channels {
            let mut acc = T::zero();
            for a in 0..2 {
                for b in 0..2 {
                    let wab = st.wi[a] * st.wj[b];
                    for d in 0..2 {
                        acc += wab * st.wk[d] * grid.at(c, st.i[a], st.j[b], st.k[d]);
                    }
                }
            }
            out[p * channels + c] = acc;
        }
    }
    out
}

/// Adjoint of [`trilinear_sample`]: scatter-adds each point's upstream
/// gradient row into its eight stencil voxels. `upstream` is row-major
/// `N x channels`.
pub fn trilinear_backward<T: Real>(
    spec: &GridSpec<T>,
    channels: usize,
    cloud: &PointCloud<T>,
    upstream: &[T],
) -> Result<SphericalVoxelGrid<T>, ResampleError> {
    let coords = check_normalized(cloud)?;
    trilinear_backward_sph(spec, channels, &coords, upstream)
}

/// Adjoint of [`trilinear_sample_sph`].
pub fn trilinear_backward_sph<T: Real>(
    spec: &GridSpec<T>,
    channels: usize,
    coords: &[SphCoord<T>],
    upstream: &[T],
) -> Result<SphericalVoxelGrid<T>, ResampleError> {
    if upstream.len() != coords.len() * channels {
        return Err(ResampleError::BadUpstreamShape {
            got: upstream.len(),
            want: coords.len() * channels,
        });
    }
    let mut grad = SphericalVoxelGrid::zeros(*spec, channels);
    for (p, s) in coords.iter().enumerate() {
        let st = stencil(spec, s);
        for c in 0..channels {
            let g = upstream[p * channels + c];
            for a in 0..2 {
                for b in 0..2 {
                    let wab = st.wi[a] * st.wj[b];
                    for d in 0..2 {
                        *grad.at_mut(c, st.i[a], st.j[b], st.k[d]) += wab * st.wk[d] * g;
                    }
                }
            }
        }
    }
    Ok(grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{sph_to_cart, Point3};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn spec(b: usize, k: usize) -> GridSpec<f64> {
        GridSpec::new(b, k, 1.0 / 32.0).unwrap()
    }

    fn random_grid(spec: GridSpec<f64>, channels: usize, seed: u64) -> SphericalVoxelGrid<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut g = SphericalVoxelGrid::zeros(spec, channels);
        for v in g.data_mut() {
            *v = rng.gen_range(-1.0..1.0);
        }
        g
    }

    fn center_coord(spec: &GridSpec<f64>, i: usize, j: usize, k: usize) -> SphCoord<f64> {
        SphCoord {
            alpha: spec.alpha_center(i),
            beta: spec.beta_center(j),
            h: spec.h_center(k),
        }
    }

    #[test]
    fn voxel_center_reads_that_voxel_exactly() {
        let sp = spec(4, 6);
        let grid = random_grid(sp, 3, 1);
        let s = center_coord(&sp, 5, 2, 3);
        let out = trilinear_sample_sph(&grid, &[s]);
        for c in 0..3 {
            assert_eq!(out[c], grid.at(c, 5, 2, 3), "channel {c}");
        }
    }

    #[test]
    fn cartesian_round_trip_at_center_is_tight() {
        let sp = spec(4, 6);
        let grid = random_grid(sp, 2, 2);
        let s = center_coord(&sp, 3, 4, 2);
        let p = sph_to_cart(&s);
        let cloud = PointCloud::new(vec![p]);
        let out = trilinear_sample(&grid, &cloud).unwrap();
        for c in 0..2 {
            assert!((out[c] - grid.at(c, 3, 4, 2)).abs() < 1e-12, "channel {c}");
        }
    }

    #[test]
    fn constant_grid_returns_the_constant_everywhere() {
        let sp = spec(3, 4);
        let mut grid = SphericalVoxelGrid::zeros(sp, 2);
        for (idx, v) in grid.data_mut().iter_mut().enumerate() {
            *v = if idx < sp.voxel_count() { 2.5 } else { -1.25 };
        }
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let coords: Vec<SphCoord<f64>> = (0..64)
            .map(|_| SphCoord {
                alpha: rng.gen_range(0.0..std::f64::consts::TAU),
                beta: rng.gen_range(0.0..std::f64::consts::PI),
                h: rng.gen_range(0.0..1.0),
            })
            .collect();
        let out = trilinear_sample_sph(&grid, &coords);
        for p in 0..64 {
            assert!((out[2 * p] - 2.5).abs() < 1e-12, "point {p} channel 0");
            assert!((out[2 * p + 1] + 1.25).abs() < 1e-12, "point {p} channel 1");
        }
    }

    #[test]
    fn azimuth_midpoint_averages_the_two_neighbors() {
        let sp = spec(4, 4);
        let grid = random_grid(sp, 1, 4);
        let s = SphCoord {
            alpha: (sp.alpha_center(2) + sp.alpha_center(3)) / 2.0,
            beta: sp.beta_center(5),
            h: sp.h_center(1),
        };
        let out = trilinear_sample_sph(&grid, &[s]);
        let want = (grid.at(0, 2, 5, 1) + grid.at(0, 3, 5, 1)) / 2.0;
        assert!((out[0] - want).abs() < 1e-12);
    }

    #[test]
    fn azimuth_interpolation_wraps_across_zero() {
        let sp = spec(4, 4);
        let grid = random_grid(sp, 1, 5);
        let n = sp.angular_res();
        let last = sp.alpha_center(n - 1);
        let s = SphCoord {
            alpha: last + 0.25 * (std::f64::consts::TAU / n as f64),
            beta: sp.beta_center(3),
            h: sp.h_center(2),
        };
        let out = trilinear_sample_sph(&grid, &[s]);
        let want = 0.75 * grid.at(0, n - 1, 3, 2) + 0.25 * grid.at(0, 0, 3, 2);
        assert!((out[0] - want).abs() < 1e-12);
    }

    #[test]
    fn inclination_and_radius_clamp_to_edge_centers() {
        let sp = spec(4, 4);
        let grid = random_grid(sp, 1, 6);
        // Below the first inclination ring and above the last radial center.
        let s = SphCoord {
            alpha: sp.alpha_center(1),
            beta: sp.beta_center(0) / 2.0,
            h: 1.0,
        };
        let out = trilinear_sample_sph(&grid, &[s]);
        assert!((out[0] - grid.at(0, 1, 0, 3)).abs() < 1e-12);
        // Origin: alpha = beta = h = 0 clamps to the first ring and layer.
        let origin = PointCloud::new(vec![Point3::new(0.0f64, 0.0, 0.0)]);
        let out0 = trilinear_sample(&grid, &origin).unwrap();
        assert!((out0[0] - grid.at(0, 0, 0, 0)).abs() < 1e-12);
    }

    #[test]
    fn weights_form_a_partition_of_unity() {
        let sp = spec(5, 7);
        let mut ones = SphericalVoxelGrid::zeros(sp, 1);
        for v in ones.data_mut() {
            *v = 1.0;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let coords: Vec<SphCoord<f64>> = (0..200)
            .map(|_| SphCoord {
                alpha: rng.gen_range(-10.0..10.0),
                beta: rng.gen_range(0.0..std::f64::consts::PI),
                h: rng.gen_range(0.0..1.0),
            })
            .collect();
        for v in trilinear_sample_sph(&ones, &coords) {
            assert!((v - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn linear_in_grid_values() {
        let sp = spec(4, 5);
        let g1 = random_grid(sp, 2, 8);
        let g2 = random_grid(sp, 2, 9);
        let mut sum = g1.clone();
        for (a, b) in sum.data_mut().iter_mut().zip(g2.data()) {
            *a += *b;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let coords: Vec<SphCoord<f64>> = (0..50)
            .map(|_| SphCoord {
                alpha: rng.gen_range(0.0..std::f64::consts::TAU),
                beta: rng.gen_range(0.0..std::f64::consts::PI),
                h: rng.gen_range(0.0..1.0),
            })
            .collect();
        let s1 = trilinear_sample_sph(&g1, &coords);
        let s2 = trilinear_sample_sph(&g2, &coords);
        let ss = trilinear_sample_sph(&sum, &coords);
        for idx in 0..ss.len() {
            assert!((ss[idx] - (s1[idx] + s2[idx])).abs() < 1e-12);
        }
    }

    #[test]
    fn reproduces_trilinear_functions_of_cell_coordinates() {
        // Grid values follow a global trilinear polynomial of the continuous
        // indices; interpolation must reproduce it at off-center points whose
        // stencils avoid the azimuth seam and the clamped boundaries.
        let sp = spec(4, 6);
        let n = sp.angular_res();
        let kr = sp.h_res();
        let coeff = [0.3, -1.1, 0.7, 0.25, -0.4, 0.15, 0.05, -0.2];
        let poly = |u: f64, v: f64, w: f64| {
            coeff[0]
                + coeff[1] * u
                + coeff[2] * v
                + coeff[3] * w
                + coeff[4] * u * v
                + coeff[5] * u * w
                + coeff[6] * v * w
                + coeff[7] * u * v * w
        };
        let mut grid = SphericalVoxelGrid::zeros(sp, 1);
        for i in 0..n {
            for j in 0..n {
                for k in 0..kr {
                    *grid.at_mut(0, i, j, k) = poly(i as f64, j as f64, k as f64);
                }
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let u = rng.gen_range(0.0..(n - 1) as f64);
            let v = rng.gen_range(0.0..(n - 1) as f64);
            let w = rng.gen_range(0.0..(kr - 1) as f64);
            let s = SphCoord {
                alpha: u * std::f64::consts::TAU / n as f64,
                beta: (v + 0.5) * std::f64::consts::PI / n as f64,
                h: (w + 0.5) / kr as f64,
            };
            let got = trilinear_sample_sph(&grid, &[s])[0];
            let want = poly(u, v, w);
            assert!((got - want).abs() < 1e-10, "({u},{v},{w}): {got} vs {want}");
        }
    }

    #[test]
    fn backward_is_the_exact_adjoint() {
        let sp = spec(4, 5);
        let grid = random_grid(sp, 3, 12);
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let coords: Vec<SphCoord<f64>> = (0..40)
            .map(|_| SphCoord {
                alpha: rng.gen_range(0.0..std::f64::consts::TAU),
                beta: rng.gen_range(0.0..std::f64::consts::PI),
                h: rng.gen_range(0.0..1.0),
            })
            .collect();
        let upstream: Vec<f64> = (0..coords.len() * 3).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let sampled = trilinear_sample_sph(&grid, &coords);
        let lhs: f64 = sampled.iter().zip(&upstream).map(|(a, b)| a * b).sum();
        let grad = trilinear_backward_sph(&sp, 3, &coords, &upstream).unwrap();
        let rhs: f64 = grad.data().iter().zip(grid.data()).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10, "{lhs} vs {rhs}");
    }

    #[test]
    fn backward_at_a_center_writes_a_single_one() {
        let sp = spec(4, 4);
        let s = center_coord(&sp, 2, 3, 1);
        let grad = trilinear_backward_sph(&sp, 1, &[s], &[1.0]).unwrap();
        for i in 0..sp.angular_res() {
            for j in 0..sp.angular_res() {
                for k in 0..sp.h_res() {
                    let want = if (i, j, k) == (2, 3, 1) { 1.0 } else { 0.0 };
                    assert_eq!(grad.at(0, i, j, k), want, "({i},{j},{k})");
                }
            }
        }
    }

    #[test]
    fn backward_matches_finite_differences() {
        let sp = spec(3, 4);
        let mut grid = random_grid(sp, 1, 14);
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let coords: Vec<SphCoord<f64>> = (0..16)
            .map(|_| SphCoord {
                alpha: rng.gen_range(0.0..std::f64::consts::TAU),
                beta: rng.gen_range(0.0..std::f64::consts::PI),
                h: rng.gen_range(0.0..1.0),
            })
            .collect();
        let upstream: Vec<f64> = (0..16).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let grad = trilinear_backward_sph(&sp, 1, &coords, &upstream).unwrap();
        let loss = |g: &SphericalVoxelGrid<f64>| -> f64 {
            trilinear_sample_sph(g, &coords)
                .iter()
                .zip(&upstream)
                .map(|(a, b)| a * b)
                .sum()
        };
        let eps = 1e-5;
        for idx in [0usize, 7, 20, 33, 47] {
            let orig = grid.data()[idx];
            grid.data_mut()[idx] = orig + eps;
            let up = loss(&grid);
            grid.data_mut()[idx] = orig - eps;
            let down = loss(&grid);
            grid.data_mut()[idx] = orig;
            let fd = (up - down) / (2.0 * eps);
            let an = grad.data()[idx];
            assert!(
                (fd - an).abs() <= 1e-6 * an.abs().max(1.0),
                "voxel {idx}: fd {fd} analytic {an}"
            );
        }
    }

    #[test]
    fn backward_is_deterministic() {
        let sp = spec(4, 5);
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        let coords: Vec<SphCoord<f64>> = (0..30)
            .map(|_| SphCoord {
                alpha: rng.gen_range(0.0..std::f64::consts::TAU),
                beta: rng.gen_range(0.0..std::f64::consts::PI),
                h: rng.gen_range(0.0..1.0),
            })
            .collect();
        let upstream: Vec<f64> = (0..60).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let a = trilinear_backward_sph(&sp, 2, &coords, &upstream).unwrap();
        let b = trilinear_backward_sph(&sp, 2, &coords, &upstream).unwrap();
        assert_eq!(a.data(), b.data());
    }

    #[test]
    fn rejects_unnormalized_clouds_and_bad_shapes() {
        let sp = spec(3, 4);
        let grid = SphericalVoxelGrid::zeros(sp, 1);
        let cloud = PointCloud::new(vec![Point3::new(1.5f64, 0.0, 0.0)]);
        assert!(matches!(
            trilinear_sample(&grid, &cloud),
            Err(ResampleError::UnnormalizedCloud(_))
        ));
        let s = SphCoord {
            alpha: 0.0,
            beta: 1.0,
            h: 0.5,
        };
        assert_eq!(
            trilinear_backward_sph(&sp, 2, &[s], &[1.0]),
            Err(ResampleError::BadUpstreamShape { got: 1, want: 2 })
        );
    }
}
