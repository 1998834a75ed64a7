//! Group convolution of spherical voxel signals, computed spectrally.
//!
//! A voxel grid channel (azimuth x inclination x radius) is carried onto the
//! Euler grid by identifying the radial coordinate with the third Euler angle
//! (`gamma = 2π·h`); the radius is a distance, not an angle, so that axis is
//! resampled with clamped (non-periodic) linear interpolation. On the Euler
//! grid, convolution with a kernel is one coefficient-matrix product per
//! degree:
//!
//! ```text
//! out[l] = F[l] · Ψ[l]ᴴ
//! ```
//!
//! where `F` and `Ψ` are the Wigner-D coefficients of the signal and kernel.
//! This combination rule is the unique one (among transpose/conjugation
//! placements) that matches the literal quadrature definition
//! `out(P) = Σ_s w(s)·ψ(P⁻¹s)·f(s)`, which [`convolve_reference`] implements
//! directly and a test enforces.
//!
//! Left translation by any rotation commutes with this operator exactly at
//! the coefficient level (matrix associativity); on voxel grids, rotations
//! about the polar axis by whole grid steps act as bit-exact column rolls,
//! while general rotations go through the band-limited representative and the
//! radial resampling, so grid-level equivariance for them improves as the
//! bandwidth grows.

use num_complex::Complex;
use thiserror::Error;

use crate::geometry::{rot_from_zyz, RotationZyz};
use crate::harmonics::{quadrature_weights, wigner_d, So3Fft, So3Signal, So3Spectrum};
use crate::resample::clamped_lerp;
use crate::scalar::Real;
use crate::sphgrid::SphericalVoxelGrid;

#[derive(Debug, Error, PartialEq)]
pub enum SvcError {
    #[error("bandwidth mismatch: {0} vs {1}")]
    BandwidthMismatch(usize, usize),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("masked kernel sites must be zero; site {0} is not")]
    MaskedSiteNonzero(usize),
}

// ---------------------------------------------------------------------------
// Radial-axis transfer between the voxel grid and the Euler grid
// ---------------------------------------------------------------------------

/// Carries one voxel-grid channel slice (layout `(i·2B + j)·K + k`) onto the
/// Euler grid: the sample at `gamma_k = 2πk/(2B)` reads the radial profile at
/// `h = k/(2B)` by clamped linear interpolation between the `K` cell centers.
pub fn lift_channel_data<T: Real>(data: &[T], bandwidth: usize, h_res: usize) -> So3Signal<T> {
    let n = 2 * bandwidth;
    assert_eq!(data.len(), n * n * h_res, "channel slice has the wrong length");
    let mut sig = So3Signal::zeros(bandwidth);
    for k in 0..n {
        let h = T::of_usize(k) / T::of_usize(n);
        let (k0, k1, frac) = clamped_lerp(h * T::of_usize(h_res) - T::of(0.5), h_res);
        let w0 = T::one() - frac;
        for i in 0..n {
            for j in 0..n {
                let base = (i * n + j) * h_res;
                *sig.at_mut(i, j, k) = w0 * data[base + k0] + frac * data[base + k1];
            }
        }
    }
    sig
}

/// One channel of a voxel grid, lifted.
pub fn lift_channel<T: Real>(grid: &SphericalVoxelGrid<T>, channel: usize) -> So3Signal<T> {
    let count = grid.spec().voxel_count();
    lift_channel_data(
        &grid.data()[channel * count..(channel + 1) * count],
        grid.spec().bandwidth(),
        grid.spec().h_res(),
    )
}

/// Transpose of [`lift_channel_data`]: scatters an Euler-grid cotangent back
/// onto the `K` radial centers.
pub fn lift_adjoint<T: Real>(cotangent: &So3Signal<T>, h_res: usize) -> Vec<T> {
    let b = cotangent.bandwidth();
    let n = 2 * b;
    let mut out = vec![T::zero(); n * n * h_res];
    for k in 0..n {
        let h = T::of_usize(k) / T::of_usize(n);
        let (k0, k1, frac) = clamped_lerp(h * T::of_usize(h_res) - T::of(0.5), h_res);
        let w0 = T::one() - frac;
        for i in 0..n {
            for j in 0..n {
                let base = (i * n + j) * h_res;
                let g = cotangent.at(i, j, k);
                out[base + k0] += w0 * g;
                out[base + k1] += frac * g;
            }
        }
    }
    out
}

/// Reads an Euler-grid signal back onto `K` radial centers: the voxel at
/// `h = (k+½)/K` samples the `gamma` axis at `2π·h` by clamped linear
/// interpolation. Returns one channel slice (layout `(i·2B + j)·K + k`).
pub fn unlift_channel<T: Real>(sig: &So3Signal<T>, h_res: usize) -> Vec<T> {
    let b = sig.bandwidth();
    let n = 2 * b;
    let mut out = vec![T::zero(); n * n * h_res];
    for k in 0..h_res {
        let h = (T::of_usize(k) + T::of(0.5)) / T::of_usize(h_res);
        let (g0, g1, frac) = clamped_lerp(h * T::of_usize(n), n);
        let w0 = T::one() - frac;
        for i in 0..n {
            for j in 0..n {
                out[(i * n + j) * h_res + k] = w0 * sig.at(i, j, g0) + frac * sig.at(i, j, g1);
            }
        }
    }
    out
}

/// Transpose of [`unlift_channel`].
pub fn unlift_adjoint<T: Real>(cotangent: &[T], bandwidth: usize, h_res: usize) -> So3Signal<T> {
    let n = 2 * bandwidth;
    assert_eq!(cotangent.len(), n * n * h_res, "cotangent has the wrong length");
    let mut sig = So3Signal::zeros(bandwidth);
    for k in 0..h_res {
        let h = (T::of_usize(k) + T::of(0.5)) / T::of_usize(h_res);
        let (g0, g1, frac) = clamped_lerp(h * T::of_usize(n), n);
        let w0 = T::one() - frac;
        for i in 0..n {
            for j in 0..n {
                let g = cotangent[(i * n + j) * h_res + k];
                *sig.at_mut(i, j, g0) += w0 * g;
                *sig.at_mut(i, j, g1) += frac * g;
            }
        }
    }
    sig
}

// ---------------------------------------------------------------------------
// Per-degree coefficient products
// ---------------------------------------------------------------------------

/// `out[l] += A[l]·B[l]ᴴ` — the production combination rule.
fn accumulate_a_bh<T: Real>(out: &mut So3Spectrum<T>, a: &So3Spectrum<T>, b: &So3Spectrum<T>) {
    for l in 0..out.bandwidth() {
        let dim = 2 * l + 1;
        let (am, bm) = (a.degree(l), b.degree(l));
        let om = out.degree_mut(l);
        for r in 0..dim {
            for c in 0..dim {
                let mut acc = Complex::new(T::zero(), T::zero());
                for q in 0..dim {
                    acc += am[r * dim + q] * bm[c * dim + q].conj();
                }
                om[r * dim + c] += acc;
            }
        }
    }
}

/// `out[l] += A[l]·B[l]` (no conjugation) — cotangent propagation to the
/// signal factor.
fn accumulate_a_b<T: Real>(out: &mut So3Spectrum<T>, a: &So3Spectrum<T>, b: &So3Spectrum<T>) {
    for l in 0..out.bandwidth() {
        let dim = 2 * l + 1;
        let (am, bm) = (a.degree(l), b.degree(l));
        let om = out.degree_mut(l);
        for r in 0..dim {
            for c in 0..dim {
                let mut acc = Complex::new(T::zero(), T::zero());
                for q in 0..dim {
                    acc += am[r * dim + q] * bm[q * dim + c];
                }
                om[r * dim + c] += acc;
            }
        }
    }
}

/// `out[l] += A[l]ᴴ·B[l]` — cotangent propagation to the kernel factor.
fn accumulate_ah_b<T: Real>(out: &mut So3Spectrum<T>, a: &So3Spectrum<T>, b: &So3Spectrum<T>) {
    for l in 0..out.bandwidth() {
        let dim = 2 * l + 1;
        let (am, bm) = (a.degree(l), b.degree(l));
        let om = out.degree_mut(l);
        for r in 0..dim {
            for c in 0..dim {
                let mut acc = Complex::new(T::zero(), T::zero());
                for q in 0..dim {
                    acc += am[q * dim + r].conj() * bm[q * dim + c];
                }
                om[r * dim + c] += acc;
            }
        }
    }
}

/// Coefficient-level convolution: `out[l] = signal[l]·kernel[l]ᴴ`.
pub fn convolve_spectra<T: Real>(
    signal: &So3Spectrum<T>,
    kernel: &So3Spectrum<T>,
) -> Result<So3Spectrum<T>, SvcError> {
    if signal.bandwidth() != kernel.bandwidth() {
        return Err(SvcError::BandwidthMismatch(
            signal.bandwidth(),
            kernel.bandwidth(),
        ));
    }
    let mut out = So3Spectrum::zeros(signal.bandwidth());
    accumulate_a_bh(&mut out, signal, kernel);
    Ok(out)
}

/// Euler-grid convolution through the fast transforms.
pub fn convolve<T: Real>(
    f: &So3Signal<T>,
    psi: &So3Signal<T>,
    fft: &So3Fft<T>,
) -> Result<So3Signal<T>, SvcError> {
    if f.bandwidth() != psi.bandwidth() {
        return Err(SvcError::BandwidthMismatch(f.bandwidth(), psi.bandwidth()));
    }
    if f.bandwidth() != fft.bandwidth() {
        return Err(SvcError::BandwidthMismatch(f.bandwidth(), fft.bandwidth()));
    }
    let spec = convolve_spectra(&fft.forward(f), &fft.forward(psi))?;
    Ok(fft.inverse(&spec))
}

// ---------------------------------------------------------------------------
// Literal-quadrature reference
// ---------------------------------------------------------------------------

/// Coefficients of a signal by the literal analysis sums — no FFT, fresh
/// Wigner-d evaluations — used only by the reference path.
fn direct_coefficients<T: Real>(sig: &So3Signal<T>) -> So3Spectrum<T> {
    let b = sig.bandwidth();
    let n = 2 * b;
    let nu = T::tau() / T::of_usize(n);
    let nu2 = nu * nu;
    let weights = quadrature_weights::<T>(b);
    let mut spec = So3Spectrum::zeros(b);
    for l in 0..b {
        let li = l as i64;
        let dim = 2 * l + 1;
        let d_rows: Vec<Vec<T>> = (0..n)
            .map(|j| {
                let beta = T::PI() * T::of_usize(2 * j + 1) / T::of_usize(4 * b);
                wigner_d::<T>(l, beta)
            })
            .collect();
        for m in -li..=li {
            for nn in -li..=li {
                let mut acc = Complex::new(T::zero(), T::zero());
                for i in 0..n {
                    let alpha = T::tau() * T::of_usize(i) / T::of_usize(n);
                    for j in 0..n {
                        let d = d_rows[j][((m + li) as usize) * dim + (nn + li) as usize];
                        for k in 0..n {
                            let gamma = T::tau() * T::of_usize(k) / T::of_usize(n);
                            let angle = T::of(m as f64) * alpha + T::of(nn as f64) * gamma;
                            let phase = Complex::from_polar(T::one(), angle);
                            acc += phase * (nu2 * weights[j] * d * sig.at(i, j, k));
                        }
                    }
                }
                *spec.entry_mut(l, m, nn) = acc;
            }
        }
    }
    spec
}

/// Brute-force convolution: for every output grid rotation `P`, the weighted
/// sum `Σ_s w(s)·ψ(P⁻¹s)·f(s)` over all grid rotations `s`, with `ψ` read
/// off-grid through its band-limited representative (evaluated by the direct
/// coefficient series, independently of the FFT path). `O(B⁶)` — test scale.
pub fn convolve_reference<T: Real>(
    f: &So3Signal<T>,
    psi: &So3Signal<T>,
) -> Result<So3Signal<T>, SvcError> {
    let b = f.bandwidth();
    if b != psi.bandwidth() {
        return Err(SvcError::BandwidthMismatch(b, psi.bandwidth()));
    }
    let n = 2 * b;
    let nu = T::tau() / T::of_usize(n);
    let nu2 = nu * nu;
    let weights = quadrature_weights::<T>(b);
    let psi_coeffs = direct_coefficients(psi);
    let alpha_at = |i: usize| T::tau() * T::of_usize(i) / T::of_usize(n);
    let beta_at = |j: usize| T::PI() * T::of_usize(2 * j + 1) / T::of_usize(4 * b);
    let mut out = So3Signal::zeros(b);
    // P = R(alpha_p, beta_q, gamma_r), s = R(alpha_i, beta_j, gamma_k):
    // P⁻¹s depends on alpha_i − alpha_p only, so each (q, r) pane shares one
    // table over (Δ, j, k) and the alpha axis becomes a correlation.
    for q in 0..n {
        for r in 0..n {
            let base_inv = rot_from_zyz(T::zero(), beta_at(q), alpha_at(r)).inverse();
            let mut table = vec![T::zero(); n * n * n];
            for delta in 0..n {
                for j in 0..n {
                    for k in 0..n {
                        let s_rot = rot_from_zyz(alpha_at(delta), beta_at(j), alpha_at(k));
                        let relative = base_inv.compose(&s_rot);
                        table[(delta * n + j) * n + k] = psi_coeffs.evaluate(&relative);
                    }
                }
            }
            for p in 0..n {
                let mut acc = T::zero();
                for i in 0..n {
                    let delta = (i + n - p) % n;
                    for j in 0..n {
                        let w = nu2 * weights[j];
                        for k in 0..n {
                            acc += w * table[(delta * n + j) * n + k] * f.at(i, j, k);
                        }
                    }
                }
                *out.at_mut(p, q, r) = acc;
            }
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Learnable kernels on the voxel grid
// ---------------------------------------------------------------------------

/// A `C_out x C_in` bank of voxel-grid filters sharing one support mask;
/// values at masked sites are identically zero and only unmasked sites are
/// learnable.
#[derive(Debug, Clone, PartialEq)]
pub struct SvcKernel<T> {
    bandwidth: usize,
    h_res: usize,
    c_in: usize,
    c_out: usize,
    mask: Vec<bool>,
    values: Vec<T>,
}

impl<T: Real> SvcKernel<T> {
    /// The default support: the inclination ring nearest the equator (of the
    /// two equidistant offset rings, the one below it) at the innermost
    /// radial layer, across all azimuths.
    pub fn ring_mask(bandwidth: usize, h_res: usize) -> Vec<bool> {
        let n = 2 * bandwidth;
        let mut mask = vec![false; n * n * h_res];
        let ring = bandwidth - 1;
        for i in 0..n {
            mask[(i * n + ring) * h_res] = true;
        }
        mask
    }

    /// Zero-initialized bank with the default ring support.
    pub fn new_ring(bandwidth: usize, h_res: usize, c_in: usize, c_out: usize) -> Self {
        let mask = Self::ring_mask(bandwidth, h_res);
        let sites = mask.len();
        Self {
            bandwidth,
            h_res,
            c_in,
            c_out,
            mask,
            values: vec![T::zero(); c_out * c_in * sites],
        }
    }

    /// Builds a bank from explicit per-site values; masked sites must be zero.
    pub fn from_parts(
        bandwidth: usize,
        h_res: usize,
        c_in: usize,
        c_out: usize,
        mask: Vec<bool>,
        values: Vec<T>,
    ) -> Result<Self, SvcError> {
        let n = 2 * bandwidth;
        let sites = n * n * h_res;
        if mask.len() != sites {
            return Err(SvcError::ShapeMismatch(format!(
                "mask length {} != site count {}",
                mask.len(),
                sites
            )));
        }
        if values.len() != c_out * c_in * sites {
            return Err(SvcError::ShapeMismatch(format!(
                "value length {} != {}x{}x{}",
                values.len(),
                c_out,
                c_in,
                sites
            )));
        }
        for (idx, v) in values.iter().enumerate() {
            if !mask[idx % sites] && *v != T::zero() {
                return Err(SvcError::MaskedSiteNonzero(idx));
            }
        }
        Ok(Self {
            bandwidth,
            h_res,
            c_in,
            c_out,
            mask,
            values,
        })
    }

    pub fn bandwidth(&self) -> usize {
        self.bandwidth
    }

    pub fn h_res(&self) -> usize {
        self.h_res
    }

    pub fn c_in(&self) -> usize {
        self.c_in
    }

    pub fn c_out(&self) -> usize {
        self.c_out
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    fn sites(&self) -> usize {
        self.mask.len()
    }

    /// The full spatial tensor of one filter (layout `(i·2B + j)·K + k`).
    pub fn filter(&self, c_out: usize, c_in: usize) -> &[T] {
        let sites = self.sites();
        let start = (c_out * self.c_in + c_in) * sites;
        &self.values[start..start + sites]
    }

    /// Number of learnable values: unmasked sites times filter count.
    pub fn param_count(&self) -> usize {
        self.c_out * self.c_in * self.mask.iter().filter(|m| **m).count()
    }

    /// Learnable values in a fixed order: filters in `(c_out, c_in)`
    /// row-major order, unmasked sites ascending within each.
    pub fn params(&self) -> Vec<T> {
        let sites = self.sites();
        let mut out = Vec::with_capacity(self.param_count());
        for f in 0..self.c_out * self.c_in {
            for s in 0..sites {
                if self.mask[s] {
                    out.push(self.values[f * sites + s]);
                }
            }
        }
        out
    }

    /// Writes learnable values back in the [`params`](Self::params) order.
    pub fn set_params(&mut self, params: &[T]) -> Result<(), SvcError> {
        if params.len() != self.param_count() {
            return Err(SvcError::ShapeMismatch(format!(
                "parameter length {} != {}",
                params.len(),
                self.param_count()
            )));
        }
        let sites = self.sites();
        let mut cursor = 0;
        for f in 0..self.c_out * self.c_in {
            for s in 0..sites {
                if self.mask[s] {
                    self.values[f * sites + s] = params[cursor];
                    cursor += 1;
                }
            }
        }
        Ok(())
    }

    /// Coefficients of every filter, in `(c_out, c_in)` row-major order.
    pub fn spectra(&self, fft: &So3Fft<T>) -> Result<Vec<So3Spectrum<T>>, SvcError> {
        if fft.bandwidth() != self.bandwidth {
            return Err(SvcError::BandwidthMismatch(self.bandwidth, fft.bandwidth()));
        }
        Ok((0..self.c_out * self.c_in)
            .map(|f| {
                let sites = self.sites();
                let data = &self.values[f * sites..(f + 1) * sites];
                fft.forward(&lift_channel_data(data, self.bandwidth, self.h_res))
            })
            .collect())
    }
}

// ---------------------------------------------------------------------------
// Grid-level convolution layer
// ---------------------------------------------------------------------------

fn check_grid_kernel<T: Real>(
    grid: &SphericalVoxelGrid<T>,
    kernel: &SvcKernel<T>,
    fft: &So3Fft<T>,
) -> Result<(), SvcError> {
    if grid.spec().bandwidth() != kernel.bandwidth {
        return Err(SvcError::BandwidthMismatch(
            grid.spec().bandwidth(),
            kernel.bandwidth,
        ));
    }
    if fft.bandwidth() != kernel.bandwidth {
        return Err(SvcError::BandwidthMismatch(kernel.bandwidth, fft.bandwidth()));
    }
    if grid.spec().h_res() != kernel.h_res {
        return Err(SvcError::ShapeMismatch(format!(
            "radial resolution {} != kernel {}",
            grid.spec().h_res(),
            kernel.h_res
        )));
    }
    if grid.channels() != kernel.c_in {
        return Err(SvcError::ShapeMismatch(format!(
            "input channels {} != kernel fan-in {}",
            grid.channels(),
            kernel.c_in
        )));
    }
    Ok(())
}

fn check_band<T: Real>(kernel: &SvcKernel<T>, band: usize) -> Result<(), SvcError> {
    if band == 0 || band > kernel.bandwidth {
        return Err(SvcError::ShapeMismatch(format!(
            "retained band {} outside 1..={}",
            band, kernel.bandwidth
        )));
    }
    Ok(())
}

/// Zeroes every coefficient degree at or above `band`.
fn truncate_spectrum<T: Real>(spectrum: &mut So3Spectrum<T>, band: usize) {
    for l in band..spectrum.bandwidth() {
        for v in spectrum.degree_mut(l) {
            *v = Complex::new(T::zero(), T::zero());
        }
    }
}

/// Convolves every input channel with the kernel bank and sums fan-in,
/// producing a `C_out`-channel grid on the same spec.
pub fn svc_forward<T: Real>(
    grid: &SphericalVoxelGrid<T>,
    kernel: &SvcKernel<T>,
    fft: &So3Fft<T>,
) -> Result<SphericalVoxelGrid<T>, SvcError> {
    svc_forward_limited(grid, kernel, fft, kernel.bandwidth)
}

/// [`svc_forward`] keeping only coefficient degrees below `band` in the
/// output (spectral truncation; `band = bandwidth` keeps everything).
pub fn svc_forward_limited<T: Real>(
    grid: &SphericalVoxelGrid<T>,
    kernel: &SvcKernel<T>,
    fft: &So3Fft<T>,
    band: usize,
) -> Result<SphericalVoxelGrid<T>, SvcError> {
    let psi_spectra = kernel.spectra(fft)?;
    svc_forward_with_spectra_limited(grid, kernel, &psi_spectra, fft, band)
}

/// [`svc_forward`] with precomputed kernel coefficients (one per
/// `(c_out, c_in)` pair, row-major), for callers that cache them across
/// evaluations of the same parameters.
pub fn svc_forward_with_spectra<T: Real>(
    grid: &SphericalVoxelGrid<T>,
    kernel: &SvcKernel<T>,
    psi_spectra: &[So3Spectrum<T>],
    fft: &So3Fft<T>,
) -> Result<SphericalVoxelGrid<T>, SvcError> {
    svc_forward_with_spectra_limited(grid, kernel, psi_spectra, fft, kernel.bandwidth)
}

/// [`svc_forward_with_spectra`] with spectral truncation to `band`.
pub fn svc_forward_with_spectra_limited<T: Real>(
    grid: &SphericalVoxelGrid<T>,
    kernel: &SvcKernel<T>,
    psi_spectra: &[So3Spectrum<T>],
    fft: &So3Fft<T>,
    band: usize,
) -> Result<SphericalVoxelGrid<T>, SvcError> {
    check_grid_kernel(grid, kernel, fft)?;
    check_band(kernel, band)?;
    if psi_spectra.len() != kernel.c_out * kernel.c_in {
        return Err(SvcError::ShapeMismatch(format!(
            "kernel coefficient count {} != {}",
            psi_spectra.len(),
            kernel.c_out * kernel.c_in
        )));
    }
    let f_spectra: Vec<So3Spectrum<T>> = (0..kernel.c_in)
        .map(|c| fft.forward(&lift_channel(grid, c)))
        .collect();
    let mut out = SphericalVoxelGrid::zeros(*grid.spec(), kernel.c_out);
    let count = grid.spec().voxel_count();
    for co in 0..kernel.c_out {
        let mut acc = So3Spectrum::zeros(kernel.bandwidth);
        for ci in 0..kernel.c_in {
            accumulate_a_bh(&mut acc, &f_spectra[ci], &psi_spectra[co * kernel.c_in + ci]);
        }
        truncate_spectrum(&mut acc, band);
        let channel = unlift_channel(&fft.inverse(&acc), kernel.h_res);
        out.data_mut()[co * count..(co + 1) * count].copy_from_slice(&channel);
    }
    Ok(out)
}

/// Cotangents of [`svc_forward`] with respect to the input grid and the
/// kernel values. The kernel gradient comes back as a bank with the same
/// mask, so masked sites are exactly zero.
pub fn svc_backward<T: Real>(
    grid: &SphericalVoxelGrid<T>,
    kernel: &SvcKernel<T>,
    upstream: &SphericalVoxelGrid<T>,
    fft: &So3Fft<T>,
) -> Result<(SphericalVoxelGrid<T>, SvcKernel<T>), SvcError> {
    svc_backward_limited(grid, kernel, upstream, fft, kernel.bandwidth)
}

/// Cotangents of [`svc_forward_limited`]: the truncation projector is
/// self-adjoint, so it is applied once to the upstream coefficients and both
/// gradients inherit it.
pub fn svc_backward_limited<T: Real>(
    grid: &SphericalVoxelGrid<T>,
    kernel: &SvcKernel<T>,
    upstream: &SphericalVoxelGrid<T>,
    fft: &So3Fft<T>,
    band: usize,
) -> Result<(SphericalVoxelGrid<T>, SvcKernel<T>), SvcError> {
    check_grid_kernel(grid, kernel, fft)?;
    check_band(kernel, band)?;
    if upstream.channels() != kernel.c_out || upstream.spec().voxel_count() != grid.spec().voxel_count()
    {
        return Err(SvcError::ShapeMismatch(format!(
            "upstream {} channels on {} voxels; expected {} on {}",
            upstream.channels(),
            upstream.spec().voxel_count(),
            kernel.c_out,
            grid.spec().voxel_count()
        )));
    }
    let count = grid.spec().voxel_count();
    let psi_spectra = kernel.spectra(fft)?;
    let f_spectra: Vec<So3Spectrum<T>> = (0..kernel.c_in)
        .map(|c| fft.forward(&lift_channel(grid, c)))
        .collect();
    // Upstream cotangent through unlift and inverse, per output channel.
    let out_cotangents: Vec<So3Spectrum<T>> = (0..kernel.c_out)
        .map(|co| {
            let slice = &upstream.data()[co * count..(co + 1) * count];
            let mut cot =
                fft.inverse_adjoint(&unlift_adjoint(slice, kernel.bandwidth, kernel.h_res));
            truncate_spectrum(&mut cot, band);
            cot
        })
        .collect();
    // Input-side gradient.
    let mut grad_grid = SphericalVoxelGrid::zeros(*grid.spec(), kernel.c_in);
    for ci in 0..kernel.c_in {
        let mut acc = So3Spectrum::zeros(kernel.bandwidth);
        for co in 0..kernel.c_out {
            accumulate_a_b(&mut acc, &out_cotangents[co], &psi_spectra[co * kernel.c_in + ci]);
        }
        let channel = lift_adjoint(&fft.forward_adjoint(&acc), kernel.h_res);
        grad_grid.data_mut()[ci * count..(ci + 1) * count].copy_from_slice(&channel);
    }
    // Kernel-side gradient, masked.
    let sites = kernel.sites();
    let mut grad_values = vec![T::zero(); kernel.c_out * kernel.c_in * sites];
    for co in 0..kernel.c_out {
        for ci in 0..kernel.c_in {
            let mut acc = So3Spectrum::zeros(kernel.bandwidth);
            accumulate_ah_b(&mut acc, &out_cotangents[co], &f_spectra[ci]);
            let full = lift_adjoint(&fft.forward_adjoint(&acc), kernel.h_res);
            let dst = &mut grad_values[(co * kernel.c_in + ci) * sites..][..sites];
            for s in 0..sites {
                if kernel.mask[s] {
                    dst[s] = full[s];
                }
            }
        }
    }
    let grad_kernel = SvcKernel {
        bandwidth: kernel.bandwidth,
        h_res: kernel.h_res,
        c_in: kernel.c_in,
        c_out: kernel.c_out,
        mask: kernel.mask.clone(),
        values: grad_values,
    };
    Ok((grad_grid, grad_kernel))
}

// ---------------------------------------------------------------------------
// Rotating voxel-grid signals
// ---------------------------------------------------------------------------

/// If the rotation is about the polar axis by a whole number of azimuth grid
/// steps, that number; otherwise `None`.
fn azimuthal_grid_steps<T: Real>(rot: &RotationZyz<T>, bandwidth: usize) -> Option<usize> {
    let tol = 1e-12;
    if rot.beta.to_f64_value().abs() > tol {
        return None;
    }
    let step = std::f64::consts::PI / bandwidth as f64;
    let total = (rot.alpha + rot.gamma)
        .to_f64_value()
        .rem_euclid(std::f64::consts::TAU);
    let steps = (total / step).round();
    if (total - steps * step).abs() > tol {
        return None;
    }
    Some((steps as usize) % (2 * bandwidth))
}

/// Applies the left-translation operator `g ↦ g(R⁻¹·)` to a voxel-grid
/// signal. Polar-axis rotations by whole grid steps are bit-exact column
/// rolls; any other rotation is applied to the band-limited representative
/// (coefficients multiplied by `conj(D(R))` per degree) and read back through
/// the radial resampling.
pub fn rotate_signal<T: Real>(
    grid: &SphericalVoxelGrid<T>,
    rot: &RotationZyz<T>,
    fft: &So3Fft<T>,
) -> Result<SphericalVoxelGrid<T>, SvcError> {
    if grid.spec().bandwidth() != fft.bandwidth() {
        return Err(SvcError::BandwidthMismatch(
            grid.spec().bandwidth(),
            fft.bandwidth(),
        ));
    }
    if let Some(steps) = azimuthal_grid_steps(rot, grid.spec().bandwidth()) {
        return Ok(grid.roll_alpha(steps));
    }
    let count = grid.spec().voxel_count();
    let mut out = SphericalVoxelGrid::zeros(*grid.spec(), grid.channels());
    for c in 0..grid.channels() {
        let spec = fft.forward(&lift_channel(grid, c)).rotated(rot);
        let channel = unlift_channel(&fft.inverse(&spec), grid.spec().h_res());
        out.data_mut()[c * count..(c + 1) * count].copy_from_slice(&channel);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sphgrid::GridSpec;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const B: usize = 4;

    fn spec(b: usize, k: usize) -> GridSpec<f64> {
        GridSpec::new(b, k, 1.0 / 8.0).unwrap()
    }

    fn random_signal(bandwidth: usize, seed: u64) -> So3Signal<f64> {
        let n = 2 * bandwidth;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        So3Signal::from_vec(
            bandwidth,
            (0..n * n * n).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        )
    }

    fn band_limited(fft: &So3Fft<f64>, seed: u64) -> So3Signal<f64> {
        fft.inverse(&fft.forward(&random_signal(fft.bandwidth(), seed)))
    }

    fn random_grid(sp: GridSpec<f64>, channels: usize, seed: u64) -> SphericalVoxelGrid<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut g = SphericalVoxelGrid::zeros(sp, channels);
        for v in g.data_mut() {
            *v = rng.gen_range(-1.0..1.0);
        }
        g
    }

    fn random_ring_kernel(
        bandwidth: usize,
        h_res: usize,
        c_in: usize,
        c_out: usize,
        seed: u64,
    ) -> SvcKernel<f64> {
        let mut kernel = SvcKernel::new_ring(bandwidth, h_res, c_in, c_out);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params: Vec<f64> = (0..kernel.param_count())
            .map(|_| rng.gen_range(-1.0..1.0))
            .collect();
        kernel.set_params(&params).unwrap();
        kernel
    }

    fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
        a.iter()
            .zip(b)
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max)
    }

    fn max_abs(a: &[f64]) -> f64 {
        a.iter().map(|x| x.abs()).fold(0.0, f64::max)
    }

    // ---- lift / unlift ----------------------------------------------------

    #[test]
    fn lift_keeps_constants_constant() {
        let sp = spec(3, 5);
        let mut grid = SphericalVoxelGrid::zeros(sp, 1);
        for v in grid.data_mut() {
            *v = 0.75;
        }
        let sig = lift_channel(&grid, 0);
        assert!(sig.data().iter().all(|v| (*v - 0.75).abs() < 1e-15));
    }

    #[test]
    fn lift_of_innermost_layer_stays_near_the_gamma_origin() {
        // Content only at the smallest radial center must appear only at
        // gamma samples whose radial position touches that cell.
        let sp = spec(4, 8);
        let mut grid = SphericalVoxelGrid::zeros(sp, 1);
        for i in 0..8 {
            for j in 0..8 {
                *grid.at_mut(0, i, j, 0) = 1.0;
            }
        }
        let sig = lift_channel(&grid, 0);
        let n = 2 * 4;
        for k in 0..n {
            let h = k as f64 / n as f64;
            let touches = h < (1.5 / 8.0); // second radial center
            let v = sig.at(3, 3, k);
            if touches {
                assert!(v > 0.0, "gamma bin {k} lost the inner layer");
            } else {
                assert_eq!(v, 0.0, "gamma bin {k} leaked");
            }
        }
    }

    #[test]
    fn radial_round_trip_is_exact_on_affine_profiles_away_from_ends() {
        let b = 4usize;
        let k_res = 2 * b;
        let n = 2 * b;
        let sp = spec(b, k_res);
        let mut grid = SphericalVoxelGrid::zeros(sp, 1);
        for i in 0..n {
            for j in 0..n {
                for k in 0..k_res {
                    *grid.at_mut(0, i, j, k) = 2.0 * sp.h_center(k) - 0.3;
                }
            }
        }
        let back = unlift_channel(&lift_channel(&grid, 0), k_res);
        for i in 0..n {
            for j in 0..n {
                for k in 1..k_res - 1 {
                    let idx = (i * n + j) * k_res + k;
                    let want = 2.0 * sp.h_center(k) - 0.3;
                    assert!(
                        (back[idx] - want).abs() < 1e-12,
                        "({i},{j},{k}): {} vs {want}",
                        back[idx]
                    );
                }
            }
        }
    }

    #[test]
    fn radial_round_trip_on_smooth_profiles_is_tight() {
        // lift∘unlift on signals with slow variation along gamma. The radial
        // axis is a distance, not an angle, so its end layers clamp instead of
        // wrapping; the two gamma bins nearest the ends inherit an O(grid
        // step) error from that clamp. Away from them the round trip is a
        // narrow symmetric smoothing whose attenuation of a one-cycle gamma
        // component is sin^2(pi / (2 * k_res)) — below one percent here.
        let b = 16usize;
        let n = 2 * b;
        let fft = So3Fft::<f64>::new(b);
        let full = fft.forward(&random_signal(b, 99));
        let mut smooth = So3Spectrum::zeros(b);
        for l in 0..b {
            let li = l as i64;
            for m in -li..=li {
                for nn in -li.min(1)..=li.min(1) {
                    *smooth.entry_mut(l, m, nn) = full.entry(l, m, nn);
                }
            }
        }
        let sig = fft.inverse(&smooth);
        let k_res = 2 * b;
        let back = lift_channel_data(&unlift_channel(&sig, k_res), b, k_res);
        let scale = max_abs(sig.data());
        let mut interior = 0f64;
        let mut boundary = 0f64;
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    let d = (sig.at(i, j, k) - back.at(i, j, k)).abs();
                    if k == 0 || k == n - 1 {
                        boundary = boundary.max(d);
                    } else {
                        interior = interior.max(d);
                    }
                }
            }
        }
        assert!(
            interior < 1e-2 * scale,
            "interior relative error {}",
            interior / scale
        );
        assert!(
            boundary < 0.25 * scale,
            "boundary relative error {}",
            boundary / scale
        );
    }

    #[test]
    fn lift_and_unlift_adjoints_pair_correctly() {
        let b = 3usize;
        let k_res = 5usize;
        let n = 2 * b;
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let channel: Vec<f64> = (0..n * n * k_res).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let cot_sig = random_signal(b, 22);
        // <cot, lift(x)> = <lift_adjoint(cot), x>
        let lifted = lift_channel_data(&channel, b, k_res);
        let lhs: f64 = cot_sig
            .data()
            .iter()
            .zip(lifted.data())
            .map(|(a, x)| a * x)
            .sum();
        let back = lift_adjoint(&cot_sig, k_res);
        let rhs: f64 = back.iter().zip(&channel).map(|(a, x)| a * x).sum();
        assert!((lhs - rhs).abs() < 1e-10, "lift pair {lhs} vs {rhs}");
        // <cot_grid, unlift(y)> = <unlift_adjoint(cot_grid), y>
        let y = random_signal(b, 23);
        let cot_grid: Vec<f64> = (0..n * n * k_res).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let down = unlift_channel(&y, k_res);
        let lhs2: f64 = cot_grid.iter().zip(&down).map(|(a, x)| a * x).sum();
        let up = unlift_adjoint(&cot_grid, b, k_res);
        let rhs2: f64 = up.data().iter().zip(y.data()).map(|(a, x)| a * x).sum();
        assert!((lhs2 - rhs2).abs() < 1e-10, "unlift pair {lhs2} vs {rhs2}");
    }

    // ---- reference path ---------------------------------------------------

    #[test]
    fn reference_with_constant_kernel_integrates_the_signal() {
        let fft = So3Fft::<f64>::new(3);
        let f = band_limited(&fft, 31);
        let n = 6usize;
        let psi = So3Signal::from_vec(3, vec![1.0; n * n * n]);
        let out = convolve_reference(&f, &psi).unwrap();
        // Σ_s w(s) f(s) with the same quadrature.
        let w = quadrature_weights::<f64>(3);
        let nu2 = (std::f64::consts::TAU / n as f64).powi(2);
        let mut integral = 0.0;
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    integral += nu2 * w[j] * f.at(i, j, k);
                }
            }
        }
        for v in out.data() {
            assert!((v - integral).abs() < 1e-9, "{v} vs {integral}");
        }
    }

    #[test]
    fn reference_of_zero_signal_is_zero() {
        let fft = So3Fft::<f64>::new(3);
        let psi = band_limited(&fft, 37);
        let f = So3Signal::zeros(3);
        let out = convolve_reference(&f, &psi).unwrap();
        assert!(out.data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn exactly_one_combination_rule_matches_the_reference() {
        // Of the four transpose/conjugation placements, the production rule
        // A·Bᴴ must match the literal quadrature and the other three must
        // not. Run on several random band-limited pairs.
        let fft = So3Fft::<f64>::new(B);
        let mut matches = [true; 4];
        for seed in 0..3u64 {
            let f = band_limited(&fft, 100 + seed);
            let psi = band_limited(&fft, 200 + seed);
            let oracle = convolve_reference(&f, &psi).unwrap();
            let scale = max_abs(oracle.data());
            let fa = fft.forward(&f);
            let pb = fft.forward(&psi);
            let bandwidth = fft.bandwidth();
            let candidates: [So3Spectrum<f64>; 4] = [
                {
                    let mut s = So3Spectrum::zeros(bandwidth);
                    accumulate_a_bh(&mut s, &fa, &pb);
                    s
                },
                {
                    let mut s = So3Spectrum::zeros(bandwidth);
                    accumulate_a_bh(&mut s, &pb, &fa);
                    s
                },
                {
                    let mut s = So3Spectrum::zeros(bandwidth);
                    accumulate_ah_b(&mut s, &fa, &pb);
                    s
                },
                {
                    let mut s = So3Spectrum::zeros(bandwidth);
                    accumulate_ah_b(&mut s, &pb, &fa);
                    s
                },
            ];
            for (c, combined) in candidates.iter().enumerate() {
                let out = fft.inverse(combined);
                let rel = max_abs_diff(out.data(), oracle.data()) / scale;
                if rel >= 1e-6 {
                    matches[c] = false;
                    assert!(rel > 1e-3, "candidate {c} is ambiguous: rel {rel}");
                }
            }
        }
        assert_eq!(
            matches,
            [true, false, false, false],
            "the production rule must be the unique match"
        );
    }

    #[test]
    fn spectral_path_matches_reference_on_random_pairs() {
        let fft = So3Fft::<f64>::new(B);
        for seed in 0..5u64 {
            let f = band_limited(&fft, 300 + seed);
            let psi = band_limited(&fft, 400 + seed);
            let fast = convolve(&f, &psi, &fft).unwrap();
            let oracle = convolve_reference(&f, &psi).unwrap();
            let rel = max_abs_diff(fast.data(), oracle.data()) / max_abs(oracle.data());
            assert!(rel < 1e-6, "seed {seed}: relative error {rel}");
        }
    }

    #[test]
    fn convolution_is_bilinear() {
        let fft = So3Fft::<f64>::new(B);
        let f1 = band_limited(&fft, 51);
        let f2 = band_limited(&fft, 52);
        let psi = band_limited(&fft, 53);
        let sum = So3Signal::from_vec(
            B,
            f1.data().iter().zip(f2.data()).map(|(a, b)| a + b).collect(),
        );
        let lhs = convolve(&sum, &psi, &fft).unwrap();
        let r1 = convolve(&f1, &psi, &fft).unwrap();
        let r2 = convolve(&f2, &psi, &fft).unwrap();
        let combined: Vec<f64> = r1.data().iter().zip(r2.data()).map(|(a, b)| a + b).collect();
        assert!(max_abs_diff(lhs.data(), &combined) < 1e-10);
    }

    #[test]
    fn constant_kernel_keeps_only_degree_zero() {
        let fft = So3Fft::<f64>::new(B);
        let f = band_limited(&fft, 61);
        let n = 2 * B;
        let psi = So3Signal::from_vec(B, vec![1.0; n * n * n]);
        let out_spec = convolve_spectra(&fft.forward(&f), &fft.forward(&psi)).unwrap();
        let mass = 8.0 * std::f64::consts::PI.powi(2);
        let want = fft.forward(&f).entry(0, 0, 0) * mass;
        assert!((out_spec.entry(0, 0, 0) - want).norm() < 1e-8 * want.norm());
        for l in 1..B {
            for v in out_spec.degree(l) {
                assert!(v.norm() < 1e-8, "degree {l} leaked: {v}");
            }
        }
    }

    #[test]
    fn mismatched_bandwidths_are_rejected() {
        let fft = So3Fft::<f64>::new(3);
        let f = random_signal(3, 71);
        let psi = random_signal(4, 72);
        assert_eq!(
            convolve(&f, &psi, &fft),
            Err(SvcError::BandwidthMismatch(3, 4))
        );
        assert_eq!(
            convolve_reference(&f, &psi),
            Err(SvcError::BandwidthMismatch(3, 4))
        );
    }

    // ---- kernels and the grid-level layer ---------------------------------

    #[test]
    fn ring_mask_sits_on_the_equatorial_ring_at_the_innermost_layer() {
        let mask = SvcKernel::<f64>::ring_mask(4, 6);
        let n = 8;
        for i in 0..n {
            for j in 0..n {
                for k in 0..6 {
                    let want = j == 3 && k == 0;
                    assert_eq!(mask[(i * n + j) * 6 + k], want, "({i},{j},{k})");
                }
            }
        }
        // The selected offset ring lies just below the equator: of the two
        // rings equidistant from π/2, the lower index is kept.
        let below = std::f64::consts::PI * 7.0 / 16.0;
        let sp = spec(4, 6);
        assert!((sp.beta_center(3) - below).abs() < 1e-15);
    }

    #[test]
    fn kernel_params_round_trip_and_reject_masked_writes() {
        let mut kernel = SvcKernel::<f64>::new_ring(3, 4, 2, 3);
        assert_eq!(kernel.param_count(), 2 * 3 * 6);
        let params: Vec<f64> = (0..kernel.param_count()).map(|i| i as f64 * 0.5).collect();
        kernel.set_params(&params).unwrap();
        assert_eq!(kernel.params(), params);
        // Full-tensor constructor rejects values off the mask.
        let n = 6;
        let sites = n * n * 4;
        let mask = SvcKernel::<f64>::ring_mask(3, 4);
        let mut values = vec![0.0; sites];
        values[1] = 1.0; // site (0,0,1): masked
        assert!(matches!(
            SvcKernel::from_parts(3, 4, 1, 1, mask, values),
            Err(SvcError::MaskedSiteNonzero(1))
        ));
    }

    #[test]
    fn grid_layer_matches_per_channel_signal_convolutions() {
        let sp = spec(B, 6);
        let fft = So3Fft::<f64>::new(B);
        let grid = random_grid(sp, 2, 81);
        let kernel = random_ring_kernel(B, 6, 2, 3, 82);
        let out = svc_forward(&grid, &kernel, &fft).unwrap();
        assert_eq!(out.channels(), 3);
        let count = sp.voxel_count();
        for co in 0..3 {
            let mut want = vec![0.0f64; count];
            for ci in 0..2 {
                let f = lift_channel(&grid, ci);
                let psi = lift_channel_data(kernel.filter(co, ci), B, 6);
                let conv = convolve(&f, &psi, &fft).unwrap();
                for (w, v) in want.iter_mut().zip(unlift_channel(&conv, 6)) {
                    *w += v;
                }
            }
            let got = &out.data()[co * count..(co + 1) * count];
            assert!(max_abs_diff(got, &want) < 1e-10, "channel {co}");
        }
    }

    #[test]
    fn layer_gradients_match_finite_differences() {
        let sp = spec(B, 4);
        let fft = So3Fft::<f64>::new(B);
        let mut grid = random_grid(sp, 2, 91);
        let mut kernel = random_ring_kernel(B, 4, 2, 2, 92);
        let mut rng = ChaCha8Rng::seed_from_u64(93);
        let upstream_data: Vec<f64> = (0..2 * sp.voxel_count())
            .map(|_| rng.gen_range(-1.0..1.0))
            .collect();
        let mut upstream = SphericalVoxelGrid::zeros(sp, 2);
        upstream.data_mut().copy_from_slice(&upstream_data);
        let (grad_grid, grad_kernel) = svc_backward(&grid, &kernel, &upstream, &fft).unwrap();
        let loss = |g: &SphericalVoxelGrid<f64>, k: &SvcKernel<f64>| -> f64 {
            svc_forward(g, k, &fft)
                .unwrap()
                .data()
                .iter()
                .zip(&upstream_data)
                .map(|(a, b)| a * b)
                .sum()
        };
        let eps = 1e-4;
        // Input-side: a few random grid coordinates.
        for _ in 0..6 {
            let idx = rng.gen_range(0..grid.data().len());
            let orig = grid.data()[idx];
            grid.data_mut()[idx] = orig + eps;
            let up = loss(&grid, &kernel);
            grid.data_mut()[idx] = orig - eps;
            let down = loss(&grid, &kernel);
            grid.data_mut()[idx] = orig;
            let fd = (up - down) / (2.0 * eps);
            let an = grad_grid.data()[idx];
            assert!(
                (fd - an).abs() <= 1e-4 * an.abs().max(1.0),
                "grid coord {idx}: fd {fd} analytic {an}"
            );
        }
        // Kernel-side: a few learnable parameters.
        let grad_params = grad_kernel.params();
        let base = kernel.params();
        for _ in 0..6 {
            let p = rng.gen_range(0..base.len());
            let mut bumped = base.clone();
            bumped[p] = base[p] + eps;
            kernel.set_params(&bumped).unwrap();
            let up = loss(&grid, &kernel);
            bumped[p] = base[p] - eps;
            kernel.set_params(&bumped).unwrap();
            let down = loss(&grid, &kernel);
            kernel.set_params(&base).unwrap();
            let fd = (up - down) / (2.0 * eps);
            let an = grad_params[p];
            assert!(
                (fd - an).abs() <= 1e-4 * an.abs().max(1.0),
                "kernel param {p}: fd {fd} analytic {an}"
            );
        }
        // Masked sites receive exactly zero gradient.
        let sites = 2 * B * 2 * B * 4;
        for f in 0..4 {
            for s in 0..sites {
                if !grad_kernel.mask()[s] {
                    assert_eq!(grad_kernel.filter(f / 2, f % 2)[s], 0.0);
                }
            }
        }
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let sp = spec(3, 4);
        let fft = So3Fft::<f64>::new(3);
        let grid = random_grid(sp, 1, 95);
        let kernel = random_ring_kernel(3, 4, 1, 2, 96);
        let upstream = SphericalVoxelGrid::zeros(sp, 2);
        let (grad_grid, grad_kernel) = svc_backward(&grid, &kernel, &upstream, &fft).unwrap();
        assert!(grad_grid.data().iter().all(|v| *v == 0.0));
        assert!(grad_kernel.params().iter().all(|v| *v == 0.0));
    }

    // ---- rotation ---------------------------------------------------------

    #[test]
    fn identity_rotation_returns_the_grid_unchanged() {
        let sp = spec(3, 4);
        let fft = So3Fft::<f64>::new(3);
        let grid = random_grid(sp, 2, 101);
        let out = rotate_signal(&grid, &RotationZyz::identity(), &fft).unwrap();
        assert_eq!(out.data(), grid.data());
    }

    #[test]
    fn one_step_polar_rotation_is_a_bit_exact_roll() {
        let sp = spec(B, 5);
        let fft = So3Fft::<f64>::new(B);
        let grid = random_grid(sp, 2, 102);
        let theta = std::f64::consts::TAU / (2 * B) as f64;
        let rot = rot_from_zyz(theta, 0.0, 0.0);
        let out = rotate_signal(&grid, &rot, &fft).unwrap();
        assert_eq!(out.data(), grid.roll_alpha(1).data());
        // The same angle split between the two polar factors also rolls.
        let split = rot_from_zyz(theta / 2.0, 0.0, theta / 2.0);
        let out2 = rotate_signal(&grid, &split, &fft).unwrap();
        assert_eq!(out2.data(), grid.roll_alpha(1).data());
    }

    #[test]
    fn general_rotation_round_trip_stays_bounded() {
        // Rotate there and back with two interpolated applications. The test
        // signal samples a polynomial in rotation-matrix entries, so it is
        // exactly band-limited as a function of orientation; its radial
        // profiles (1, cos(2 pi h), cos^2(2 pi h)) have zero slope at both
        // clamped ends of the depth axis. The only losses left are the linear
        // radial interpolation in lift and unlift. The depth resolution must
        // match the gamma sampling (k_res = 2B) for the intermediate grid to
        // carry the rotated signal without decimating the depth axis.
        let b = 16usize;
        let fft = So3Fft::<f64>::new(b);
        let n = 2 * b;
        let k_res = 2 * b;
        let sp = spec(b, k_res);
        let mut grid = SphericalVoxelGrid::zeros(sp, 1);
        for i in 0..n {
            for j in 0..n {
                let (alpha, beta) = (sp.alpha_center(i), sp.beta_center(j));
                for k in 0..k_res {
                    let gamma = core::f64::consts::TAU * sp.h_center(k);
                    *grid.at_mut(0, i, j, k) = beta.cos()
                        + 0.5 * alpha.sin() * beta.sin()
                        - 0.6 * beta.sin().powi(2) * alpha.cos() * gamma.cos()
                        + 0.3 * beta.sin().powi(2) * gamma.cos().powi(2);
                }
            }
        }
        let rot = rot_from_zyz(0.7, 0.9, 1.8);
        let there = rotate_signal(&grid, &rot, &fft).unwrap();
        let back = rotate_signal(&there, &rot.inverse(), &fft).unwrap();
        let err = max_abs_diff(back.data(), grid.data());
        assert!(err < 5e-2, "round-trip error {err}");
    }


    #[test]
    fn coefficient_level_equivariance_is_exact_for_any_rotation() {
        // Left translation commutes with the kernel product per degree.
        let fft = So3Fft::<f64>::new(B);
        let f = band_limited(&fft, 111);
        let psi = band_limited(&fft, 112);
        let rot = rot_from_zyz(1.3, 0.8, 2.9);
        let fa = fft.forward(&f);
        let pb = fft.forward(&psi);
        let lhs = convolve_spectra(&fa.rotated(&rot), &pb).unwrap();
        let rhs = convolve_spectra(&fa, &pb).unwrap().rotated(&rot);
        for l in 0..B {
            for (x, y) in lhs.degree(l).iter().zip(rhs.degree(l)) {
                assert!((x - y).norm() < 1e-10, "degree {l}");
            }
        }
    }

    #[test]
    fn grid_layer_commutes_with_polar_grid_rotations() {
        let sp = spec(B, 6);
        let fft = So3Fft::<f64>::new(B);
        let grid = random_grid(sp, 2, 121);
        let kernel = random_ring_kernel(B, 6, 2, 2, 122);
        let theta = 3.0 * std::f64::consts::TAU / (2 * B) as f64;
        let rot = rot_from_zyz(theta, 0.0, 0.0);
        let lhs = svc_forward(&rotate_signal(&grid, &rot, &fft).unwrap(), &kernel, &fft).unwrap();
        let rhs = rotate_signal(&svc_forward(&grid, &kernel, &fft).unwrap(), &rot, &fft).unwrap();
        let err = max_abs_diff(lhs.data(), rhs.data());
        assert!(err < 1e-10, "equivariance defect {err}");
        // Pooled features: the per-channel maxima agree to the same order.
        let count = sp.voxel_count();
        for c in 0..2 {
            let max_l = max_abs(&lhs.data()[c * count..(c + 1) * count]);
            let max_r = max_abs(&rhs.data()[c * count..(c + 1) * count]);
            assert!((max_l - max_r).abs() < 1e-10, "channel {c} pooled feature");
        }
    }

    #[test]
    fn full_band_limit_is_the_plain_layer() {
        let sp = spec(B, 6);
        let fft = So3Fft::<f64>::new(B);
        let grid = random_grid(sp, 2, 501);
        let kernel = random_ring_kernel(B, 6, 2, 3, 502);
        let full = svc_forward(&grid, &kernel, &fft).unwrap();
        let limited = svc_forward_limited(&grid, &kernel, &fft, B).unwrap();
        assert_eq!(full, limited);
    }

    #[test]
    fn truncating_to_one_degree_leaves_constant_channels() {
        // Keeping only degree zero means the output synthesizes from a single
        // constant basis function, so every output channel is constant.
        let sp = spec(B, 6);
        let fft = So3Fft::<f64>::new(B);
        let grid = random_grid(sp, 2, 511);
        let kernel = random_ring_kernel(B, 6, 2, 2, 512);
        let out = svc_forward_limited(&grid, &kernel, &fft, 1).unwrap();
        let count = sp.voxel_count();
        for co in 0..2 {
            let channel = &out.data()[co * count..(co + 1) * count];
            let first = channel[0];
            assert!(first.abs() > 1e-12, "degenerate test signal");
            for v in channel {
                assert!((v - first).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn truncated_layer_gradients_match_finite_differences() {
        let band = 2usize;
        let sp = spec(B, 5);
        let fft = So3Fft::<f64>::new(B);
        let grid = random_grid(sp, 2, 521);
        let kernel = random_ring_kernel(B, 5, 2, 2, 522);
        let upstream = random_grid(sp, 2, 523);
        let loss = |g: &SphericalVoxelGrid<f64>, k: &SvcKernel<f64>| -> f64 {
            let out = svc_forward_limited(g, k, &fft, band).unwrap();
            out.data()
                .iter()
                .zip(upstream.data())
                .map(|(a, b)| a * b)
                .sum()
        };
        let (grad_grid, grad_kernel) =
            svc_backward_limited(&grid, &kernel, &upstream, &fft, band).unwrap();
        let eps = 1e-4;
        let mut rng = ChaCha8Rng::seed_from_u64(524);
        for _ in 0..5 {
            let idx = rng.gen_range(0..grid.data().len());
            let mut plus = grid.clone();
            plus.data_mut()[idx] += eps;
            let mut minus = grid.clone();
            minus.data_mut()[idx] -= eps;
            let fd = (loss(&plus, &kernel) - loss(&minus, &kernel)) / (2.0 * eps);
            let an = grad_grid.data()[idx];
            assert!(
                (fd - an).abs() <= 1e-4 * (1.0 + fd.abs()),
                "grid grad {an} vs fd {fd}"
            );
        }
        let params = kernel.params();
        for _ in 0..5 {
            let idx = rng.gen_range(0..params.len());
            let mut p_plus = params.clone();
            p_plus[idx] += eps;
            let mut k_plus = kernel.clone();
            k_plus.set_params(&p_plus).unwrap();
            let mut p_minus = params.clone();
            p_minus[idx] -= eps;
            let mut k_minus = kernel.clone();
            k_minus.set_params(&p_minus).unwrap();
            let fd = (loss(&grid, &k_plus) - loss(&grid, &k_minus)) / (2.0 * eps);
            let an = grad_kernel.params()[idx];
            assert!(
                (fd - an).abs() <= 1e-4 * (1.0 + fd.abs()),
                "kernel grad {an} vs fd {fd}"
            );
        }
    }

    #[test]
    fn grid_layer_equivariance_gap_shrinks_with_bandwidth() {
        // For rotations off the polar axis the layer is equivariant only up
        // to discretization; doubling the bandwidth must shrink the gap.
        let rot = rot_from_zyz(0.9, 0.6, 0.3);
        let mut gaps = Vec::new();
        for b in [4usize, 8] {
            let k_res = 2 * b;
            let sp = spec(b, k_res);
            let fft = So3Fft::<f64>::new(b);
            let n = 2 * b;
            let mut grid = SphericalVoxelGrid::zeros(sp, 1);
            for i in 0..n {
                for j in 0..n {
                    let (alpha, beta) = (sp.alpha_center(i), sp.beta_center(j));
                    for k in 0..k_res {
                        let s = (core::f64::consts::PI * sp.h_center(k)).sin();
                        *grid.at_mut(0, i, j, k) =
                            beta.cos() * s * s + alpha.sin() * beta.sin() * s.powi(4);
                    }
                }
            }
            let mut kernel = SvcKernel::new_ring(b, k_res, 1, 1);
            let params: Vec<f64> = (0..2 * b)
                .map(|i| {
                    let a = std::f64::consts::TAU * i as f64 / (2 * b) as f64;
                    1.0 + a.cos() + 0.5 * (2.0 * a).sin()
                })
                .collect();
            kernel.set_params(&params).unwrap();
            let lhs =
                svc_forward(&rotate_signal(&grid, &rot, &fft).unwrap(), &kernel, &fft).unwrap();
            let rhs =
                rotate_signal(&svc_forward(&grid, &kernel, &fft).unwrap(), &rot, &fft).unwrap();
            let scale = max_abs(rhs.data());
            gaps.push(max_abs_diff(lhs.data(), rhs.data()) / scale);
        }
        assert!(
            gaps[1] < gaps[0],
            "gap should shrink with bandwidth: {gaps:?}"
        );
    }
}
