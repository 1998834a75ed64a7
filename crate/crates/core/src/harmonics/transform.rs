//! Fast transforms between Euler-grid signals and Wigner-D coefficients.
//!
//! The forward transform separates into a 2D FFT over the two azimuthal axes
//! followed by a weighted Wigner-d contraction over the inclination rings; the
//! inverse runs the same two stages in the opposite order. Both directions,
//! and both adjoints, share a pair of parameterized kernels so the
//! normalization lives in exactly one place.

use num_complex::Complex;
use rustfft::{Fft, FftDirection, FftPlanner};
use std::sync::Arc;

use crate::geometry::RotationZyz;
use crate::scalar::Real;

use super::quadrature::quadrature_weights;
use super::wigner::{wigner_d, WignerTables};

/// Synthesis weight for degree `l`: `(2l+1)/(8π²)`.
fn degree_norm<T: Real>(l: usize) -> T {
    let pi = T::PI();
    T::of_usize(2 * l + 1) / (T::of(8.0) * pi * pi)
}

/// The full Wigner-D matrix `D^l(R)`, row-major `(2l+1) x (2l+1)` with
/// `D^l_{mn} = exp(-i·m·alpha)·d^l_{mn}(beta)·exp(-i·n·gamma)`.
pub fn wigner_big_d<T: Real>(l: usize, rot: &RotationZyz<T>) -> Vec<Complex<T>> {
    let d = wigner_d::<T>(l, rot.beta);
    let dim = 2 * l + 1;
    let li = l as i64;
    let phase = |order: i64, angle: T| -> Complex<T> {
        Complex::from_polar(T::one(), -T::of(order as f64) * angle)
    };
    let row_phases: Vec<Complex<T>> = (-li..=li).map(|m| phase(m, rot.alpha)).collect();
    let col_phases: Vec<Complex<T>> = (-li..=li).map(|n| phase(n, rot.gamma)).collect();
    let mut out = vec![Complex::new(T::zero(), T::zero()); dim * dim];
    for r in 0..dim {
        for c in 0..dim {
            out[r * dim + c] = row_phases[r] * col_phases[c] * d[r * dim + c];
        }
    }
    out
}

/// A real scalar signal sampled on the `2B x 2B x 2B` Euler grid, stored
/// row-major as `[(i·2B + j)·2B + k]` for `(alpha_i, beta_j, gamma_k)`.
#[derive(Debug, Clone, PartialEq)]
pub struct So3Signal<T> {
    bandwidth: usize,
    data: Vec<T>,
}

impl<T: Real> So3Signal<T> {
    pub fn zeros(bandwidth: usize) -> Self {
        assert!(bandwidth >= 1, "bandwidth must be at least 1");
        let n = 2 * bandwidth;
        Self {
            bandwidth,
            data: vec![T::zero(); n * n * n],
        }
    }

    /// Wraps existing samples; `data` must hold exactly `(2B)^3` values.
    pub fn from_vec(bandwidth: usize, data: Vec<T>) -> Self {
        let n = 2 * bandwidth;
        assert_eq!(
            data.len(),
            n * n * n,
            "signal data must have (2B)^3 = {} entries, got {}",
            n * n * n,
            data.len()
        );
        Self { bandwidth, data }
    }

    pub fn bandwidth(&self) -> usize {
        self.bandwidth
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        let n = 2 * self.bandwidth;
        (i * n + j) * n + k
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize, k: usize) -> T {
        self.data[self.index(i, j, k)]
    }

    #[inline]
    pub fn at_mut(&mut self, i: usize, j: usize, k: usize) -> &mut T {
        let idx = self.index(i, j, k);
        &mut self.data[idx]
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    /// Cyclically shifts the first-azimuth axis: output slot `i` takes the
    /// value previously at `i - shift` (indices mod `2B`).
    pub fn roll_alpha(&self, shift: i64) -> Self {
        let n = 2 * self.bandwidth;
        let mut out = Self::zeros(self.bandwidth);
        for i in 0..n {
            let src = (i as i64 - shift).rem_euclid(n as i64) as usize;
            let dst_base = i * n * n;
            let src_base = src * n * n;
            out.data[dst_base..dst_base + n * n]
                .copy_from_slice(&self.data[src_base..src_base + n * n]);
        }
        out
    }
}

/// Wigner-D coefficients: one dense complex `(2l+1) x (2l+1)` matrix per
/// degree `l` below the bandwidth, indexed `[(m+l)·(2l+1) + (n+l)]`.
#[derive(Debug, Clone, PartialEq)]
pub struct So3Spectrum<T> {
    mats: Vec<Vec<Complex<T>>>,
}

impl<T: Real> So3Spectrum<T> {
    pub fn zeros(bandwidth: usize) -> Self {
        assert!(bandwidth >= 1, "bandwidth must be at least 1");
        Self {
            mats: (0..bandwidth)
                .map(|l| {
                    let dim = 2 * l + 1;
                    vec![Complex::new(T::zero(), T::zero()); dim * dim]
                })
                .collect(),
        }
    }

    pub fn bandwidth(&self) -> usize {
        self.mats.len()
    }

    pub fn degree(&self, l: usize) -> &[Complex<T>] {
        &self.mats[l]
    }

    pub fn degree_mut(&mut self, l: usize) -> &mut [Complex<T>] {
        &mut self.mats[l]
    }

    #[inline]
    pub fn entry(&self, l: usize, m: i64, n: i64) -> Complex<T> {
        let dim = 2 * l + 1;
        let li = l as i64;
        self.mats[l][((m + li) as usize) * dim + (n + li) as usize]
    }

    #[inline]
    pub fn entry_mut(&mut self, l: usize, m: i64, n: i64) -> &mut Complex<T> {
        let dim = 2 * l + 1;
        let li = l as i64;
        &mut self.mats[l][((m + li) as usize) * dim + (n + li) as usize]
    }

    /// Copies into a new bandwidth: degrees past the target are dropped,
    /// missing degrees are zero.
    pub fn resized(&self, bandwidth: usize) -> Self {
        let mut out = Self::zeros(bandwidth);
        for l in 0..bandwidth.min(self.mats.len()) {
            out.mats[l].copy_from_slice(&self.mats[l]);
        }
        out
    }

    /// Real pairing `Σ Re(conj(a)·b)` over all coefficients.
    pub fn dot(&self, other: &Self) -> T {
        assert_eq!(self.bandwidth(), other.bandwidth());
        let mut acc = T::zero();
        for (a_mat, b_mat) in self.mats.iter().zip(&other.mats) {
            for (a, b) in a_mat.iter().zip(b_mat) {
                acc += a.re * b.re + a.im * b.im;
            }
        }
        acc
    }

    pub fn norm_sq(&self) -> T {
        self.dot(self)
    }

    /// Coefficients of `R ↦ f(rot⁻¹·R)`: each degree is left-multiplied by
    /// `conj(D^l(rot))`.
    pub fn rotated(&self, rot: &RotationZyz<T>) -> Self {
        let mut out = Self::zeros(self.bandwidth());
        for l in 0..self.bandwidth() {
            let dim = 2 * l + 1;
            let big_d = wigner_big_d::<T>(l, rot);
            for r in 0..dim {
                for c in 0..dim {
                    let mut acc = Complex::new(T::zero(), T::zero());
                    for p in 0..dim {
                        acc += big_d[r * dim + p].conj() * self.mats[l][p * dim + c];
                    }
                    out.mats[l][r * dim + c] = acc;
                }
            }
        }
        out
    }

    /// Evaluates the band-limited signal at an arbitrary rotation via the
    /// direct series `Re Σ_l (2l+1)/(8π²) Σ_mn F[l][m,n]·D^l_{mn}(R)`.
    pub fn evaluate(&self, rot: &RotationZyz<T>) -> T {
        let mut acc = Complex::new(T::zero(), T::zero());
        for l in 0..self.bandwidth() {
            let dim = 2 * l + 1;
            let big_d = wigner_big_d::<T>(l, rot);
            let mut per_degree = Complex::new(T::zero(), T::zero());
            for idx in 0..dim * dim {
                per_degree += self.mats[l][idx] * big_d[idx];
            }
            acc += per_degree * degree_norm::<T>(l);
        }
        acc.re
    }
}

/// Transform context for one bandwidth: cached FFT plans, Wigner-d tables on
/// the inclination rings, and the quadrature weights.
pub struct So3Fft<T: Real> {
    bandwidth: usize,
    tables: WignerTables<T>,
    /// `(2π/2B)²·w_j`: the measure of one `(alpha, gamma)` cell times the
    /// inclination quadrature weight.
    cell_weights: Vec<T>,
    /// `(2l+1)/(8π²)` per degree.
    degree_norms: Vec<T>,
    ones_rings: Vec<T>,
    ones_degrees: Vec<T>,
    fft_pos: Arc<dyn Fft<T>>,
    fft_neg: Arc<dyn Fft<T>>,
}

impl<T: Real> So3Fft<T> {
    pub fn new(bandwidth: usize) -> Self {
        assert!(bandwidth >= 1, "bandwidth must be at least 1");
        let n = 2 * bandwidth;
        let mut planner = FftPlanner::<T>::new();
        let fft_pos = planner.plan_fft(n, FftDirection::Inverse);
        let fft_neg = planner.plan_fft(n, FftDirection::Forward);
        let cell = T::tau() / T::of_usize(n);
        let cell_sq = cell * cell;
        let cell_weights = quadrature_weights::<T>(bandwidth)
            .into_iter()
            .map(|w| w * cell_sq)
            .collect();
        Self {
            bandwidth,
            tables: WignerTables::new(bandwidth),
            cell_weights,
            degree_norms: (0..bandwidth).map(degree_norm::<T>).collect(),
            ones_rings: vec![T::one(); n],
            ones_degrees: vec![T::one(); bandwidth],
            fft_pos,
            fft_neg,
        }
    }

    pub fn bandwidth(&self) -> usize {
        self.bandwidth
    }

    pub fn tables(&self) -> &WignerTables<T> {
        &self.tables
    }

    #[inline]
    fn bin(&self, order: i64) -> usize {
        order.rem_euclid(2 * self.bandwidth as i64) as usize
    }

    /// In-place FFT along the `gamma` axis (contiguous) then the `alpha` axis
    /// (strided), in the given sign convention.
    fn fft2(&self, buf: &mut [Complex<T>], direction: FftDirection) {
        let n = 2 * self.bandwidth;
        let fft = match direction {
            FftDirection::Inverse => &self.fft_pos,
            FftDirection::Forward => &self.fft_neg,
        };
        fft.process(buf);
        let mut col = vec![Complex::new(T::zero(), T::zero()); n];
        let plane = n * n;
        for base in 0..plane {
            for (i, slot) in col.iter_mut().enumerate() {
                *slot = buf[i * plane + base];
            }
            fft.process(&mut col);
            for (i, slot) in col.iter().enumerate() {
                buf[i * plane + base] = *slot;
            }
        }
    }

    /// Shared analysis kernel: positively-signed 2D FFT over the azimuthal
    /// axes, then for each degree a `ring_weights`-weighted Wigner-d
    /// contraction over rings, scaled by `degree_scales[l]`.
    fn analysis(
        &self,
        signal: &So3Signal<T>,
        ring_weights: &[T],
        degree_scales: &[T],
    ) -> So3Spectrum<T> {
        assert_eq!(signal.bandwidth(), self.bandwidth, "bandwidth mismatch");
        let n = 2 * self.bandwidth;
        let mut grid: Vec<Complex<T>> = signal
            .data()
            .iter()
            .map(|&v| Complex::new(v, T::zero()))
            .collect();
        self.fft2(&mut grid, FftDirection::Inverse);
        let mut spec = So3Spectrum::zeros(self.bandwidth);
        for l in 0..self.bandwidth {
            let li = l as i64;
            let dim = 2 * l + 1;
            for m in -li..=li {
                let row = self.bin(m) * n;
                for nn in -li..=li {
                    let col = self.bin(nn);
                    let mut acc = Complex::new(T::zero(), T::zero());
                    for j in 0..n {
                        let scale = ring_weights[j] * self.tables.entry(l, j, m, nn);
                        acc += grid[(row + j) * n + col] * scale;
                    }
                    spec.mats[l][((m + li) as usize) * dim + (nn + li) as usize] =
                        acc * degree_scales[l];
                }
            }
        }
        spec
    }

    /// Shared synthesis kernel: accumulate the Wigner-d expansion onto the
    /// frequency grid, then a negatively-signed 2D FFT; the result is the real
    /// part.
    fn synthesis(
        &self,
        spectrum: &So3Spectrum<T>,
        ring_weights: &[T],
        degree_scales: &[T],
    ) -> So3Signal<T> {
        assert_eq!(spectrum.bandwidth(), self.bandwidth, "bandwidth mismatch");
        let n = 2 * self.bandwidth;
        let mut grid = vec![Complex::new(T::zero(), T::zero()); n * n * n];
        for l in 0..self.bandwidth {
            let li = l as i64;
            let dim = 2 * l + 1;
            for m in -li..=li {
                let row = self.bin(m) * n;
                for nn in -li..=li {
                    let col = self.bin(nn);
                    let coeff = spectrum.mats[l][((m + li) as usize) * dim + (nn + li) as usize]
                        * degree_scales[l];
                    for j in 0..n {
                        let scale = ring_weights[j] * self.tables.entry(l, j, m, nn);
                        grid[(row + j) * n + col] += coeff * scale;
                    }
                }
            }
        }
        self.fft2(&mut grid, FftDirection::Forward);
        So3Signal::from_vec(self.bandwidth, grid.into_iter().map(|c| c.re).collect())
    }

    /// Analysis of a grid signal into Wigner-D coefficients.
    pub fn forward(&self, signal: &So3Signal<T>) -> So3Spectrum<T> {
        self.analysis(signal, &self.cell_weights, &self.ones_degrees)
    }

    /// Synthesis of a coefficient set back onto the grid. Exact inverse of
    /// [`forward`](Self::forward) for coefficients of a real signal.
    pub fn inverse(&self, spectrum: &So3Spectrum<T>) -> So3Signal<T> {
        self.synthesis(spectrum, &self.ones_rings, &self.degree_norms)
    }

    /// Transpose of [`forward`](Self::forward) under the real pairings
    /// `Σ f·g` on grids and `Σ Re(conj(F)·G)` on coefficients.
    pub fn forward_adjoint(&self, spectrum: &So3Spectrum<T>) -> So3Signal<T> {
        self.synthesis(spectrum, &self.cell_weights, &self.ones_degrees)
    }

    /// Transpose of [`inverse`](Self::inverse) under the same pairings.
    pub fn inverse_adjoint(&self, signal: &So3Signal<T>) -> So3Spectrum<T> {
        self.analysis(signal, &self.ones_rings, &self.degree_norms)
    }

    /// Grid-cell quadrature weight `(2π/2B)²·w_j` for ring `j`.
    pub fn cell_weight(&self, j: usize) -> T {
        self.cell_weights[j]
    }

    /// Synthesis weight `(2l+1)/(8π²)` for degree `l`.
    pub fn degree_norm(&self, l: usize) -> T {
        self.degree_norms[l]
    }
}
