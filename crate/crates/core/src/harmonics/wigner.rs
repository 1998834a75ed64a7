//! Wigner little-d matrices via a degree-increment three-term recurrence.
//!
//! For fixed orders `(m, n)` the recurrence walks upward from the seed degree
//! `l0 = max(|m|, |n|)`, whose closed form is evaluated in log space so that
//! high degrees neither overflow nor underflow prematurely. Upward recurrence
//! tracks the dominant solution, which keeps the walk stable well past
//! degree 128.

use crate::scalar::Real;

/// `ln C(n, k)` by direct accumulation; exact enough for seed magnitudes.
fn ln_binomial(n: usize, k: usize) -> f64 {
    let k = k.min(n - k);
    let mut acc = 0.0f64;
    for i in 1..=k {
        acc += ((n - k + i) as f64).ln() - (i as f64).ln();
    }
    acc
}

/// Top-row seed `d^j_{j,n}(beta) = sqrt(C(2j, j+n))·cos^{j+n}(β/2)·(-sin(β/2))^{j-n}`.
fn seed_top_row(j: i64, n: i64, cos_half: f64, sin_half: f64) -> f64 {
    let p_cos = (j + n) as u32;
    let p_sin = (j - n) as u32;
    let sign = if p_sin % 2 == 0 { 1.0 } else { -1.0 };
    // Zero powers bypass the logs so the poles stay exact.
    if cos_half == 0.0 && p_cos > 0 {
        return 0.0;
    }
    if sin_half == 0.0 && p_sin > 0 {
        return 0.0;
    }
    let mut ln = 0.5 * ln_binomial(2 * j as usize, (j + n) as usize);
    if p_cos > 0 {
        ln += p_cos as f64 * cos_half.ln();
    }
    if p_sin > 0 {
        ln += p_sin as f64 * sin_half.ln();
    }
    sign * ln.exp()
}

/// Seed `d^{l0}_{mn}(beta)` at `l0 = max(|m|, |n|)`, reduced to the top-row
/// closed form through the index symmetries
/// `d_{m'm} = (-1)^{m'-m} d_{mm'} = (-1)^{m'-m} d_{-m',-m}`.
fn seed(m: i64, n: i64, cos_half: f64, sin_half: f64) -> f64 {
    let l0 = m.abs().max(n.abs());
    if l0 == 0 {
        return 1.0;
    }
    if m == l0 {
        seed_top_row(l0, n, cos_half, sin_half)
    } else if m == -l0 {
        let sign = if (l0 + n) % 2 == 0 { 1.0 } else { -1.0 };
        sign * seed_top_row(l0, -n, cos_half, sin_half)
    } else if n == l0 {
        let sign = if (m - l0).rem_euclid(2) == 0 { 1.0 } else { -1.0 };
        sign * seed_top_row(l0, m, cos_half, sin_half)
    } else {
        // n == -l0
        seed_top_row(l0, -m, cos_half, sin_half)
    }
}

/// One upward step: from `d^l` and `d^{l-1}` to `d^{l+1}` at fixed `(m, n)`.
fn step(l: i64, m: i64, n: i64, cos_beta: f64, d_l: f64, d_lm1: f64) -> f64 {
    let lp = (l + 1) as f64;
    let denom = ((lp * lp - (m * m) as f64) * (lp * lp - (n * n) as f64)).sqrt();
    let mid = if l == 0 {
        cos_beta
    } else {
        cos_beta - (m * n) as f64 / (l as f64 * lp)
    };
    let prev = if l == 0 {
        0.0
    } else {
        let lf = l as f64;
        ((lf * lf - (m * m) as f64) * (lf * lf - (n * n) as f64)).sqrt() / lf
    };
    (lp / denom) * ((2 * l + 1) as f64 * mid * d_l - prev * d_lm1)
}

/// Computes the full `(2l+1) x (2l+1)` Wigner little-d matrix `d^l(beta)`,
/// row-major with index `[(m+l)·(2l+1) + (n+l)]`.
pub fn wigner_d<T: Real>(l: usize, beta: T) -> Vec<T> {
    let b = beta.to_f64_value();
    let (sin_half, cos_half) = (b / 2.0).sin_cos();
    let cos_beta = b.cos();
    let dim = 2 * l + 1;
    let li = l as i64;
    let mut out = vec![T::zero(); dim * dim];
    for m in -li..=li {
        for n in -li..=li {
            let l0 = m.abs().max(n.abs());
            let mut d_cur = seed(m, n, cos_half, sin_half);
            let mut d_prev = 0.0;
            for deg in l0..li {
                let next = step(deg, m, n, cos_beta, d_cur, d_prev);
                d_prev = d_cur;
                d_cur = next;
            }
            out[((m + li) as usize) * dim + (n + li) as usize] = T::of(d_cur);
        }
    }
    out
}

/// Precomputed `d^l(beta_j)` for every degree `l < B` at every inclination
/// ring of the `2B` offset grid.
#[derive(Debug, Clone)]
pub struct WignerTables<T> {
    bandwidth: usize,
    betas: Vec<T>,
    /// `per_degree[l][j]` is the row-major `(2l+1) x (2l+1)` matrix at ring `j`.
    per_degree: Vec<Vec<Vec<T>>>,
}

impl<T: Real> WignerTables<T> {
    /// Tables on the offset inclination grid `beta_j = π(2j+1)/(4B)`.
    pub fn new(bandwidth: usize) -> Self {
        let betas: Vec<T> = (0..2 * bandwidth)
            .map(|j| {
                T::PI() * T::of_usize(2 * j + 1) / T::of_usize(4 * bandwidth)
            })
            .collect();
        Self::with_betas(bandwidth, betas)
    }

    /// Tables at caller-chosen inclinations (used by tests; `new` is the grid case).
    pub fn with_betas(bandwidth: usize, betas: Vec<T>) -> Self {
        let rings = betas.len();
        let mut per_degree: Vec<Vec<Vec<T>>> = (0..bandwidth)
            .map(|l| {
                let dim = 2 * l + 1;
                vec![vec![T::zero(); dim * dim]; rings]
            })
            .collect();
        for (j, beta) in betas.iter().enumerate() {
            let b = beta.to_f64_value();
            let (sin_half, cos_half) = (b / 2.0).sin_cos();
            let cos_beta = b.cos();
            let li_max = bandwidth as i64 - 1;
            for m in -li_max..=li_max {
                for n in -li_max..=li_max {
                    let l0 = m.abs().max(n.abs());
                    let mut d_cur = seed(m, n, cos_half, sin_half);
                    let mut d_prev = 0.0;
                    for l in l0..=li_max {
                        let dim = (2 * l + 1) as usize;
                        per_degree[l as usize][j]
                            [((m + l) as usize) * dim + (n + l) as usize] = T::of(d_cur);
                        let next = step(l, m, n, cos_beta, d_cur, d_prev);
                        d_prev = d_cur;
                        d_cur = next;
                    }
                }
            }
        }
        Self {
            bandwidth,
            betas,
            per_degree,
        }
    }

    pub fn bandwidth(&self) -> usize {
        self.bandwidth
    }

    pub fn betas(&self) -> &[T] {
        &self.betas
    }

    /// The matrix `d^l(beta_j)`, row-major `(2l+1) x (2l+1)`.
    #[inline]
    pub fn d(&self, l: usize, j: usize) -> &[T] {
        &self.per_degree[l][j]
    }

    /// Entry `d^l_{mn}(beta_j)` with signed orders.
    #[inline]
    pub fn entry(&self, l: usize, j: usize, m: i64, n: i64) -> T {
        let dim = 2 * l + 1;
        let li = l as i64;
        self.per_degree[l][j][((m + li) as usize) * dim + (n + li) as usize]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(mat: &[f64], l: usize, m: i64, n: i64) -> f64 {
        let dim = 2 * l + 1;
        let li = l as i64;
        mat[((m + li) as usize) * dim + (n + li) as usize]
    }

    #[test]
    fn degree_zero_is_one() {
        let d = wigner_d::<f64>(0, 1.234);
        assert_eq!(d, vec![1.0]);
    }

    #[test]
    fn degree_one_closed_form() {
        for &beta in &[0.1f64, 0.7, 1.5708, 2.9] {
            let d = wigner_d::<f64>(1, beta);
            let (s, c) = beta.sin_cos();
            let half = beta / 2.0;
            let cases = [
                (1, 1, half.cos().powi(2)),
                (1, 0, -s / 2f64.sqrt()),
                (1, -1, half.sin().powi(2)),
                (0, 1, s / 2f64.sqrt()),
                (0, 0, c),
                (0, -1, -s / 2f64.sqrt()),
                (-1, 1, half.sin().powi(2)),
                (-1, 0, s / 2f64.sqrt()),
                (-1, -1, half.cos().powi(2)),
            ];
            for (m, n, want) in cases {
                let got = entry(&d, 1, m, n);
                assert!(
                    (got - want).abs() < 1e-12,
                    "d1[{m},{n}]({beta}) = {got}, want {want}"
                );
            }
        }
    }

    #[test]
    fn degree_two_closed_form() {
        for &beta in &[0.3f64, 1.1, 2.2] {
            let d = wigner_d::<f64>(2, beta);
            let (s, c) = beta.sin_cos();
            let half = beta / 2.0;
            let (sh, ch) = (half.sin(), half.cos());
            let cases = [
                (2, 2, ch.powi(4)),
                (2, 1, -2.0 * ch.powi(3) * sh),
                (2, 0, (3.0f64 / 8.0).sqrt() * s * s),
                (2, -1, -2.0 * sh.powi(3) * ch),
                (2, -2, sh.powi(4)),
                (1, 1, ch * ch * (2.0 * c - 1.0)),
                (1, 0, -(3.0f64 / 8.0).sqrt() * 2.0 * s * c),
                (1, -1, sh * sh * (2.0 * c + 1.0)),
                (0, 0, 0.5 * (3.0 * c * c - 1.0)),
            ];
            for (m, n, want) in cases {
                let got = entry(&d, 2, m, n);
                assert!(
                    (got - want).abs() < 1e-12,
                    "d2[{m},{n}]({beta}) = {got}, want {want}"
                );
            }
        }
    }

    #[test]
    fn half_turn_value_matches_legendre() {
        // d^2_{00}(π/2) = P_2(0) = -1/2.
        let d = wigner_d::<f64>(2, std::f64::consts::FRAC_PI_2);
        assert!((entry(&d, 2, 0, 0) + 0.5).abs() < 1e-14);
    }

    #[test]
    fn identity_at_zero_angle() {
        for l in [1usize, 3, 7, 16] {
            let d = wigner_d::<f64>(l, 0.0);
            let dim = 2 * l + 1;
            for r in 0..dim {
                for c in 0..dim {
                    let want = if r == c { 1.0 } else { 0.0 };
                    assert!(
                        (d[r * dim + c] - want).abs() < 1e-12,
                        "l={l} entry ({r},{c})"
                    );
                }
            }
        }
    }

    #[test]
    fn transpose_symmetry() {
        for l in [1usize, 2, 5, 12] {
            let d = wigner_d::<f64>(l, 0.83);
            let li = l as i64;
            for m in -li..=li {
                for n in -li..=li {
                    let sign = if (m - n).rem_euclid(2) == 0 { 1.0 } else { -1.0 };
                    let a = entry(&d, l, m, n);
                    let b = entry(&d, l, n, m);
                    assert!((a - sign * b).abs() < 1e-12, "l={l} m={m} n={n}");
                }
            }
        }
    }

    #[test]
    fn rows_are_orthonormal_at_degree_128() {
        let l = 128usize;
        let d = wigner_d::<f64>(l, 1.234567);
        let dim = 2 * l + 1;
        for r in [0usize, 1, 64, 128, 200, 256] {
            for r2 in [0usize, 64, 256] {
                let dot: f64 = (0..dim).map(|c| d[r * dim + c] * d[r2 * dim + c]).sum();
                let want = if r == r2 { 1.0 } else { 0.0 };
                assert!(
                    (dot - want).abs() < 1e-10,
                    "rows {r},{r2}: {dot} (want {want})"
                );
            }
        }
    }

    #[test]
    fn tables_match_single_degree_evaluations() {
        let tables = WignerTables::<f64>::new(6);
        for l in 0..6 {
            for j in 0..12 {
                let single = wigner_d::<f64>(l, tables.betas()[j]);
                let dim = 2 * l + 1;
                for idx in 0..dim * dim {
                    assert!((tables.d(l, j)[idx] - single[idx]).abs() < 1e-13);
                }
            }
        }
    }

    #[test]
    fn quadrature_orthogonality_of_little_d() {
        // Σ_j w_j d^l_{mn}(β_j) d^{l'}_{mn}(β_j) = 2/(2l+1) δ_{ll'} for l, l' < B.
        let b = 8usize;
        let tables = WignerTables::<f64>::new(b);
        let w = super::super::quadrature_weights::<f64>(b);
        for l in 0..b {
            for lp in 0..b {
                let li = l.min(lp) as i64;
                for m in -li..=li {
                    for n in -li..=li {
                        let mut acc = 0.0;
                        for j in 0..2 * b {
                            acc += w[j] * tables.entry(l, j, m, n) * tables.entry(lp, j, m, n);
                        }
                        let want = if l == lp { 2.0 / (2 * l + 1) as f64 } else { 0.0 };
                        assert!(
                            (acc - want).abs() < 1e-10,
                            "l={l} l'={lp} m={m} n={n}: {acc} want {want}"
                        );
                    }
                }
            }
        }
    }
}
