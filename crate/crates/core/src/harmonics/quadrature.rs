//! Inclination quadrature weights for the offset grid.
//!
//! The rings sit at `beta_j = π(2j+1)/(4B)`, `j = 0..2B`. The weights make
//! `Σ_j w_j P_l(cos beta_j)` reproduce `∫_0^π P_l(cos β) sin β dβ` exactly for
//! every degree `l < 2B`, which is precisely the band the spectral transforms
//! touch. Total mass is `Σ_j w_j = 2`, matching `∫ sin β dβ`.

use crate::scalar::Real;

/// Weights `w_j = (2/B)·sin(β_j)·Σ_{k<B} sin((2k+1)β_j)/(2k+1)` for the
/// `2B`-ring offset inclination grid.
pub fn quadrature_weights<T: Real>(bandwidth: usize) -> Vec<T> {
    let b = bandwidth as f64;
    (0..2 * bandwidth)
        .map(|j| {
            let theta = std::f64::consts::PI * (2 * j + 1) as f64 / (4.0 * b);
            let mut series = 0.0f64;
            for k in 0..bandwidth {
                let odd = (2 * k + 1) as f64;
                series += (odd * theta).sin() / odd;
            }
            T::of((2.0 / b) * theta.sin() * series)
        })
        .collect()
}
