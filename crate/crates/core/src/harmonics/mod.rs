//! Harmonic analysis on SO(3): Wigner-d matrices, quadrature on the offset
//! inclination grid, and the fast forward/inverse transforms between grid
//! signals and Wigner-D coefficients.
//!
//! A rotation is sampled as `R(alpha_i, beta_j, gamma_k)` on the
//! `2B x 2B x 2B` Euler grid (`alpha_i = gamma_k = 2πi/(2B)`,
//! `beta_j = π(2j+1)/(4B)`), and a band-limited signal is represented by one
//! complex `(2l+1) x (2l+1)` coefficient matrix per degree `l < B`.
//!
//! Conventions (pinned here, relied on everywhere else):
//!
//! * `D^l_{mn}(alpha, beta, gamma) = exp(-i·m·alpha)·d^l_{mn}(beta)·exp(-i·n·gamma)`
//!   with the real little-d in the standard (Wigner) sign convention, so
//!   `d^l_{00} = P_l(cos beta)` and `d^l(0) = I`.
//! * Analysis integrates against `conj(D)` with the unnormalized Haar measure
//!   `d(alpha)·sin(beta)d(beta)·d(gamma)` (total mass `8π²`).
//! * Synthesis is `f(R) = Σ_l (2l+1)/(8π²) Σ_{mn} F[l][m,n]·D^l_{mn}(R)`, so
//!   analysis-then-synthesis is the identity on band-limited signals.

mod quadrature;
mod transform;
mod wigner;

pub use quadrature::quadrature_weights;
pub use transform::{wigner_big_d, So3Fft, So3Signal, So3Spectrum};
pub use wigner::{wigner_d, WignerTables};
