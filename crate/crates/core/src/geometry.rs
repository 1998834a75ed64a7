//! Points, spherical coordinates, and ZYZ rotations.
//!
//! Conventions, used consistently across the crate:
//!
//! * Spherical coordinates are `(alpha, beta, h)`: azimuth `alpha ∈ [0, 2π)`
//!   measured from +x toward +y, inclination `beta ∈ [0, π]` measured from the
//!   +z axis, and radius `h ∈ [0, 1]` for normalized clouds.
//! * Rotations are parameterized intrinsically as `R = Z(alpha)·Y(beta)·Z(gamma)`
//!   and stored with their row-major 3x3 matrix.
//! * Uniform (Haar) rotations are drawn as `alpha, gamma ~ U[0, 2π)`,
//!   `beta = arccos(U[-1, 1])`.

use std::sync::atomic::{AtomicU64, Ordering};

use rand::Rng;
use thiserror::Error;

use crate::scalar::Real;

/// A point in Cartesian 3-space.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point3<T> {
    pub x: T,
    pub y: T,
    pub z: T,
}

impl<T: Real> Point3<T> {
    pub fn new(x: T, y: T, z: T) -> Self {
        Self { x, y, z }
    }

    pub fn zero() -> Self {
        Self::new(T::zero(), T::zero(), T::zero())
    }

    pub fn norm(&self) -> T {
        (self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }

    pub fn sub(&self, other: &Self) -> Self {
        Self::new(self.x - other.x, self.y - other.y, self.z - other.z)
    }

    pub fn scale(&self, s: T) -> Self {
        Self::new(self.x * s, self.y * s, self.z * s)
    }
}

/// Spherical coordinates `(alpha, beta, h)`; see the module docs for ranges.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SphCoord<T> {
    pub alpha: T,
    pub beta: T,
    pub h: T,
}

/// Errors from rotation-matrix decomposition.
#[derive(Debug, Error, PartialEq)]
pub enum RotationError {
    #[error("matrix is not a rotation: max deviation {deviation} from orthonormality")]
    NotOrthonormal { deviation: f64 },
    #[error("matrix is not a rotation: determinant {det} is not +1")]
    NotProperRotation { det: f64 },
}

/// Errors from point-cloud operations.
#[derive(Debug, Error, PartialEq)]
pub enum CloudError {
    #[error("operation requires a non-empty point cloud")]
    EmptyCloud,
}

/// A rotation stored both as ZYZ Euler angles and as its matrix.
///
/// The angles are canonicalized on construction: `alpha` and `gamma` wrap into
/// `[0, 2π)` and `beta` folds into `[0, π]` (using
/// `R(a, -b, g) = R(a+π, b, g+π)`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RotationZyz<T> {
    pub alpha: T,
    pub beta: T,
    pub gamma: T,
    matrix: [[T; 3]; 3],
}

fn wrap_tau<T: Real>(angle: T) -> T {
    let tau = T::tau();
    let mut a = angle % tau;
    if a < T::zero() {
        a += tau;
    }
    // The remainder can round up to exactly tau; fold that back to zero.
    if a >= tau {
        a -= tau;
    }
    a
}

/// Builds the rotation `Z(alpha)·Y(beta)·Z(gamma)`.
pub fn rot_from_zyz<T: Real>(alpha: T, beta: T, gamma: T) -> RotationZyz<T> {
    let (mut alpha, mut beta, mut gamma) = (alpha, beta, gamma);
    beta = wrap_tau(beta);
    if beta > T::PI() {
        // R(a, 2π - b', g) with b' = 2π - b in (0, π): fold via the Z(π) identity.
        beta = T::tau() - beta;
        alpha = alpha + T::PI();
        gamma = gamma + T::PI();
    }
    alpha = wrap_tau(alpha);
    gamma = wrap_tau(gamma);

    let (sa, ca) = alpha.sin_cos();
    let (sb, cb) = beta.sin_cos();
    let (sg, cg) = gamma.sin_cos();
    let matrix = [
        [ca * cb * cg - sa * sg, -ca * cb * sg - sa * cg, ca * sb],
        [sa * cb * cg + ca * sg, -sa * cb * sg + ca * cg, sa * sb],
        [-sb * cg, sb * sg, cb],
    ];
    RotationZyz {
        alpha,
        beta,
        gamma,
        matrix,
    }
}

impl<T: Real> RotationZyz<T> {
    pub fn identity() -> Self {
        rot_from_zyz(T::zero(), T::zero(), T::zero())
    }

    pub fn matrix(&self) -> &[[T; 3]; 3] {
        &self.matrix
    }

    /// Applies the rotation to a point.
    pub fn apply(&self, p: &Point3<T>) -> Point3<T> {
        let m = &self.matrix;
        Point3::new(
            m[0][0] * p.x + m[0][1] * p.y + m[0][2] * p.z,
            m[1][0] * p.x + m[1][1] * p.y + m[1][2] * p.z,
            m[2][0] * p.x + m[2][1] * p.y + m[2][2] * p.z,
        )
    }

    /// The inverse rotation (transpose of the matrix).
    pub fn inverse(&self) -> Self {
        let m = &self.matrix;
        let mt = [
            [m[0][0], m[1][0], m[2][0]],
            [m[0][1], m[1][1], m[2][1]],
            [m[0][2], m[1][2], m[2][2]],
        ];
        zyz_from_rot(&mt).expect("transpose of a rotation is a rotation")
    }

    /// Composition `self · other` (apply `other` first).
    pub fn compose(&self, other: &Self) -> Self {
        let a = &self.matrix;
        let b = &other.matrix;
        let mut m = [[T::zero(); 3]; 3];
        for (i, row) in m.iter_mut().enumerate() {
            for (j, entry) in row.iter_mut().enumerate() {
                *entry = a[i][0] * b[0][j] + a[i][1] * b[1][j] + a[i][2] * b[2][j];
            }
        }
        zyz_from_rot(&m).expect("product of rotations is a rotation")
    }
}

/// Recovers ZYZ angles from a rotation matrix.
///
/// Near the gimbal-locked poles (`|R[2][2]| ≈ 1`) the split between `alpha`
/// and `gamma` is degenerate; the convention here is `gamma = 0`.
pub fn zyz_from_rot<T: Real>(m: &[[T; 3]; 3]) -> Result<RotationZyz<T>, RotationError> {
    // Validate: R^T R = I and det = +1.
    let mut max_dev = T::zero();
    for i in 0..3 {
        for j in 0..3 {
            let mut dot = T::zero();
            for k in 0..3 {
                dot += m[k][i] * m[k][j];
            }
            let target = if i == j { T::one() } else { T::zero() };
            max_dev = max_dev.max((dot - target).abs());
        }
    }
    let ortho_tol = T::of(1e-9);
    if max_dev > ortho_tol {
        return Err(RotationError::NotOrthonormal {
            deviation: max_dev.to_f64_value(),
        });
    }
    let det = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
        - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
    if (det - T::one()).abs() > ortho_tol {
        return Err(RotationError::NotProperRotation {
            det: det.to_f64_value(),
        });
    }

    let cb = m[2][2].max(-T::one()).min(T::one());
    let gimbal_tol = T::of(1e-12);
    let (alpha, beta, gamma) = if cb >= T::one() - gimbal_tol {
        // beta = 0: R = Z(alpha + gamma); put everything in alpha.
        (m[1][0].atan2(m[0][0]), T::zero(), T::zero())
    } else if cb <= -(T::one() - gimbal_tol) {
        // beta = π: R = Z(alpha - gamma)·Y(π); put everything in alpha.
        ((-m[1][0]).atan2(-m[0][0]), T::PI(), T::zero())
    } else {
        let beta = cb.acos();
        let alpha = m[1][2].atan2(m[0][2]);
        let gamma = m[2][1].atan2(-m[2][0]);
        (alpha, beta, gamma)
    };
    Ok(rot_from_zyz(wrap_tau(alpha), beta, wrap_tau(gamma)))
}

/// Converts a Cartesian point to spherical coordinates.
///
/// The origin maps to `(0, 0, 0)`; elsewhere `alpha = atan2(y, x)` wrapped to
/// `[0, 2π)` and `beta = arccos(z / h)`.
pub fn cart_to_sph<T: Real>(p: &Point3<T>) -> SphCoord<T> {
    let h = p.norm();
    if h == T::zero() {
        return SphCoord {
            alpha: T::zero(),
            beta: T::zero(),
            h: T::zero(),
        };
    }
    let mut alpha = p.y.atan2(p.x);
    if alpha < T::zero() {
        alpha += T::tau();
    }
    if alpha >= T::tau() {
        alpha = T::zero();
    }
    let beta = (p.z / h).max(-T::one()).min(T::one()).acos();
    SphCoord { alpha, beta, h }
}

/// Converts spherical coordinates back to a Cartesian point.
pub fn sph_to_cart<T: Real>(s: &SphCoord<T>) -> Point3<T> {
    let (sa, ca) = s.alpha.sin_cos();
    let (sb, cb) = s.beta.sin_cos();
    Point3::new(s.h * sb * ca, s.h * sb * sa, s.h * cb)
}

static HAAR_DRAWS: AtomicU64 = AtomicU64::new(0);

/// Serializes tests that draw Haar rotations or assert on [`haar_draw_count`].
///
/// The draw counter is process-global, so concurrently running tests would
/// otherwise perturb each other's before/after readings.
#[cfg(test)]
pub(crate) fn haar_test_guard() -> std::sync::MutexGuard<'static, ()> {
    use std::sync::{Mutex, OnceLock};
    static LOCK: OnceLock<Mutex<()>> = OnceLock::new();
    LOCK.get_or_init(|| Mutex::new(()))
        .lock()
        .unwrap_or_else(|poisoned| poisoned.into_inner())
}

/// Number of Haar rotations drawn since process start.
///
/// Test instrumentation: the training loop must never sample rotations
/// (no rotation augmentation), and tests pin that by watching this counter.
pub fn haar_draw_count() -> u64 {
    HAAR_DRAWS.load(Ordering::Relaxed)
}

/// Draws a rotation from the uniform (Haar) distribution on SO(3).
pub fn haar_random_rotation<T: Real, R: Rng + ?Sized>(rng: &mut R) -> RotationZyz<T> {
    HAAR_DRAWS.fetch_add(1, Ordering::Relaxed);
    let alpha = rng.gen::<f64>() * std::f64::consts::TAU;
    let gamma = rng.gen::<f64>() * std::f64::consts::TAU;
    let cos_beta = rng.gen::<f64>() * 2.0 - 1.0;
    let beta = cos_beta.clamp(-1.0, 1.0).acos();
    rot_from_zyz(T::of(alpha), T::of(beta), T::of(gamma))
}

/// A point cloud with optional per-point integer labels.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud<T> {
    pub points: Vec<Point3<T>>,
    pub labels: Option<Vec<usize>>,
}

impl<T: Real> PointCloud<T> {
    pub fn new(points: Vec<Point3<T>>) -> Self {
        Self {
            points,
            labels: None,
        }
    }

    pub fn with_labels(points: Vec<Point3<T>>, labels: Vec<usize>) -> Self {
        assert_eq!(points.len(), labels.len(), "one label per point");
        Self {
            points,
            labels: Some(labels),
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Rotates every point of a cloud, preserving labels and point order.
pub fn apply_rotation<T: Real>(cloud: &PointCloud<T>, rot: &RotationZyz<T>) -> PointCloud<T> {
    PointCloud {
        points: cloud.points.iter().map(|p| rot.apply(p)).collect(),
        labels: cloud.labels.clone(),
    }
}

/// Centers a cloud on its centroid and scales the farthest point to norm 1.
///
/// A cloud whose points all coincide maps to all-zeros. The operation is
/// idempotent up to roundoff.
pub fn normalize_cloud<T: Real>(cloud: &PointCloud<T>) -> Result<PointCloud<T>, CloudError> {
    if cloud.is_empty() {
        return Err(CloudError::EmptyCloud);
    }
    let n = T::of_usize(cloud.len());
    let mut c = Point3::zero();
    for p in &cloud.points {
        c.x += p.x;
        c.y += p.y;
        c.z += p.z;
    }
    c = c.scale(T::one() / n);
    let centered: Vec<Point3<T>> = cloud.points.iter().map(|p| p.sub(&c)).collect();
    let max_norm = centered
        .iter()
        .map(|p| p.norm())
        .fold(T::zero(), |a, b| a.max(b));
    let points = if max_norm <= T::of(1e-300) {
        vec![Point3::zero(); cloud.len()]
    } else {
        let inv = T::one() / max_norm;
        centered.iter().map(|p| p.scale(inv)).collect()
    };
    Ok(PointCloud {
        points,
        labels: cloud.labels.clone(),
    })
}
