//! Constant-velocity Gaussian-process prior on trajectories.
//!
//! Each DoF follows a double integrator driven by white noise on
//! acceleration, so the per-DoF state is (position, velocity) and every
//! matrix block is a scalar multiple of the identity. The 2x2 forms below
//! carry the whole structure.

use nalgebra::Matrix2;

/// State transition over horizon `s`.
pub fn phi(s: f64) -> Matrix2<f64> {
    Matrix2::new(1.0, s, 0.0, 1.0)
}

/// Process-noise covariance over horizon `s` per unit noise scale:
/// integrating white acceleration noise gives the standard cubic blocks.
pub fn q_cov(s: f64) -> Matrix2<f64> {
    Matrix2::new(s * s * s / 3.0, s * s / 2.0, s * s / 2.0, s)
}

/// Interpolation coefficients at offset `s` into a support segment of
/// length `dt`: the interpolated state is `lam * x_i + psi * x_{i+1}`
/// applied blockwise per DoF, with
/// `psi = Q(s) * phi(dt - s)^T * Q(dt)^-1` and `lam = phi(s) - psi * phi(dt)`.
///
/// The process-noise scale enters `psi` as `Qc * ... * Qc^-1` and cancels,
/// so the coefficients depend only on `s` and `dt`.
pub fn interp_coeffs(s: f64, dt: f64) -> (Matrix2<f64>, Matrix2<f64>) {
    debug_assert!(dt > 0.0 && (0.0..=dt).contains(&s));
    let q_dt = q_cov(dt);
    let det = q_dt[(0, 0)] * q_dt[(1, 1)] - q_dt[(0, 1)] * q_dt[(1, 0)];
    let q_inv = Matrix2::new(q_dt[(1, 1)], -q_dt[(0, 1)], -q_dt[(1, 0)], q_dt[(0, 0)]) / det;
    let psi = q_cov(s) * phi(dt - s).transpose() * q_inv;
    let lam = phi(s) - psi * phi(dt);
    (lam, psi)
}
