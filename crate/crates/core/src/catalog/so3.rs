//! ZYZ Euler chart for SO(3): rotation matrices, left/right invariant
//! vector fields and the dual Maurer-Cartan rows, all in closed form so that
//! finite differencing them stays clean. The chart degenerates at
//! sin(theta) = 0, which every consumer excludes via its domain guard.

use nalgebra::{Matrix3, Vector3};

/// g = Rz(phi) Ry(theta) Rz(psi); rows are the body expressions of the
/// space axes (alpha, beta, gamma).
pub fn rotation(phi: f64, theta: f64, psi: f64) -> Matrix3<f64> {
    let (sf, cf) = phi.sin_cos();
    let (st, ct) = theta.sin_cos();
    let (sp, cp) = psi.sin_cos();
    let rz_phi = Matrix3::new(cf, -sf, 0.0, sf, cf, 0.0, 0.0, 0.0, 1.0);
    let ry = Matrix3::new(ct, 0.0, st, 0.0, 1.0, 0.0, -st, 0.0, ct);
    let rz_psi = Matrix3::new(cp, -sp, 0.0, sp, cp, 0.0, 0.0, 0.0, 1.0);
    rz_phi * ry * rz_psi
}

/// Third row of the rotation (the space vertical axis in body frame);
/// depends only on (theta, psi).
pub fn gamma_row(theta: f64, psi: f64) -> Vector3<f64> {
    let (st, ct) = theta.sin_cos();
    let (sp, cp) = psi.sin_cos();
    Vector3::new(-st * cp, st * sp, ct)
}

/// Body angular velocity from Euler rates: Omega = b_left(theta, psi) *
/// (phi_dot, theta_dot, psi_dot). Rows are the left Maurer-Cartan forms.
pub fn b_left(theta: f64, psi: f64) -> Matrix3<f64> {
    let (st, ct) = theta.sin_cos();
    let (sp, cp) = psi.sin_cos();
    Matrix3::new(-st * cp, sp, 0.0, st * sp, cp, 0.0, ct, 0.0, 1.0)
}

/// Euler-rate components of the left-invariant field X_i^L (body velocity
/// e_i), i in 0..3.
pub fn left_invariant_rates(i: usize, theta: f64, psi: f64) -> Vector3<f64> {
    let (st, ct) = theta.sin_cos();
    let (sp, cp) = psi.sin_cos();
    match i {
        0 => Vector3::new(-cp / st, sp, ct * cp / st),
        1 => Vector3::new(sp / st, cp, -ct * sp / st),
        2 => Vector3::new(0.0, 0.0, 1.0),
        _ => unreachable!(),
    }
}

/// Space angular velocity from Euler rates: omega = b_right(phi, theta) *
/// rates. Rows are the right Maurer-Cartan forms.
pub fn b_right(phi: f64, theta: f64) -> Matrix3<f64> {
    let (sf, cf) = phi.sin_cos();
    let (st, ct) = theta.sin_cos();
    Matrix3::new(0.0, -sf, st * cf, 0.0, cf, st * sf, 1.0, 0.0, ct)
}

/// Euler-rate components of the right-invariant field X_i^R (space velocity
/// e_i), i in 0..3.
pub fn right_invariant_rates(i: usize, phi: f64, theta: f64) -> Vector3<f64> {
    let (sf, cf) = phi.sin_cos();
    let (st, ct) = theta.sin_cos();
    match i {
        0 => Vector3::new(-ct / st * cf, -sf, cf / st),
        1 => Vector3::new(-ct / st * sf, cf, sf / st),
        2 => Vector3::new(1.0, 0.0, 0.0),
        _ => unreachable!(),
    }
}
