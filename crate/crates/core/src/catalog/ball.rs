//! Homogeneous ball rolling without sliding inside a convex surface of
//! revolution z = phi(x^2 + y^2), chart (x, y, phi_e, theta_e, psi_e) with a
//! ZYZ Euler parameterization of the attitude through right-invariant
//! fields.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector, Vector3};
use serde::Deserialize;

use crate::dynamics::State;
use crate::error::{Error, Result};
use crate::geometry::{ChartPoint, KineticMetric, OneForm, ScalarField, VectorField};
use crate::momentum::ShapeGrid;
use crate::system::SystemSpecBuilder;

use super::so3;
use super::{expected_all_pass, CatalogEntry, Poly, References};

#[derive(Clone, Debug, Deserialize)]
#[serde(default)]
pub struct BallParams {
    pub m: f64,
    /// Ball radius.
    pub r: f64,
    /// Scalar inertia about the center.
    pub inertia: f64,
    /// Surface profile phi(tau), tau = x^2 + y^2.
    pub phi: Poly,
    pub gravity: f64,
    /// Exclusion margin around tau = 0.
    pub origin_margin: f64,
}

impl Default for BallParams {
    fn default() -> Self {
        // Paraboloid phi(tau) = a tau / 2 with a = 0.5; homogeneous ball.
        BallParams {
            m: 1.0,
            r: 1.0,
            inertia: 0.4,
            phi: Poly(vec![0.0, 0.25]),
            gravity: 1.0,
            origin_margin: 0.1,
        }
    }
}

struct Surface {
    phi: Poly,
    phi_d: Poly,
    phi_dd: Poly,
}

impl Surface {
    fn normal(&self, x: f64, y: f64) -> Vector3<f64> {
        let tau = x * x + y * y;
        let p = self.phi_d.eval(tau);
        let n3 = -1.0 / (1.0 + 4.0 * tau * p * p).sqrt();
        Vector3::new(2.0 * x * p * n3, 2.0 * y * p * n3, n3)
    }
}

fn euler(q: &ChartPoint) -> (f64, f64, f64) {
    (q.0[2], q.0[3], q.0[4])
}

/// Right-invariant field as a chart field (angle slots 2..5).
fn xr_field(i: usize) -> impl Fn(&ChartPoint) -> DVector<f64> {
    move |q: &ChartPoint| {
        let (phi_e, theta_e, _) = euler(q);
        let r = so3::right_invariant_rates(i, phi_e, theta_e);
        DVector::from_column_slice(&[0.0, 0.0, r[0], r[1], r[2]])
    }
}

pub fn ball_on_surface(params: BallParams) -> Result<CatalogEntry> {
    let BallParams { m, r, inertia, phi, gravity, origin_margin } = params;
    if !(m > 0.0 && r > 0.0 && inertia > 0.0) {
        return Err(Error::BadParameter("ball: mass, radius, inertia must be positive".into()));
    }
    if !(origin_margin > 0.0 && origin_margin < 1.0) {
        return Err(Error::BadParameter("ball: bad origin margin".into()));
    }
    let surface = Arc::new(Surface {
        phi: phi.clone(),
        phi_d: phi.derivative(),
        phi_dd: phi.derivative().derivative(),
    });
    // Convexity and contact conditions on a sample of the working range:
    // phi' > 0, A = phi' + 2 tau phi'' >= 0, meridian curvature below 1/r.
    for i in 1..=30 {
        let tau = 0.1 * i as f64;
        let p = surface.phi_d.eval(tau);
        let pp = surface.phi_dd.eval(tau);
        if p <= 0.0 {
            return Err(Error::BadParameter(format!("ball: phi'({tau}) <= 0")));
        }
        if p + 2.0 * tau * pp < 0.0 {
            return Err(Error::BadParameter(format!("ball: profile not convex at tau = {tau}")));
        }
        let zp = 2.0 * tau.sqrt() * p;
        let zpp = 2.0 * p + 4.0 * tau * pp;
        let curvature = zpp / (1.0 + zp * zp).powf(1.5);
        if curvature > 1.0 / r {
            return Err(Error::BadParameter(format!(
                "ball: meridian curvature {curvature:.3} exceeds 1/r at tau = {tau}"
            )));
        }
    }

    let metric = {
        let surface = surface.clone();
        KineticMetric::new(move |q: &ChartPoint| {
            let (x, y) = (q.0[0], q.0[1]);
            let n = surface.normal(x, y);
            let (phi_e, theta_e, _) = euler(q);
            let br = so3::b_right(phi_e, theta_e);
            let ang = br.transpose() * br * inertia;
            let mut kappa = DMatrix::zeros(5, 5);
            let n3sq = n[2] * n[2];
            kappa[(0, 0)] = m * (1.0 - n[1] * n[1]) / n3sq;
            kappa[(0, 1)] = m * n[0] * n[1] / n3sq;
            kappa[(1, 0)] = kappa[(0, 1)];
            kappa[(1, 1)] = m * (1.0 - n[0] * n[0]) / n3sq;
            kappa.view_mut((2, 2), (3, 3)).copy_from(&ang.into());
            kappa
        })
    };

    let potential = {
        let phi = phi.clone();
        ScalarField::new("U", move |q: &ChartPoint| {
            m * gravity * phi.eval(q.0[0] * q.0[0] + q.0[1] * q.0[1])
        })
    };

    let x1r = VectorField::new("X1R", xr_field(0));
    let x2r = VectorField::new("X2R", xr_field(1));
    let x3r = VectorField::new("X3R", xr_field(2));

    let x_n = {
        let surface = surface.clone();
        let (x1r, x2r, x3r) = (x1r.clone(), x2r.clone(), x3r.clone());
        VectorField::new("Xn", move |q: &ChartPoint| {
            let n = surface.normal(q.0[0], q.0[1]);
            x1r.at(q) * n[0] + x2r.at(q) * n[1] + x3r.at(q) * n[2]
        })
    };

    let y_x = {
        let surface = surface.clone();
        let (x_n, x2r) = (x_n.clone(), x2r.clone());
        VectorField::new("Yx", move |q: &ChartPoint| {
            let n = surface.normal(q.0[0], q.0[1]);
            let mut v = DVector::zeros(5);
            v[0] = 1.0;
            v += (x_n.at(q) * n[1] - x2r.at(q)) / (r * n[2]);
            v
        })
    };
    let y_y = {
        let surface = surface.clone();
        let (x_n, x1r) = (x_n.clone(), x1r.clone());
        VectorField::new("Yy", move |q: &ChartPoint| {
            let n = surface.normal(q.0[0], q.0[1]);
            let mut v = DVector::zeros(5);
            v[1] = 1.0;
            v -= (x_n.at(q) * n[0] - x1r.at(q)) / (r * n[2]);
            v
        })
    };

    let y1 = {
        let (y_x, y_y) = (y_x.clone(), y_y.clone());
        VectorField::new("Y1", move |q: &ChartPoint| {
            y_y.at(q) * q.0[0] - y_x.at(q) * q.0[1]
        })
    };
    let y2 = x_n.clone();
    let x0 = {
        let (y_x, y_y) = (y_x.clone(), y_y.clone());
        VectorField::new("X0", move |q: &ChartPoint| {
            y_x.at(q) * q.0[0] + y_y.at(q) * q.0[1]
        })
    };

    let z1 = {
        let surface = surface.clone();
        let (x_n, x2r) = (x_n.clone(), x2r.clone());
        VectorField::new("Z1", move |q: &ChartPoint| {
            let n = surface.normal(q.0[0], q.0[1]);
            (x2r.at(q) - x_n.at(q) * n[1]) / (r * n[2])
        })
    };
    let z2 = {
        let surface = surface.clone();
        let (x_n, x1r) = (x_n.clone(), x1r.clone());
        VectorField::new("Z2", move |q: &ChartPoint| {
            let n = surface.normal(q.0[0], q.0[1]);
            -(x1r.at(q) - x_n.at(q) * n[0]) / (r * n[2])
        })
    };

    // eps^1 = dx - r (n2 rho_3 - n3 rho_2), eps^2 = dy - r (n3 rho_1 - n1 rho_3)
    // with rho_i the rows of b_right in the angle slots.
    let eps_form = |which: usize| -> OneForm {
        let surface = surface.clone();
        OneForm::new(if which == 0 { "eps1" } else { "eps2" }, move |q: &ChartPoint| {
            let n = surface.normal(q.0[0], q.0[1]);
            let (phi_e, theta_e, _) = euler(q);
            let br = so3::b_right(phi_e, theta_e);
            let mut out = DVector::zeros(5);
            out[which] = 1.0;
            for j in 0..3 {
                let combo = if which == 0 {
                    n[1] * br[(2, j)] - n[2] * br[(1, j)]
                } else {
                    n[2] * br[(0, j)] - n[0] * br[(2, j)]
                };
                out[2 + j] = -r * combo;
            }
            out
        })
    };

    // Generators: planar rotation lifted to the attitude, plus the right
    // SO(3) action whose generators are the left-invariant fields
    // alpha_i X1R + beta_i X2R + gamma_i X3R.
    let gen0 = {
        let x3r = x3r.clone();
        VectorField::new("eta0", move |q: &ChartPoint| {
            let mut v = x3r.at(q);
            v[0] = -q.0[1];
            v[1] = q.0[0];
            v
        })
    };
    let gen_i = |i: usize| -> VectorField {
        let (x1r, x2r, x3r) = (x1r.clone(), x2r.clone(), x3r.clone());
        VectorField::new(format!("eta{}", i + 1), move |q: &ChartPoint| {
            let (phi_e, theta_e, psi_e) = euler(q);
            let g = so3::rotation(phi_e, theta_e, psi_e);
            x1r.at(q) * g[(0, i)] + x2r.at(q) * g[(1, i)] + x3r.at(q) * g[(2, i)]
        })
    };

    let tau_min = origin_margin * origin_margin;
    let spec = SystemSpecBuilder::new(
        "ball",
        5,
        metric,
        potential,
        vec![eps_form(0), eps_form(1)],
        x0,
        vec![y1, y2],
        vec![z1, z2],
    )
    .vertical_generators(vec![gen0, gen_i(0), gen_i(1), gen_i(2)])
    .shape(
        ScalarField::new("tau", |q: &ChartPoint| q.0[0] * q.0[0] + q.0[1] * q.0[1]),
        |s| ChartPoint::from_slice(&[s.max(0.0).sqrt(), 0.0, 0.0, std::f64::consts::FRAC_PI_2, 0.0]),
    )
    .domain_guard(move |q: &ChartPoint| {
        let tau = q.0[0] * q.0[0] + q.0[1] * q.0[1];
        tau > tau_min && q.0[3].sin() > 0.05
    })
    .sample_box(vec![
        (0.35, 1.4),
        (0.35, 1.4),
        (-std::f64::consts::PI, std::f64::consts::PI),
        (0.7, 2.4),
        (-std::f64::consts::PI, std::f64::consts::PI),
    ])
    .build();

    let e_const = inertia + m * r * r;
    let references = {
        let s1 = surface.clone();
        let s2 = surface.clone();
        let s3 = surface.clone();
        References {
            kappa_s: Some(Arc::new(move |q: &ChartPoint| {
                let tau = q.0[0] * q.0[0] + q.0[1] * q.0[1];
                DMatrix::from_row_slice(
                    2,
                    2,
                    &[e_const / (r * r) * tau, 0.0, 0.0, inertia],
                )
            })),
            n_matrix: Some(Arc::new(move |q: &ChartPoint| {
                let tau = q.0[0] * q.0[0] + q.0[1] * q.0[1];
                let n3 = s1.normal(q.0[0], q.0[1])[2];
                let p = s1.phi_d.eval(tau);
                let pp = s1.phi_dd.eval(tau);
                let a = p + 2.0 * tau * pp;
                DMatrix::from_row_slice(
                    2,
                    2,
                    &[
                        0.0,
                        -2.0 * tau * n3 * n3 * (2.0 * p * p * p - pp),
                        a * n3 * n3,
                        0.0,
                    ],
                ) * (2.0 * inertia / r * tau)
            })),
            r_matrix: Some(Arc::new(move |q: &ChartPoint| {
                let tau = q.0[0] * q.0[0] + q.0[1] * q.0[1];
                let n3 = s2.normal(q.0[0], q.0[1])[2];
                let p = s2.phi_d.eval(tau);
                let pp = s2.phi_dd.eval(tau);
                let a = p + 2.0 * tau * pp;
                DMatrix::from_row_slice(
                    2,
                    2,
                    &[
                        0.0,
                        -2.0 * r * inertia / e_const * n3 * n3 * (2.0 * p * p * p - pp),
                        a / r * n3 * n3,
                        0.0,
                    ],
                ) * (2.0 * tau)
            })),
            b_hgs_frame: Some(Arc::new(move |spec: &crate::system::SystemSpec, state: &State| {
                let q = &state.q;
                let tau = q.0[0] * q.0[0] + q.0[1] * q.0[1];
                let n3 = s3.normal(q.0[0], q.0[1])[2];
                let p = s3.phi_d.eval(tau);
                let pp = s3.phi_dd.eval(tau);
                let a = p + 2.0 * tau * pp;
                let (p0, ps, _) = crate::hamiltonization::frame_momenta(spec, state);
                let dim = 2 * spec.k() + 2;
                let mut out = DMatrix::zeros(dim, dim);
                // Frame order (X0, Y1, Y2).
                let c01 = tau * ps[1] * (1.0 / n3 + 2.0 * a / r * n3 * n3);
                let c02 = r * inertia / e_const * (1.0 / (r * n3) + 2.0 * p) * ps[0];
                let c12 = -(r * inertia / e_const) * (1.0 / (r * n3) + 2.0 * p) * p0 * n3 * n3;
                out[(0, 1)] = c01;
                out[(1, 0)] = -c01;
                out[(0, 2)] = c02;
                out[(2, 0)] = -c02;
                out[(1, 2)] = c12;
                out[(2, 1)] = -c12;
                out
            })),
            ..Default::default()
        }
    };

    let q0 = ChartPoint::from_slice(&[1.0, 0.0, 0.0, std::f64::consts::FRAC_PI_2, 0.0]);
    let v0 = {
        let mut v = spec.x0.at(&q0) * 0.4;
        v += spec.s_basis[0].at(&q0) * 0.8;
        v += spec.s_basis[1].at(&q0) * 0.5;
        v
    };

    Ok(CatalogEntry {
        spec,
        references,
        expected_checks: expected_all_pass(),
        default_grid: ShapeGrid::uniform(0.2, 3.0, 281, 1.0)?,
        default_state: State { q: q0, v: v0 },
        expected_momentum_count: 2,
        needs_constrained_solver: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::momentum;
    use crate::sampling;

    #[test]
    fn ball_spec_validates() {
        let entry = ball_on_surface(Default::default()).unwrap();
        let (points, _) = sampling::domain_samples(&entry.spec, 60);
        assert!(points.len() > 40);
        entry.spec.validate(&points).unwrap();
    }

    #[test]
    fn ball_shape_chart_and_rate() {
        let entry = ball_on_surface(Default::default()).unwrap();
        let s_values: Vec<f64> = (1..=14).map(|i| 0.2 * i as f64).collect();
        entry.spec.validate_shape_chart(&s_values).unwrap();
        // dshape(X0) = 2 tau.
        let q = entry.spec.section_at(1.3);
        approx::assert_abs_diff_eq!(entry.spec.shape_rate(&q), 2.6, epsilon = 1e-8);
    }

    #[test]
    fn ball_kappa_s_closed_form_fixes_the_effective_constant() {
        let entry = ball_on_surface(Default::default()).unwrap();
        let spec = &entry.spec;
        let kref = entry.references.kappa_s.as_ref().unwrap();
        for (x, y) in [(1.0, 0.0), (0.6, 0.9), (0.4, -1.1)] {
            let q = ChartPoint::from_slice(&[x, y, 0.7, 1.2, -0.4]);
            let ks = momentum::kappa_s_matrix(spec, &q).unwrap();
            let expect = kref(&q);
            assert!((ks - expect).amax() < 1e-9, "kappa_s mismatch at ({x},{y})");
        }
    }

    #[test]
    fn rejects_bad_profiles() {
        // Decreasing profile.
        let params = BallParams { phi: Poly(vec![0.0, -0.2]), ..Default::default() };
        assert!(ball_on_surface(params).is_err());
        // Curvature above 1/r near the vertex.
        let params = BallParams { phi: Poly(vec![0.0, 2.0]), ..Default::default() };
        assert!(ball_on_surface(params).is_err());
    }
}
