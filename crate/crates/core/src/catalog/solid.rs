//! Solid of revolution rolling without sliding on a horizontal plane,
//! modelled on the free stratum of SO(3) x R^2 through a ZYZ Euler chart
//! (phi, theta, psi, x, y). The body surface is parameterized by the profile
//! pair (rho(gamma3), zeta(gamma3)).

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
pub struct SolidParams {
    pub m: f64,
    /// Equal equatorial inertias.
    pub i1: f64,
    pub i3: f64,
    /// Profile rho(gamma3) > 0.
    pub rho: Poly,
    /// Profile zeta(gamma3).
    pub zeta: Poly,
    pub gravity: f64,
    /// Exclusion margin around gamma3 = +-1.
    pub pole_margin: f64,
}

impl Default for SolidParams {
    fn default() -> Self {
        // Sphere of radius 1 with the center of mass offset 0.1 along the
        // symmetry axis: rho = 1, zeta = gamma3 - 0.1 (so L = 0.1).
        SolidParams {
            m: 1.0,
            i1: 0.35,
            i3: 0.25,
            rho: Poly::constant(1.0),
            zeta: Poly(vec![-0.1, 1.0]),
            gravity: 1.0,
            pole_margin: 1e-3,
        }
    }
}

struct Geometry {
    rho: Poly,
    rho_d: Poly,
    zeta: Poly,
    zeta_d: Poly,
}

impl Geometry {
    fn new(rho: &Poly, zeta: &Poly) -> Self {
        Geometry {
            rho: rho.clone(),
            rho_d: rho.derivative(),
            zeta: zeta.clone(),
            zeta_d: zeta.derivative(),
        }
    }

    fn l(&self, g3: f64) -> f64 {
        self.rho.eval(g3) * g3 - self.zeta.eval(g3)
    }

    fn l_d(&self, g3: f64) -> f64 {
        self.rho_d.eval(g3) * g3 + self.rho.eval(g3) - self.zeta_d.eval(g3)
    }

    /// Contact vector from the center of mass, in body frame.
    fn s_body(&self, gamma: &Vector3<f64>) -> Vector3<f64> {
        gamma * self.rho.eval(gamma[2]) - Vector3::new(0.0, 0.0, self.l(gamma[2]))
    }

    /// c(gamma3) = <gamma, s> = rho (1 - gamma3^2) + zeta gamma3.
    fn c(&self, g3: f64) -> f64 {
        self.rho.eval(g3) * (1.0 - g3 * g3) + self.zeta.eval(g3) * g3
    }

    fn c_d(&self, g3: f64) -> f64 {
        self.rho_d.eval(g3) * (1.0 - g3 * g3) - 2.0 * self.rho.eval(g3) * g3
            + self.zeta_d.eval(g3) * g3
            + self.zeta.eval(g3)
    }
}

fn angles(q: &ChartPoint) -> (f64, f64, f64) {
    (q.0[0], q.0[1], q.0[2])
}

/// Constrained field X_i = X_i^L + (alpha x s)_i d/dx + (beta x s)_i d/dy.
fn constrained_field(geom: &Arc<Geometry>, i: usize) -> impl Fn(&ChartPoint) -> DVector<f64> {
    let geom = geom.clone();
    move |q: &ChartPoint| {
        let (phi, theta, psi) = angles(q);
        let g = so3::rotation(phi, theta, psi);
        let alpha = Vector3::new(g[(0, 0)], g[(0, 1)], g[(0, 2)]);
        let beta = Vector3::new(g[(1, 0)], g[(1, 1)], g[(1, 2)]);
        let gamma = Vector3::new(g[(2, 0)], g[(2, 1)], g[(2, 2)]);
        let s = geom.s_body(&gamma);
        let rates = so3::left_invariant_rates(i, theta, psi);
        let axs = alpha.cross(&s);
        let bxs = beta.cross(&s);
        DVector::from_column_slice(&[rates[0], rates[1], rates[2], axs[i], bxs[i]])
    }
}

pub fn solid_of_revolution(params: SolidParams) -> Result<CatalogEntry> {
    let SolidParams { m, i1, i3, rho, zeta, gravity, pole_margin } = params;
    if !(m > 0.0 && i1 > 0.0 && i3 > 0.0) {
        return Err(Error::BadParameter("solid: mass and inertias must be positive".into()));
    }
    if !(pole_margin > 0.0 && pole_margin < 0.5) {
        return Err(Error::BadParameter("solid: bad pole margin".into()));
    }
    for i in 0..=20 {
        let g3 = -0.95 + 0.095 * i as f64;
        if rho.eval(g3) <= 0.0 {
            return Err(Error::BadParameter(format!("solid: rho({g3}) <= 0")));
        }
    }
    let geom = Arc::new(Geometry::new(&rho, &zeta));

    let metric = {
        let geom = geom.clone();
        KineticMetric::new(move |q: &ChartPoint| {
            let (_, theta, psi) = angles(q);
            let bl = so3::b_left(theta, psi);
            let inertia = nalgebra::Matrix3::from_diagonal(&Vector3::new(i1, i1, i3));
            let mut ang = bl.transpose() * inertia * bl;
            // Height constraint z = -c(gamma3): z_dot = c' sin(theta) theta_dot.
            let g3 = theta.cos();
            let dz = geom.c_d(g3) * theta.sin();
            ang[(1, 1)] += m * dz * dz;
            let mut kappa = DMatrix::zeros(5, 5);
            kappa.view_mut((0, 0), (3, 3)).copy_from(&ang.into());
            kappa[(3, 3)] = m;
            kappa[(4, 4)] = m;
            kappa
        })
    };

    let potential = {
        let geom = geom.clone();
        ScalarField::new("U", move |q: &ChartPoint| {
            let g3 = q.0[1].cos();
            -m * gravity * geom.c(g3)
        })
    };

    let x1 = VectorField::new("X1", constrained_field(&geom, 0));
    let x2 = VectorField::new("X2", constrained_field(&geom, 1));
    let x3 = VectorField::new("X3", constrained_field(&geom, 2));

    let y1 = x3.clone();
    let y2 = {
        let (x1, x2, x3) = (x1.clone(), x2.clone(), x3.clone());
        VectorField::new("Y2", move |q: &ChartPoint| {
            let (_, theta, psi) = angles(q);
            let gamma = so3::gamma_row(theta, psi);
            x1.at(q) * gamma[0] + x2.at(q) * gamma[1] + x3.at(q) * gamma[2]
        })
    };
    let x0 = {
        let (x1, x2) = (x1.clone(), x2.clone());
        VectorField::new("X0", move |q: &ChartPoint| {
            let (_, theta, psi) = angles(q);
            let gamma = so3::gamma_row(theta, psi);
            x2.at(q) * gamma[0] - x1.at(q) * gamma[1]
        })
    };

    let w1 = VectorField::coordinate("Z1", 5, 3);
    let w2 = VectorField::coordinate("Z2", 5, 4);

    // eps^1 = dx - sum_i (alpha x s)_i lambda_i, lambda = rows of b_left.
    let eps_form = |row: usize| -> OneForm {
        let geom = geom.clone();
        OneForm::new(if row == 0 { "eps1" } else { "eps2" }, move |q: &ChartPoint| {
            let (phi, theta, psi) = angles(q);
            let g = so3::rotation(phi, theta, psi);
            let row_vec = Vector3::new(g[(row, 0)], g[(row, 1)], g[(row, 2)]);
            let gamma = Vector3::new(g[(2, 0)], g[(2, 1)], g[(2, 2)]);
            let s = geom.s_body(&gamma);
            let rxs = row_vec.cross(&s);
            let bl = so3::b_left(theta, psi);
            let ang = -(bl.transpose() * rxs);
            let mut out = DVector::zeros(5);
            out[0] = ang[0];
            out[1] = ang[1];
            out[2] = ang[2];
            out[3 + row] = 1.0;
            out
        })
    };

    let gen1 = VectorField::new("eta1", |q: &ChartPoint| {
        let (_, theta, psi) = angles(q);
        let r = so3::left_invariant_rates(2, theta, psi);
        DVector::from_column_slice(&[-r[0], -r[1], -r[2], -q.0[4], q.0[3]])
    });
    let gen2 = VectorField::new("eta2", |q: &ChartPoint| {
        let (_, theta, psi) = angles(q);
        let gamma = so3::gamma_row(theta, psi);
        let mut acc = Vector3::zeros();
        for i in 0..3 {
            acc += so3::left_invariant_rates(i, theta, psi) * gamma[i];
        }
        DVector::from_column_slice(&[acc[0], acc[1], acc[2], -q.0[4], q.0[3]])
    });
    let gen3 = VectorField::coordinate("eta3", 5, 3);
    let gen4 = VectorField::coordinate("eta4", 5, 4);

    let g3_max = 1.0 - pole_margin;
    let spec = SystemSpecBuilder::new(
        "solid",
        5,
        metric,
        potential,
        vec![eps_form(0), eps_form(1)],
        x0,
        vec![y1, y2],
        vec![w1, w2],
    )
    .vertical_generators(vec![gen1, gen2, gen3, gen4])
    .shape(ScalarField::new("gamma3", |q: &ChartPoint| q.0[1].cos()), |s| {
        ChartPoint::from_slice(&[0.0, s.clamp(-1.0, 1.0).acos(), 0.0, 0.0, 0.0])
    })
    .domain_guard(move |q: &ChartPoint| q.0[1].cos().abs() < g3_max)
    .sample_box(vec![
        (-std::f64::consts::PI, std::f64::consts::PI),
        (0.65, 2.49),
        (-std::f64::consts::PI, std::f64::consts::PI),
        (-1.0, 1.0),
        (-1.0, 1.0),
    ])
    .build();

    let references = {
        let geom = geom.clone();
        let geom2 = geom.clone();
        let geom3 = geom.clone();
        References {
            kappa_s: Some(Arc::new(move |q: &ChartPoint| {
                let g3 = q.0[1].cos();
                let (rho, l) = (geom.rho.eval(g3), geom.l(g3));
                let f = 1.0 - g3 * g3;
                let gig = i1 * f + i3 * g3 * g3;
                DMatrix::from_row_slice(
                    2,
                    2,
                    &[
                        i3 + m * rho * rho * f,
                        -i3 * g3 - l * m * rho * f,
                        -i3 * g3 - l * m * rho * f,
                        gig + l * l * m * f,
                    ],
                )
            })),
            n_matrix: Some(Arc::new(move |q: &ChartPoint| {
                let g3 = q.0[1].cos();
                let f = 1.0 - g3 * g3;
                let (rho, rho_d) = (geom2.rho.eval(g3), geom2.rho_d.eval(g3));
                let (l, l_d) = (geom2.l(g3), geom2.l_d(g3));
                let c = geom2.c(g3);
                let a = rho_d * f - rho * g3;
                let b = l_d * f - l * g3 - c;
                DMatrix::from_row_slice(
                    2,
                    2,
                    &[-rho * a, rho * (b - c), l * a - rho * c, -l * b],
                ) * (m * f)
            })),
            b_hgs_frame: Some(Arc::new(move |spec: &crate::system::SystemSpec, state: &State| {
                // m rho <gamma, s> <Omega, d lambda> evaluated on the frame.
                let q = &state.q;
                let (_, theta, psi) = angles(q);
                let g3 = theta.cos();
                let coeff = m * geom3.rho.eval(g3) * geom3.c(g3);
                let bl = so3::b_left(theta, psi);
                let omega = bl * Vector3::new(state.v[0], state.v[1], state.v[2]);
                let lambda_form = |i: usize| -> OneForm {
                    OneForm::new(format!("lambda{i}"), move |p: &ChartPoint| {
                        let bl = so3::b_left(p.0[1], p.0[2]);
                        let mut out = DVector::zeros(5);
                        for j in 0..3 {
                            out[j] = bl[(i, j)];
                        }
                        out
                    })
                };
                let fields = [
                    spec.x0.clone(),
                    spec.s_basis[0].clone(),
                    spec.s_basis[1].clone(),
                ];
                let dim = 2 * spec.k() + 2;
                let mut out = DMatrix::zeros(dim, dim);
                for a in 0..3 {
                    for b in (a + 1)..3 {
                        let mut val = 0.0;
                        for i in 0..3 {
                            let li = lambda_form(i);
                            val += omega[i]
                                * crate::geometry::d_oneform_pair(
                                    &li, &fields[a], &fields[b], q, spec.fd_eps,
                                )
                                .unwrap_or(f64::NAN);
                        }
                        out[(a, b)] = coeff * val;
                        out[(b, a)] = -coeff * val;
                    }
                }
                out
            })),
            ..Default::default()
        }
    };

    // Spinning start near the equator.
    let q0 = ChartPoint::from_slice(&[0.3, std::f64::consts::FRAC_PI_2, 0.2, 0.0, 0.0]);
    let v0 = {
        let mut v = spec.x0.at(&q0) * 0.25;
        v += spec.s_basis[0].at(&q0) * 1.3;
        v += spec.s_basis[1].at(&q0) * 0.6;
        v
    };

    Ok(CatalogEntry {
        spec,
        references,
        expected_checks: expected_all_pass(),
        default_grid: ShapeGrid::uniform(-0.8, 0.8, 321, 0.0)?,
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
    fn solid_spec_validates() {
        let entry = solid_of_revolution(Default::default()).unwrap();
        let (points, _) = sampling::domain_samples(&entry.spec, 60);
        assert!(points.len() > 40);
        entry.spec.validate(&points).unwrap();
    }

    #[test]
    fn solid_shape_chart() {
        let entry = solid_of_revolution(Default::default()).unwrap();
        let s_values: Vec<f64> = (0..17).map(|i| -0.8 + 0.1 * i as f64).collect();
        entry.spec.validate_shape_chart(&s_values).unwrap();
        // dshape(X0) = 1 - gamma3^2.
        let q = entry.spec.section_at(0.4);
        approx::assert_abs_diff_eq!(entry.spec.shape_rate(&q), 1.0 - 0.16, epsilon = 1e-8);
    }

    #[test]
    fn solid_kappa_s_matches_closed_form() {
        let entry = solid_of_revolution(Default::default()).unwrap();
        let spec = &entry.spec;
        let kref = entry.references.kappa_s.as_ref().unwrap();
        for g3 in [-0.7, -0.2, 0.0, 0.5] {
            let q = ChartPoint::from_slice(&[0.8, (g3 as f64).acos(), -0.4, 0.2, 0.1]);
            let ks = momentum::kappa_s_matrix(spec, &q).unwrap();
            let expect = kref(&q);
            assert!((ks - expect).amax() < 1e-9, "kappa_s mismatch at gamma3 = {g3}");
        }
    }

    #[test]
    fn solid_n_matrix_diagonal_matches_closed_form() {
        let entry = solid_of_revolution(Default::default()).unwrap();
        let spec = &entry.spec;
        let nref = entry.references.n_matrix.as_ref().unwrap();
        for g3 in [-0.5f64, 0.0, 0.3, 0.6] {
            let q = ChartPoint::from_slice(&[0.4, g3.acos(), 1.1, -0.3, 0.6]);
            let n = momentum::n_matrix(spec, &q).unwrap();
            let expect = nref(&q);
            assert!(
                (n[(0, 0)] - expect[(0, 0)]).abs() < 1e-7,
                "N11: {} vs {}",
                n[(0, 0)],
                expect[(0, 0)]
            );
            assert!(
                (n[(1, 1)] - expect[(1, 1)]).abs() < 1e-7,
                "N22: {} vs {}",
                n[(1, 1)],
                expect[(1, 1)]
            );
        }
    }
}
