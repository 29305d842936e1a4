//! Snakeboard on SE(2) x S^1 x S^1 with chart (theta, x, y, psi, phi),
//! phi restricted away from +-pi/2. Two conserved momenta; the gauge
//! 2-form vanishes identically and the reduced bivector has an explicit
//! closed form.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::Deserialize;

use crate::dynamics::State;
use crate::error::{Error, Result};
use crate::geometry::{ChartPoint, KineticMetric, OneForm, ScalarField, VectorField};
use crate::momentum::ShapeGrid;
use crate::system::SystemSpecBuilder;

use super::{expected_all_pass, CatalogEntry, References};

#[derive(Clone, Debug, Deserialize)]
#[serde(default)]
pub struct SnakeboardParams {
    pub m: f64,
    pub r: f64,
    /// Rotor inertia.
    pub j_rotor: f64,
    /// Wheel inertia (enters the compatibility relation only).
    pub j_wheel: f64,
    /// Board inertia; defaults to m r^2 - j_rotor - 2 j_wheel.
    pub j_board: Option<f64>,
    pub phi_margin: f64,
}

impl Default for SnakeboardParams {
    fn default() -> Self {
        SnakeboardParams {
            m: 1.0,
            r: 1.0,
            j_rotor: 0.5,
            j_wheel: 0.125,
            j_board: None,
            phi_margin: 0.02,
        }
    }
}

pub fn snakeboard(params: SnakeboardParams) -> Result<CatalogEntry> {
    let SnakeboardParams { m, r, j_rotor: jr, j_wheel: jw, j_board, phi_margin } = params;
    let j0 = j_board.unwrap_or(m * r * r - jr - 2.0 * jw);
    if !(m > 0.0 && r > 0.0 && jr > 0.0 && jw > 0.0 && j0 > 0.0) {
        return Err(Error::BadParameter("snakeboard: parameters must be positive".into()));
    }
    if m * r * r <= jr {
        return Err(Error::BadParameter("snakeboard: need m r^2 > rotor inertia".into()));
    }
    let balance = (jr + 2.0 * jw + j0) - m * r * r;
    if balance.abs() > 1e-9 * (m * r * r) {
        return Err(Error::BadParameter(format!(
            "snakeboard: inertias must satisfy J + 2 J_wheel + J_board = m r^2 (off by {balance:.3e})"
        )));
    }
    if !(phi_margin > 0.0 && phi_margin < 0.5) {
        return Err(Error::BadParameter("snakeboard: bad phi margin".into()));
    }

    // Chart (theta, x, y, psi, phi). The phi-dot^2 term in the Lagrangian
    // carries coefficient J_board, so kappa_phiphi = 2 J_board.
    let mut kappa = DMatrix::zeros(5, 5);
    kappa[(0, 0)] = m * r * r;
    kappa[(1, 1)] = m;
    kappa[(2, 2)] = m;
    kappa[(3, 3)] = jr;
    kappa[(0, 3)] = jr;
    kappa[(3, 0)] = jr;
    kappa[(4, 4)] = 2.0 * j0;
    let metric = KineticMetric::constant(kappa);

    let y_theta = VectorField::new("Y_theta", move |q: &ChartPoint| {
        let (theta, phi) = (q.0[0], q.0[4]);
        DVector::from_column_slice(&[
            phi.sin(),
            -r * phi.cos() * theta.cos(),
            -r * phi.cos() * theta.sin(),
            0.0,
            0.0,
        ])
    });
    let y_psi = VectorField::coordinate("Y_psi", 5, 3);
    let x0 = VectorField::coordinate("X0", 5, 4);
    let z1 = VectorField::new("Z1", move |q: &ChartPoint| {
        let (theta, phi) = (q.0[0], q.0[4]);
        let c = 1.0 / (2.0 * phi.cos());
        DVector::from_column_slice(&[-c / r, -c * theta.sin(), c * theta.cos(), 0.0, 0.0])
    });
    let z2 = VectorField::new("Z2", move |q: &ChartPoint| {
        let (theta, phi) = (q.0[0], q.0[4]);
        let c = 1.0 / (2.0 * phi.cos());
        DVector::from_column_slice(&[c / r, -c * theta.sin(), c * theta.cos(), 0.0, 0.0])
    });

    let omega1 = OneForm::new("omega1", move |q: &ChartPoint| {
        let (theta, phi) = (q.0[0], q.0[4]);
        DVector::from_column_slice(&[
            -r * phi.cos(),
            -(theta + phi).sin(),
            (theta + phi).cos(),
            0.0,
            0.0,
        ])
    });
    let omega2 = OneForm::new("omega2", move |q: &ChartPoint| {
        let (theta, phi) = (q.0[0], q.0[4]);
        DVector::from_column_slice(&[
            r * phi.cos(),
            -(theta - phi).sin(),
            (theta - phi).cos(),
            0.0,
            0.0,
        ])
    });

    let gen_psi = VectorField::coordinate("d/dpsi", 5, 3);
    let gen_x = VectorField::coordinate("d/dx", 5, 1);
    let gen_y = VectorField::coordinate("d/dy", 5, 2);
    let gen_rot = VectorField::new("rot", |q: &ChartPoint| {
        DVector::from_column_slice(&[1.0, -q.0[2], q.0[1], 0.0, 0.0])
    });

    let phi_max = std::f64::consts::FRAC_PI_2 - phi_margin;
    let spec = SystemSpecBuilder::new(
        "snakeboard",
        5,
        metric,
        ScalarField::zero("U"),
        vec![omega1, omega2],
        x0,
        vec![y_theta, y_psi],
        vec![z1, z2],
    )
    .vertical_generators(vec![gen_rot, gen_x, gen_y, gen_psi])
    .shape(ScalarField::new("phi", |q: &ChartPoint| q.0[4]), |s| {
        ChartPoint::from_slice(&[0.0, 0.0, 0.0, 0.0, s])
    })
    .domain_guard(move |q: &ChartPoint| q.0[4].abs() < phi_max)
    .sample_box(vec![
        (-std::f64::consts::PI, std::f64::consts::PI),
        (-1.0, 1.0),
        (-1.0, 1.0),
        (-std::f64::consts::PI, std::f64::consts::PI),
        (-1.2, 1.2),
    ])
    .build();

    let delta = move |phi: f64| m * r * r - jr * phi.sin() * phi.sin();

    let references = References {
        kappa_s: Some(Arc::new(move |q: &ChartPoint| {
            let s = q.0[4].sin();
            DMatrix::from_row_slice(2, 2, &[m * r * r, jr * s, jr * s, jr])
        })),
        n_matrix: Some(Arc::new(move |q: &ChartPoint| {
            DMatrix::from_row_slice(2, 2, &[0.0, 0.0, -jr * q.0[4].cos(), 0.0])
        })),
        r_matrix: Some(Arc::new(move |q: &ChartPoint| {
            let phi = q.0[4];
            let c = phi.cos() / delta(phi);
            DMatrix::from_row_slice(2, 2, &[c * jr * phi.sin(), 0.0, -c * m * r * r, 0.0])
        })),
        // Columns of F(phi) with F(0) = identity: the first is
        // sqrt(m r^2 / Delta) (1, -sin phi), the second stays (0, 1).
        momentum_directions: Some(Arc::new(move |s: f64| {
            let a = (m * r * r / delta(s)).sqrt();
            DMatrix::from_row_slice(2, 2, &[a, 0.0, -a * s.sin(), 1.0])
        })),
        b_hgs_frame: Some(Arc::new(|_spec, _state| DMatrix::zeros(6, 6))),
        pi_red: Some(Arc::new(move |zeta: &DVector<f64>| {
            // Reduced coordinates (phi, p0, p_theta, p_psi).
            let (phi, p_theta, p_psi) = (zeta[0], zeta[2], zeta[3]);
            let mut pi = DMatrix::zeros(4, 4);
            pi[(0, 1)] = 1.0;
            pi[(1, 0)] = -1.0;
            let c = phi.cos() / delta(phi) * (jr * phi.sin() * p_theta - m * r * r * p_psi);
            pi[(1, 2)] = c;
            pi[(2, 1)] = -c;
            pi
        })),
    };

    // v = 0.05 X0 + 0.3 Y_theta + 0.2 Y_psi at phi = 0.2.
    let q0 = ChartPoint::from_slice(&[0.0, 0.0, 0.0, 0.0, 0.2]);
    let phi0: f64 = 0.2;
    let v0 = DVector::from_column_slice(&[
        0.3 * phi0.sin(),
        -0.3 * r * phi0.cos(),
        0.0,
        0.2,
        0.05,
    ]);

    Ok(CatalogEntry {
        spec,
        references,
        expected_checks: expected_all_pass(),
        default_grid: ShapeGrid::uniform(-1.3, 1.3, 261, 0.0)?,
        default_state: State { q: q0, v: v0 },
        expected_momentum_count: 2,
        needs_constrained_solver: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::momentum;
    use approx::assert_abs_diff_eq;

    #[test]
    fn closed_forms_match_engine() {
        let entry = snakeboard(Default::default()).unwrap();
        let spec = &entry.spec;
        for phi in [-1.1f64, -0.3, 0.0, 0.4, 0.9] {
            let q = ChartPoint::from_slice(&[0.7, 0.1, -0.4, 1.3, phi]);
            let data = momentum::r_data(spec, &q).unwrap();
            let ks_ref = entry.references.kappa_s.as_ref().unwrap()(&q);
            let n_ref = entry.references.n_matrix.as_ref().unwrap()(&q);
            let r_ref = entry.references.r_matrix.as_ref().unwrap()(&q);
            assert!((data.kappa_s - ks_ref).amax() < 1e-9, "kappa_s at phi={phi}");
            assert!((data.n - n_ref).amax() < 1e-8, "N at phi={phi}");
            assert!((data.r - r_ref).amax() < 1e-8, "R at phi={phi}");
        }
    }

    #[test]
    fn bracket_y_theta_psi_vanishes() {
        let entry = snakeboard(Default::default()).unwrap();
        let q = ChartPoint::from_slice(&[0.3, 0.0, 0.0, 0.0, 0.5]);
        let b = crate::geometry::lie_bracket(
            &entry.spec.s_basis[0],
            &entry.spec.s_basis[1],
            &q,
            1e-6,
        )
        .unwrap();
        assert!(b.amax() < 1e-12);
    }

    #[test]
    fn d_alpha_theta_contraction_is_tan_phi() {
        // d alpha_theta (d/dphi, Y_theta) = tan(phi).
        let entry = snakeboard(Default::default()).unwrap();
        let spec = &entry.spec;
        let alpha_theta = OneForm::new("alpha_theta", {
            let r = 1.0;
            move |q: &ChartPoint| {
                let (theta, phi) = (q.0[0], q.0[4]);
                let c = -1.0 / (r * phi.cos());
                DVector::from_column_slice(&[0.0, c * theta.cos(), c * theta.sin(), 0.0, 0.0])
            }
        });
        let q = ChartPoint::from_slice(&[0.4, 0.0, 0.0, 0.0, 0.6]);
        let val =
            crate::geometry::d_oneform_pair(&alpha_theta, &spec.x0, &spec.s_basis[0], &q, 1e-6)
                .unwrap();
        assert_abs_diff_eq!(val, 0.6f64.tan(), epsilon = 1e-7);
    }

    #[test]
    fn fundamental_solution_columns() {
        let entry = snakeboard(Default::default()).unwrap();
        let fs = momentum::solve_fundamental_matrix(&entry.spec, &entry.default_grid).unwrap();
        // Second column constant (0, 1) exactly.
        for idx in [0, 50, 130, 200, 260] {
            let f = fs.node(idx);
            assert_eq!(f[(0, 1)], 0.0);
            assert_eq!(f[(1, 1)], 1.0);
        }
        // First column matches the analytic direction at phi = pi/4.
        let phi = std::f64::consts::FRAC_PI_4;
        let f = fs.value_at(phi);
        let ratio = f[(1, 0)] / f[(0, 0)];
        assert_abs_diff_eq!(ratio, -phi.sin(), epsilon = 1e-7);
        // And the exact normalized column everywhere.
        let dirs = entry.references.momentum_directions.as_ref().unwrap();
        for s in [-1.2f64, -0.5, 0.3, 1.0] {
            let expect = dirs(s);
            let f = fs.value_at(s);
            assert!((f - expect).amax() < 1e-7, "F mismatch at phi={s}");
        }
    }

    #[test]
    fn horizontal_symmetry_contains_psi_direction() {
        let entry = snakeboard(Default::default()).unwrap();
        let (samples, _) = crate::sampling::domain_samples(&entry.spec, 60);
        let basis = momentum::horizontal_symmetry_detect(&entry.spec, &samples).unwrap();
        assert_eq!(basis.ncols(), 1);
        let dir = basis.column(0);
        let cosine = dir[1].abs() / dir.norm();
        assert!(cosine > 1.0 - 1e-9, "expected the psi direction, got {dir:?}");
    }

    #[test]
    fn rejects_incompatible_inertias() {
        let params = SnakeboardParams { j_board: Some(0.9), ..Default::default() };
        assert!(snakeboard(params).is_err());
        let params = SnakeboardParams { j_rotor: 1.2, j_board: Some(-0.45), ..Default::default() };
        assert!(snakeboard(params).is_err());
    }
}
