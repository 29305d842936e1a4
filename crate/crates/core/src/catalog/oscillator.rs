//! Constrained oscillator on R^3: constraint z_dot = y x_dot, abelian
//! symmetry in the x and z directions, one conserved momentum.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::Deserialize;

use crate::dynamics::State;
use crate::error::{Error, Result};
use crate::geometry::{ChartPoint, KineticMetric, OneForm, ScalarField, VectorField};
use crate::momentum::ShapeGrid;
use crate::system::SystemSpecBuilder;

use super::{expected_all_pass, CatalogEntry, Poly, References};

#[derive(Clone, Debug, Deserialize)]
#[serde(default)]
pub struct OscillatorParams {
    pub m: f64,
    /// Potential U(y), ascending polynomial coefficients.
    pub potential: Poly,
}

impl Default for OscillatorParams {
    fn default() -> Self {
        OscillatorParams { m: 1.0, potential: Poly(vec![0.0, 0.0, 0.5]) }
    }
}

pub fn oscillator(params: OscillatorParams) -> Result<CatalogEntry> {
    let m = params.m;
    if !(m > 0.0) {
        return Err(Error::BadParameter("oscillator: m must be positive".into()));
    }
    let u_poly = params.potential.clone();

    let metric = KineticMetric::constant(DMatrix::identity(3, 3) * m);
    let potential = ScalarField::new("U", move |q: &ChartPoint| u_poly.eval(q.0[1]));
    let eps = OneForm::new("eps", |q: &ChartPoint| {
        DVector::from_column_slice(&[-q.0[1], 0.0, 1.0])
    });
    let y_field = VectorField::new("Y", |q: &ChartPoint| {
        DVector::from_column_slice(&[1.0, 0.0, q.0[1]])
    });
    let x0 = VectorField::coordinate("X0", 3, 1);
    let z = VectorField::coordinate("Z", 3, 2);
    let gen_x = VectorField::coordinate("d/dx", 3, 0);
    let gen_z = VectorField::coordinate("d/dz", 3, 2);

    let spec = SystemSpecBuilder::new(
        "oscillator",
        3,
        metric,
        potential,
        vec![eps],
        x0,
        vec![y_field],
        vec![z],
    )
    .vertical_generators(vec![gen_x, gen_z])
    .shape(ScalarField::new("y", |q: &ChartPoint| q.0[1]), |s| {
        ChartPoint::from_slice(&[0.0, s, 0.0])
    })
    .sample_box(vec![(-1.0, 1.0), (-2.0, 2.0), (-1.0, 1.0)])
    .build();

    let references = References {
        kappa_s: Some(Arc::new(move |q: &ChartPoint| {
            DMatrix::from_element(1, 1, m * (1.0 + q.0[1] * q.0[1]))
        })),
        n_matrix: Some(Arc::new(move |q: &ChartPoint| {
            DMatrix::from_element(1, 1, -m * q.0[1])
        })),
        r_matrix: Some(Arc::new(|q: &ChartPoint| {
            let y = q.0[1];
            DMatrix::from_element(1, 1, -y / (1.0 + y * y))
        })),
        // F(s) with F(0) = 1.
        momentum_directions: Some(Arc::new(|s: f64| {
            DMatrix::from_element(1, 1, 1.0 / (1.0 + s * s).sqrt())
        })),
        ..Default::default()
    };

    let q0 = ChartPoint::from_slice(&[0.0, 0.5, 0.0]);
    // v = 0.3 X0 + 0.4 Y, already in D.
    let v0 = DVector::from_column_slice(&[0.4, 0.3, 0.4 * 0.5]);

    Ok(CatalogEntry {
        spec,
        references,
        expected_checks: expected_all_pass(),
        default_grid: ShapeGrid::uniform(-2.0, 2.0, 401, 0.0)?,
        default_state: State { q: q0, v: v0 },
        expected_momentum_count: 1,
        needs_constrained_solver: false,
    })
}
