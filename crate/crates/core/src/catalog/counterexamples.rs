//! Systems probing the limits of the existence conditions: a metric that is
//! not strongly invariant on S (exactly one momentum despite rank(S) = 3),
//! and a five-dimensional particle whose momentum count is steered by the
//! horizontal bracket pairings.

use std::collections::BTreeMap;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::Deserialize;

use crate::dynamics::State;
use crate::error::{Error, Result};
use crate::geometry::{ChartPoint, KineticMetric, OneForm, ScalarField, VectorField};
use crate::momentum::ShapeGrid;
use crate::system::SystemSpecBuilder;

use super::{CatalogEntry, Poly, References};

/// R^3 x SE(2) system with coordinates (u, v, x, y, z, theta). The kinetic
/// matrix carries a theta-dependent cross term that breaks strong invariance
/// on S; a single conserved momentum along (1, 2, 0) survives.
pub fn r3se2_counterexample() -> Result<CatalogEntry> {
    let n = 6;
    let metric = KineticMetric::new(|q: &ChartPoint| {
        let theta = q.0[5];
        let mut kappa = DMatrix::identity(6, 6);
        kappa[(3, 5)] = -2.0 * theta.cos();
        kappa[(5, 3)] = -2.0 * theta.cos();
        kappa[(4, 5)] = -2.0 * theta.sin();
        kappa[(5, 4)] = -2.0 * theta.sin();
        kappa
    });

    let y_theta = VectorField::new("Y_theta", |q: &ChartPoint| {
        let x = q.0[2];
        DVector::from_column_slice(&[1.0 + x.cos(), x.sin(), 0.0, 0.0, 0.0, 1.0])
    });
    let y1 = VectorField::new("Y1", |q: &ChartPoint| {
        let theta = q.0[5];
        DVector::from_column_slice(&[0.0, 0.0, 0.0, theta.cos(), theta.sin(), 0.0])
    });
    let y2 = VectorField::new("Y2", |q: &ChartPoint| {
        let theta = q.0[5];
        DVector::from_column_slice(&[0.0, 0.0, 0.0, -theta.sin(), theta.cos(), 0.0])
    });
    let x0 = VectorField::coordinate("X0", n, 2);
    let z_u = VectorField::coordinate("Zu", n, 0);
    let z_v = VectorField::coordinate("Zv", n, 1);

    let eps_u = OneForm::new("eps_u", |q: &ChartPoint| {
        let x = q.0[2];
        DVector::from_column_slice(&[1.0, 0.0, 0.0, 0.0, 0.0, -(1.0 + x.cos())])
    });
    let eps_v = OneForm::new("eps_v", |q: &ChartPoint| {
        let x = q.0[2];
        DVector::from_column_slice(&[0.0, 1.0, 0.0, 0.0, 0.0, -x.sin()])
    });

    let gens = vec![
        VectorField::coordinate("d/du", n, 0),
        VectorField::coordinate("d/dv", n, 1),
        VectorField::coordinate("d/dy", n, 3),
        VectorField::coordinate("d/dz", n, 4),
        VectorField::new("rot", |q: &ChartPoint| {
            DVector::from_column_slice(&[0.0, 0.0, 0.0, -q.0[4], q.0[3], 1.0])
        }),
    ];

    // kappa restricted to D degenerates at 2 cos(x) = 1.
    let x_max = std::f64::consts::FRAC_PI_3 - 0.02;
    let spec = SystemSpecBuilder::new(
        "counterexample_r3se2",
        n,
        metric,
        ScalarField::zero("U"),
        vec![eps_u, eps_v],
        x0,
        vec![y_theta, y1, y2],
        vec![z_u, z_v],
    )
    .vertical_generators(gens)
    .shape(ScalarField::new("x", |q: &ChartPoint| q.0[2]), |s| {
        ChartPoint::from_slice(&[0.0, 0.0, s, 0.0, 0.0, 0.0])
    })
    .domain_guard(move |q: &ChartPoint| q.0[2].abs() < x_max)
    .sample_box(vec![
        (-1.0, 1.0),
        (-1.0, 1.0),
        (-1.0, 1.0),
        (-1.0, 1.0),
        (-1.0, 1.0),
        (-std::f64::consts::PI, std::f64::consts::PI),
    ])
    .build();

    let expected_checks: BTreeMap<String, bool> = [
        ("dimension_assumption", true),
        ("s_orthogonality", true),
        ("strong_invariance", false),
        ("x0_condition", true),
        ("frame_invariance", true),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect();

    let references = References {
        // The single surviving coefficient direction: f(x) (1, 2, 0) with
        // f(x) = (2 cos x - 1)^(-1/2) normalized to 1 at x = 0.
        momentum_directions: Some(Arc::new(|s: f64| {
            let f = 1.0 / (2.0 * s.cos() - 1.0).sqrt();
            DMatrix::from_column_slice(3, 1, &[f, 2.0 * f, 0.0])
        })),
        ..Default::default()
    };

    // v = 0.12 X0 + 0.2 Y_theta + 0.1 Y1 + 0.15 Y2 at the base point.
    let q0 = ChartPoint::from_slice(&[0.0, 0.0, -0.6, 0.2, -0.1, 0.3]);
    let v0 = {
        let mut v = DVector::zeros(n);
        v += 0.12 * spec.x0.at(&q0);
        v += 0.2 * spec.s_basis[0].at(&q0);
        v += 0.1 * spec.s_basis[1].at(&q0);
        v += 0.15 * spec.s_basis[2].at(&q0);
        v
    };

    Ok(CatalogEntry {
        spec,
        references,
        expected_checks,
        default_grid: ShapeGrid::uniform(-0.9, 0.9, 361, 0.0)?,
        default_state: State { q: q0, v: v0 },
        expected_momentum_count: 1,
        needs_constrained_solver: true,
    })
}

/// Coefficient functions of the multidimensional particle.
#[derive(Clone, Debug, Deserialize)]
#[serde(default)]
pub struct MultidimParams {
    pub b: Poly,
    pub c: Poly,
    pub d: Poly,
    pub f: Poly,
    pub g: Poly,
    pub h: Poly,
    pub j: Poly,
    pub l: Poly,
    /// Potential V(x1).
    pub potential: Poly,
    /// Domain half-width in x1.
    pub half_width: f64,
    pub expected_momenta: usize,
}

impl Default for MultidimParams {
    fn default() -> Self {
        MultidimParams {
            b: Poly::constant(0.0),
            c: Poly::constant(1.0),
            d: Poly::constant(0.0),
            f: Poly::constant(1.0),
            g: Poly::constant(1.0),
            h: Poly::constant(1.0),
            j: Poly::constant(1.0),
            l: Poly(vec![0.0, 1.0]),
            potential: Poly(vec![0.0, 0.0, 0.5]),
            half_width: 0.45,
            expected_momenta: 1,
        }
    }
}

/// Named configurations realizing the momentum-count table.
#[derive(Clone, Copy, Debug)]
pub enum MultidimConfig {
    /// Y1 constant (horizontal symmetry), the Y2-pairing obstructed: 1.
    OneMomentum,
    /// Both horizontal pairings obstructed with varying kernel: 0.
    ZeroMomenta,
    /// All brackets vanish: full set of 2.
    TwoMomenta,
}

pub fn multidim_particle_config(config: MultidimConfig) -> Result<CatalogEntry> {
    let params = match config {
        MultidimConfig::OneMomentum => MultidimParams::default(),
        MultidimConfig::ZeroMomenta => MultidimParams {
            c: Poly(vec![1.0, 0.5]),
            expected_momenta: 0,
            ..MultidimParams::default()
        },
        MultidimConfig::TwoMomenta => MultidimParams {
            d: Poly::constant(1.0),
            j: Poly::constant(-1.0),
            l: Poly::constant(0.0),
            expected_momenta: 2,
            ..MultidimParams::default()
        },
    };
    multidim_particle(params)
}

/// Fixed indefinite 5x5 kinetic matrix of the multidimensional particle.
fn multidim_kappa() -> DMatrix<f64> {
    DMatrix::from_row_slice(
        5,
        5,
        &[
            1.0, 0.0, 1.0, 0.0, 1.0, //
            0.0, 1.0, 0.0, 0.0, 0.0, //
            1.0, 0.0, 1.0, 0.0, 0.0, //
            0.0, 0.0, 0.0, 1.0, 1.0, //
            1.0, 0.0, 0.0, 1.0, 1.0, //
        ],
    )
}

pub fn multidim_particle(params: MultidimParams) -> Result<CatalogEntry> {
    let n = 5;
    let kappa = multidim_kappa();
    let metric = KineticMetric::constant(kappa.clone());

    let p = params.clone();
    let d1 = {
        let (f, b, c) = (p.f.clone(), p.b.clone(), p.c.clone());
        VectorField::new("D1", move |q: &ChartPoint| {
            let x = q.0[0];
            DVector::from_column_slice(&[f.eval(x), 0.0, b.eval(x), c.eval(x), 0.0])
        })
    };
    let d2 = {
        let (h, g) = (p.h.clone(), p.g.clone());
        VectorField::new("D2", move |q: &ChartPoint| {
            let x = q.0[0];
            DVector::from_column_slice(&[h.eval(x), g.eval(x), 0.0, 0.0, 0.0])
        })
    };
    let d3 = {
        let (d, j, l) = (p.d.clone(), p.j.clone(), p.l.clone());
        VectorField::new("D3", move |q: &ChartPoint| {
            let x = q.0[0];
            DVector::from_column_slice(&[d.eval(x), 0.0, 0.0, j.eval(x), l.eval(x)])
        })
    };

    // S-basis: Y1 = f D2 - h D1, Y2 = h D3 - d D2 (no d/dx1 component).
    let y1 = {
        let (d1, d2, f, h) = (d1.clone(), d2.clone(), p.f.clone(), p.h.clone());
        VectorField::new("Y1", move |q: &ChartPoint| {
            let x = q.0[0];
            d2.at(q) * f.eval(x) - d1.at(q) * h.eval(x)
        })
    };
    let y2 = {
        let (d2, d3, h, d) = (d2.clone(), d3.clone(), p.h.clone(), p.d.clone());
        VectorField::new("Y2", move |q: &ChartPoint| {
            let x = q.0[0];
            d3.at(q) * h.eval(x) - d2.at(q) * d.eval(x)
        })
    };

    // X0 spans the kappa-orthogonal complement of S inside D, from the
    // 2x3 pairing matrix by the generalized cross product of its rows.
    let x0 = {
        let (d1, d2, d3, y1, y2, metric) =
            (d1.clone(), d2.clone(), d3.clone(), y1.clone(), y2.clone(), metric.clone());
        VectorField::new("X0", move |q: &ChartPoint| {
            let kappa = metric.at(q);
            let ds = [d1.at(q), d2.at(q), d3.at(q)];
            let ys = [y1.at(q), y2.at(q)];
            let mut m = [[0.0; 3]; 2];
            for (i, y) in ys.iter().enumerate() {
                for (a, dv) in ds.iter().enumerate() {
                    m[i][a] = (&kappa * dv).dot(y);
                }
            }
            let a = [
                m[0][1] * m[1][2] - m[0][2] * m[1][1],
                m[0][2] * m[1][0] - m[0][0] * m[1][2],
                m[0][0] * m[1][1] - m[0][1] * m[1][0],
            ];
            &ds[0] * a[0] + &ds[1] * a[1] + &ds[2] * a[2]
        })
    };

    let w1 = VectorField::coordinate("Z1", n, 2);
    let w2 = VectorField::coordinate("Z2", n, 4);

    // Constraint coframe as the W-dual rows of the adapted frame.
    let eps = |a: usize| -> OneForm {
        let (x0, y1, y2, w1, w2) = (x0.clone(), y1.clone(), y2.clone(), w1.clone(), w2.clone());
        OneForm::new(format!("eps{}", a + 1), move |q: &ChartPoint| {
            let mut e = DMatrix::zeros(5, 5);
            e.set_column(0, &x0.at(q));
            e.set_column(1, &y1.at(q));
            e.set_column(2, &y2.at(q));
            e.set_column(3, &w1.at(q));
            e.set_column(4, &w2.at(q));
            match e.try_inverse() {
                Some(inv) => inv.row(3 + a).transpose(),
                None => DVector::from_element(5, f64::NAN),
            }
        })
    };
    let eps1 = eps(0);
    let eps2 = eps(1);

    let gens = (1..5).map(|i| VectorField::coordinate(format!("d/dx{}", i + 1), n, i)).collect();

    let half = params.half_width;
    if !(half > 0.0 && half <= 0.45) {
        return Err(Error::BadParameter("multidim: half_width must lie in (0, 0.45]".into()));
    }
    let u_poly = params.potential.clone();

    let spec = SystemSpecBuilder::new(
        match params.expected_momenta {
            0 => "multidim_b",
            1 => "multidim_a",
            _ => "multidim_c",
        },
        n,
        metric,
        ScalarField::new("V", move |q: &ChartPoint| u_poly.eval(q.0[0])),
        vec![eps1, eps2],
        x0,
        vec![y1, y2],
        vec![w1, w2],
    )
    .vertical_generators(gens)
    .shape(ScalarField::new("x1", |q: &ChartPoint| q.0[0]), |s| {
        ChartPoint::from_slice(&[s, 0.0, 0.0, 0.0, 0.0])
    })
    .domain_guard(move |q: &ChartPoint| q.0[0].abs() < half + 1e-9)
    .sample_box(vec![(-half, half), (-1.0, 1.0), (-1.0, 1.0), (-1.0, 1.0), (-1.0, 1.0)])
    .build();

    // Structural sanity at a few points: D independent, frame invertible.
    for s in [-half * 0.9, 0.0, half * 0.9] {
        let q = spec.section_at(s);
        spec.frame(&q).map_err(|_| {
            Error::BadParameter(format!("multidim: frame degenerate at x1 = {s}"))
        })?;
    }

    let expected_checks: BTreeMap<String, bool> = [
        ("dimension_assumption", true),
        ("s_orthogonality", true),
        ("strong_invariance", true),
        ("x0_condition", params.expected_momenta == 2),
        ("frame_invariance", true),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect();

    let q0 = ChartPoint::from_slice(&[0.1, 0.0, 0.0, 0.0, 0.0]);
    let v0 = {
        let mut v = spec.x0.at(&q0) * 0.2;
        v += 0.3 * spec.s_basis[0].at(&q0);
        v += 0.15 * spec.s_basis[1].at(&q0);
        v
    };

    Ok(CatalogEntry {
        spec,
        references: References::default(),
        expected_checks,
        default_grid: ShapeGrid::uniform(-half, half, 181, 0.0)?,
        default_state: State { q: q0, v: v0 },
        expected_momentum_count: params.expected_momenta,
        needs_constrained_solver: true,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampling;

    #[test]
    fn r3se2_strong_invariance_witness_is_one() {
        let entry = r3se2_counterexample().unwrap();
        let spec = &entry.spec;
        let q = ChartPoint::from_slice(&[0.2, -0.1, 0.3, 0.5, -0.7, 1.1]);
        // kappa(Y_theta, [Y1, Y2]) + kappa(Y2, [Y1, Y_theta]) = -1.
        let b12 = crate::geometry::lie_bracket(&spec.s_basis[1], &spec.s_basis[2], &q, 1e-6).unwrap();
        let b1t = crate::geometry::lie_bracket(&spec.s_basis[1], &spec.s_basis[0], &q, 1e-6).unwrap();
        let kappa = spec.metric.at(&q);
        let v = (&kappa * &b12).dot(&spec.s_basis[0].at(&q))
            + (&kappa * &b1t).dot(&spec.s_basis[2].at(&q));
        approx::assert_abs_diff_eq!(v, -1.0, epsilon = 1e-8);
    }

    #[test]
    fn r3se2_spec_validates() {
        let entry = r3se2_counterexample().unwrap();
        let (points, _) = sampling::domain_samples(&entry.spec, 60);
        assert!(points.len() > 20);
        entry.spec.validate(&points).unwrap();
    }

    #[test]
    fn multidim_configs_validate() {
        for config in [
            MultidimConfig::OneMomentum,
            MultidimConfig::ZeroMomenta,
            MultidimConfig::TwoMomenta,
        ] {
            let entry = multidim_particle_config(config).unwrap();
            let (points, _) = sampling::domain_samples(&entry.spec, 50);
            assert!(points.len() > 20, "{config:?}");
            entry.spec.validate(&points).unwrap_or_else(|e| panic!("{config:?}: {e}"));
        }
    }

    #[test]
    fn multidim_horizontal_pairings_match_expectations() {
        // Config A: kappa(X0, [Y1, X0]) = 0, kappa(X0, [Y2, X0]) != 0.
        let entry = multidim_particle_config(MultidimConfig::OneMomentum).unwrap();
        let spec = &entry.spec;
        let q = ChartPoint::from_slice(&[0.2, 0.3, -0.4, 0.1, 0.6]);
        let x0q = spec.x0.at(&q);
        let kappa = spec.metric.at(&q);
        let b1 = crate::geometry::lie_bracket(&spec.s_basis[0], &spec.x0, &q, 1e-6).unwrap();
        let b2 = crate::geometry::lie_bracket(&spec.s_basis[1], &spec.x0, &q, 1e-6).unwrap();
        let w1 = (&kappa * &b1).dot(&x0q);
        let w2 = (&kappa * &b2).dot(&x0q);
        assert!(w1.abs() < 1e-7, "w1 = {w1}");
        assert!(w2.abs() > 1e-2, "w2 = {w2}");
    }
}
