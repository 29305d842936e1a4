//! Numerical verification of the sufficient conditions for the full set of
//! conserved momenta: dimension assumption, S-orthogonality of the
//! horizontal generator, strong invariance of the metric on S, the
//! horizontal bracket pairing, and invariance of the adapted frame. Each
//! check reports a scale-free max violation and a witness when it fails.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::Result;
use crate::geometry::{jacobian_fd, lie_bracket, ChartPoint, VectorField};
use crate::linalg;
use crate::sampling;
use crate::system::SystemSpec;

pub const DEFAULT_CHECK_TOL: f64 = 1e-7;
const RANK_REL_TOL: f64 = 1e-8;

#[derive(Clone, Debug, Serialize, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
pub enum CheckStatus {
    Pass,
    Fail,
}

#[derive(Clone, Debug, Serialize)]
pub struct Witness {
    pub q: Vec<f64>,
    pub indices: Vec<usize>,
    /// Raw (un-normalized) violation at the witness.
    pub value: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct CheckEntry {
    pub id: String,
    pub status: CheckStatus,
    pub max_violation: f64,
    pub tolerance: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub witness: Option<Witness>,
}

impl CheckEntry {
    fn from_violation(
        id: &str,
        tol: f64,
        max_violation: f64,
        witness: Option<Witness>,
    ) -> CheckEntry {
        let status = if max_violation > tol { CheckStatus::Fail } else { CheckStatus::Pass };
        let witness = if status == CheckStatus::Fail { witness } else { None };
        CheckEntry { id: id.to_string(), status, max_violation, tolerance: tol, witness }
    }

    pub fn passed(&self) -> bool {
        self.status == CheckStatus::Pass
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct CheckReport {
    pub system: String,
    pub samples_used: usize,
    pub samples_skipped: usize,
    pub checks: Vec<CheckEntry>,
    pub verdict: CheckStatus,
}

impl CheckReport {
    pub fn passed(&self) -> bool {
        self.verdict == CheckStatus::Pass
    }

    pub fn entry(&self, id: &str) -> Option<&CheckEntry> {
        self.checks.iter().find(|e| e.id == id)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialization")
    }
}

/// At each sample the stacked columns [X0 | Y_i | generators] must have full
/// rank n, and the S-columns rank k.
pub fn check_dimension_assumption(
    spec: &SystemSpec,
    samples: &[ChartPoint],
    tol: f64,
) -> Result<CheckEntry> {
    let n = spec.dim_q;
    let k = spec.k();
    let mut worst = 0.0_f64;
    let mut witness = None;
    for q in samples {
        let mut cols: Vec<DVector<f64>> = vec![spec.x0.at_checked(q)?];
        for y in &spec.s_basis {
            cols.push(y.at_checked(q)?);
        }
        for g in &spec.vertical_generators {
            cols.push(g.at_checked(q)?);
        }
        let m = DMatrix::from_columns(&cols);
        let sv = linalg::singular_values(&m);
        let smax = sv[0].max(1e-300);
        let s_n = sv.get(n - 1).copied().unwrap_or(0.0);
        let deficiency = ((RANK_REL_TOL * smax - s_n) / smax).max(0.0);

        let s_cols = DMatrix::from_columns(
            &spec.s_basis.iter().map(|y| y.at(q)).collect::<Vec<_>>(),
        );
        let s_rank = linalg::rank(&s_cols, RANK_REL_TOL);
        let s_def = if s_rank == k { 0.0 } else { 1.0 };

        let v = deficiency.max(s_def);
        if v > worst {
            worst = v;
            witness = Some(Witness { q: q.0.as_slice().to_vec(), indices: vec![], value: v });
        }
    }
    Ok(CheckEntry::from_violation("dimension_assumption", tol, worst, witness))
}

/// max_i |kappa(X0, Y_i)| / (|X0| |Y_i|) over the samples.
pub fn check_s_orthogonality(
    spec: &SystemSpec,
    samples: &[ChartPoint],
    tol: f64,
) -> Result<CheckEntry> {
    let mut worst = 0.0_f64;
    let mut witness = None;
    for q in samples {
        let x0q = spec.x0.at_checked(q)?;
        let x0n = spec.metric.norm(q, &x0q).max(1e-300);
        for (i, y) in spec.s_basis.iter().enumerate() {
            let yq = y.at_checked(q)?;
            let raw = spec.metric.pair_vectors(q, &x0q, &yq);
            let v = raw.abs() / (x0n * spec.metric.norm(q, &yq).max(1e-300));
            if v > worst {
                worst = v;
                witness = Some(Witness {
                    q: q.0.as_slice().to_vec(),
                    indices: vec![i],
                    value: raw.abs(),
                });
            }
        }
    }
    Ok(CheckEntry::from_violation("s_orthogonality", tol, worst, witness))
}

/// Strong invariance of the metric on S: for every index triple (a, b, c)
/// the combination kappa(Y_a, [Y_b, Y_c]) + kappa(Y_c, [Y_b, Y_a]) must
/// vanish. Violations are normalized by the Cauchy-Schwarz bound of the two
/// pairings, so values live in [0, 1] for a definite metric.
pub fn check_strong_invariance(
    spec: &SystemSpec,
    samples: &[ChartPoint],
    tol: f64,
) -> Result<CheckEntry> {
    let k = spec.k();
    let mut worst = 0.0_f64;
    let mut witness = None;
    for q in samples {
        let kappa = spec.metric.at(q);
        let ys: Vec<DVector<f64>> = spec
            .s_basis
            .iter()
            .map(|y| y.at_checked(q))
            .collect::<Result<_>>()?;
        let norms: Vec<f64> = ys.iter().map(|y| spec.metric.norm(q, y)).collect();
        let mut brackets = vec![vec![None::<DVector<f64>>; k]; k];
        let mut bracket = |b: usize, c: usize| -> Result<DVector<f64>> {
            if brackets[b][c].is_none() {
                let v = lie_bracket(&spec.s_basis[b], &spec.s_basis[c], q, spec.fd_eps)?;
                brackets[c][b] = Some(-&v);
                brackets[b][c] = Some(v);
            }
            Ok(brackets[b][c].clone().unwrap())
        };
        for a in 0..k {
            for b in 0..k {
                for c in 0..k {
                    let bc = bracket(b, c)?;
                    let ba = bracket(b, a)?;
                    let raw = (&kappa * &bc).dot(&ys[a]) + (&kappa * &ba).dot(&ys[c]);
                    let denom = norms[a] * spec.metric.norm(q, &bc)
                        + norms[c] * spec.metric.norm(q, &ba);
                    let v = if denom < 1e-30 { 0.0 } else { raw.abs() / denom };
                    if v > worst {
                        worst = v;
                        witness = Some(Witness {
                            q: q.0.as_slice().to_vec(),
                            indices: vec![a, b, c],
                            value: raw.abs(),
                        });
                    }
                }
            }
        }
    }
    Ok(CheckEntry::from_violation("strong_invariance", tol, worst, witness))
}

/// max_i |kappa(X0, [Y_i, X0])| normalized by the Cauchy-Schwarz bound.
pub fn check_x0_condition(
    spec: &SystemSpec,
    samples: &[ChartPoint],
    tol: f64,
) -> Result<CheckEntry> {
    let mut worst = 0.0_f64;
    let mut witness = None;
    for q in samples {
        let x0q = spec.x0.at_checked(q)?;
        let x0n = spec.metric.norm(q, &x0q).max(1e-300);
        let kappa = spec.metric.at(q);
        for (i, y) in spec.s_basis.iter().enumerate() {
            let b = lie_bracket(y, &spec.x0, q, spec.fd_eps)?;
            let raw = (&kappa * &b).dot(&x0q);
            let denom = x0n * spec.metric.norm(q, &b);
            let v = if denom < 1e-30 { 0.0 } else { raw.abs() / denom };
            if v > worst {
                worst = v;
                witness = Some(Witness {
                    q: q.0.as_slice().to_vec(),
                    indices: vec![i],
                    value: raw.abs(),
                });
            }
        }
    }
    Ok(CheckEntry::from_violation("x0_condition", tol, worst, witness))
}

fn field_bracket_scale(
    x: &VectorField,
    y: &VectorField,
    q: &ChartPoint,
    eps: f64,
) -> Result<f64> {
    let jx = jacobian_fd(x, q, eps)?;
    let jy = jacobian_fd(y, q, eps)?;
    Ok(jx.amax() * y.at(q).amax() + jy.amax() * x.at(q).amax())
}

/// The S-basis must commute with every generator (invariance of the
/// sections); X0 need only bracket back into the vertical distribution
/// (projectability).
pub fn check_invariance_of_frame(
    spec: &SystemSpec,
    samples: &[ChartPoint],
    tol: f64,
) -> Result<CheckEntry> {
    let mut worst = 0.0_f64;
    let mut witness = None;
    for q in samples {
        let v_cols = DMatrix::from_columns(
            &spec
                .vertical_generators
                .iter()
                .map(|g| g.at(q))
                .collect::<Vec<_>>(),
        );
        let v_basis = linalg::orthonormalize(&v_cols);
        for (j, gen) in spec.vertical_generators.iter().enumerate() {
            for (i, y) in spec.s_basis.iter().enumerate() {
                let b = lie_bracket(y, gen, q, spec.fd_eps)?;
                let scale = field_bracket_scale(y, gen, q, spec.fd_eps)?;
                let v = if scale < 1e-30 { 0.0 } else { b.amax() / scale.max(1e-3) };
                if v > worst {
                    worst = v;
                    witness = Some(Witness {
                        q: q.0.as_slice().to_vec(),
                        indices: vec![i, j],
                        value: b.amax(),
                    });
                }
            }
            let b = lie_bracket(&spec.x0, gen, q, spec.fd_eps)?;
            let in_v = &v_basis * (v_basis.transpose() * &b);
            let out = (&b - in_v).amax();
            let scale = field_bracket_scale(&spec.x0, gen, q, spec.fd_eps)?;
            let v = if scale < 1e-30 { 0.0 } else { out / scale.max(1e-3) };
            if v > worst {
                worst = v;
                witness = Some(Witness {
                    q: q.0.as_slice().to_vec(),
                    indices: vec![usize::MAX, j],
                    value: out,
                });
            }
        }
    }
    Ok(CheckEntry::from_violation("frame_invariance", tol, worst, witness))
}

/// Run every hypothesis check on `count` deterministic samples.
pub fn full_report(spec: &SystemSpec, count: usize, tol: f64) -> Result<CheckReport> {
    let (samples, skipped) = sampling::domain_samples(spec, count);
    let checks = vec![
        check_dimension_assumption(spec, &samples, tol)?,
        check_s_orthogonality(spec, &samples, tol)?,
        check_strong_invariance(spec, &samples, tol)?,
        check_x0_condition(spec, &samples, tol)?,
        check_invariance_of_frame(spec, &samples, tol)?,
    ];
    let verdict = if checks.iter().all(|c| c.passed()) {
        CheckStatus::Pass
    } else {
        CheckStatus::Fail
    };
    Ok(CheckReport {
        system: spec.name.clone(),
        samples_used: samples.len(),
        samples_skipped: skipped,
        checks,
        verdict,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog;
    use crate::geometry::{ScalarField, VectorField};
    use crate::system::SystemSpecBuilder;
    use nalgebra::DVector;

    #[test]
    fn oscillator_all_checks_pass() {
        let entry = catalog::oscillator(Default::default()).unwrap();
        let report = full_report(&entry.spec, 100, DEFAULT_CHECK_TOL).unwrap();
        assert!(report.passed(), "{}", report.to_json());
        let si = report.entry("strong_invariance").unwrap();
        assert_eq!(si.max_violation, 0.0);
    }

    #[test]
    fn snakeboard_all_checks_pass() {
        let entry = catalog::snakeboard(Default::default()).unwrap();
        let report = full_report(&entry.spec, 100, DEFAULT_CHECK_TOL).unwrap();
        assert!(report.passed(), "{}", report.to_json());
    }

    #[test]
    fn r3se2_fails_exactly_strong_invariance() {
        let entry = catalog::r3se2_counterexample().unwrap();
        let report = full_report(&entry.spec, 100, DEFAULT_CHECK_TOL).unwrap();
        assert!(!report.passed());
        for entry_id in ["dimension_assumption", "s_orthogonality", "x0_condition", "frame_invariance"] {
            assert!(report.entry(entry_id).unwrap().passed(), "{entry_id} should pass");
        }
        let si = report.entry("strong_invariance").unwrap();
        assert!(!si.passed());
        let w = si.witness.as_ref().unwrap();
        assert_eq!(w.indices, vec![0, 1, 2]);
        assert!((w.value - 1.0).abs() < 1e-8, "witness value {}", w.value);
        assert!((si.max_violation - 1.0).abs() < 1e-8);
    }

    #[test]
    fn perturbed_oscillator_frame_invariance_fails() {
        let entry = catalog::oscillator(Default::default()).unwrap();
        let mut spec = entry.spec.clone();
        // Break invariance: Y -> Y + 0.1 x d/dx.
        spec.s_basis = vec![VectorField::new("Y_bad", |q: &ChartPoint| {
            DVector::from_column_slice(&[1.0 + 0.1 * q.0[0], 0.0, q.0[1]])
        })];
        let (samples, _) = crate::sampling::domain_samples(&spec, 60);
        let entry = check_invariance_of_frame(&spec, &samples, DEFAULT_CHECK_TOL).unwrap();
        assert!(!entry.passed());
        assert!(entry.max_violation > 1e-3);
    }

    #[test]
    fn witness_reproduces_violation() {
        let entry = catalog::r3se2_counterexample().unwrap();
        let spec = &entry.spec;
        let (samples, _) = crate::sampling::domain_samples(spec, 100);
        let check = check_strong_invariance(spec, &samples, DEFAULT_CHECK_TOL).unwrap();
        let w = check.witness.as_ref().unwrap();
        let q = ChartPoint::from_slice(&w.q);
        let (a, b, c) = (w.indices[0], w.indices[1], w.indices[2]);
        let kappa = spec.metric.at(&q);
        let bc = lie_bracket(&spec.s_basis[b], &spec.s_basis[c], &q, spec.fd_eps).unwrap();
        let ba = lie_bracket(&spec.s_basis[b], &spec.s_basis[a], &q, spec.fd_eps).unwrap();
        let raw = (&kappa * &bc).dot(&spec.s_basis[a].at(&q))
            + (&kappa * &ba).dot(&spec.s_basis[c].at(&q));
        assert!((raw.abs() - w.value).abs() <= 0.1 * w.value.max(1e-12));
    }

    #[test]
    fn rank_deficient_generators_fail_dimension_check() {
        // Planar system whose "vertical" generator never spans enough.
        let metric = crate::geometry::KineticMetric::constant(nalgebra::DMatrix::identity(3, 3));
        let eps = crate::geometry::OneForm::new("eps", |_q: &ChartPoint| {
            DVector::from_column_slice(&[0.0, 0.0, 1.0])
        });
        let spec = SystemSpecBuilder::new(
            "degenerate",
            3,
            metric,
            ScalarField::zero("U"),
            vec![eps],
            VectorField::coordinate("X0", 3, 0),
            vec![VectorField::coordinate("Y", 3, 1)],
            vec![VectorField::coordinate("Z", 3, 2)],
        )
        .vertical_generators(vec![VectorField::coordinate("g", 3, 1)])
        .build();
        let (samples, _) = crate::sampling::domain_samples(&spec, 20);
        // [X0 | Y | g] never reaches rank 3.
        let entry = check_dimension_assumption(&spec, &samples, DEFAULT_CHECK_TOL).unwrap();
        assert!(!entry.passed());
    }
}
