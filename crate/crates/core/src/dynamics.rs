//! Constrained equations of motion: saddle-point right-hand side, fixed-step
//! fourth-order integration with velocity projection, conservation
//! diagnostics and reduced-orbit periodicity detection.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::ChartPoint;
use crate::momentum::GaugeMomentum;
use crate::system::SystemSpec;

/// Position and velocity in chart coordinates; the velocity is expected to
/// satisfy the constraints.
#[derive(Clone, Debug)]
pub struct State {
    pub q: ChartPoint,
    pub v: DVector<f64>,
}

/// Per-step conservation diagnostics.
#[derive(Clone, Debug)]
pub struct DiagnosticsRow {
    pub energy: f64,
    pub momenta: Vec<f64>,
    pub constraint_residual: f64,
    /// Velocity coefficients in the adapted frame: v0 then v^1..v^k.
    pub v_frame: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<State>,
    pub diagnostics: Vec<DiagnosticsRow>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Max relative drift of diagnostic column `f` against its initial value.
    pub fn max_drift<F>(&self, f: F) -> f64
    where
        F: Fn(&DiagnosticsRow) -> f64,
    {
        let first = f(&self.diagnostics[0]);
        let scale = first.abs().max(1.0);
        self.diagnostics
            .iter()
            .map(|row| (f(row) - first).abs() / scale)
            .fold(0.0, f64::max)
    }

    pub fn max_constraint_residual(&self) -> f64 {
        self.diagnostics.iter().map(|r| r.constraint_residual).fold(0.0, f64::max)
    }
}

/// Acceleration and constraint multipliers of the constrained dynamics via
/// the saddle system [kappa A^T; A 0] [q_ddot; -lambda] = [-c - dU; -Adot v].
pub fn nonholonomic_rhs(spec: &SystemSpec, state: &State) -> Result<(DVector<f64>, DVector<f64>)> {
    let n = spec.dim_q;
    let nw = spec.n_w();
    let q = &state.q;
    let v = &state.v;
    let eps = spec.fd_eps;

    let kappa = spec.metric.at(q);

    // Christoffel force c_i = (d_j kappa_il - 1/2 d_i kappa_jl) v^j v^l from
    // finite differences of the metric matrix.
    let mut dkappa = Vec::with_capacity(n);
    for j in 0..n {
        let h = eps * q.0[j].abs().max(1.0);
        let plus = spec.metric.at(&q.displaced(j, h));
        let minus = spec.metric.at(&q.displaced(j, -h));
        dkappa.push((plus - minus) / (2.0 * h));
    }
    let mut c = DVector::zeros(n);
    for i in 0..n {
        let mut acc = 0.0;
        for j in 0..n {
            for l in 0..n {
                acc += (dkappa[j][(i, l)] - 0.5 * dkappa[i][(j, l)]) * v[j] * v[l];
            }
        }
        c[i] = acc;
    }

    let grad_u = spec.potential_gradient(q);

    // Constraint rows A(q) and the directional derivative of A along v.
    let mut a = DMatrix::zeros(nw, n);
    for (row, form) in spec.constraint_coframe.iter().enumerate() {
        a.set_row(row, &form.at(q).transpose());
    }
    let adot_v = {
        let scale = v.amax();
        if scale < 1e-300 {
            DVector::zeros(nw)
        } else {
            let h = eps * q.0.amax().max(1.0) / scale;
            let qp = q.displaced_along(v, h);
            let qm = q.displaced_along(v, -h);
            let mut ap = DMatrix::zeros(nw, n);
            let mut am = DMatrix::zeros(nw, n);
            for (row, form) in spec.constraint_coframe.iter().enumerate() {
                ap.set_row(row, &form.at(&qp).transpose());
                am.set_row(row, &form.at(&qm).transpose());
            }
            ((ap - am) / (2.0 * h)) * v
        }
    };

    let mut saddle = DMatrix::zeros(n + nw, n + nw);
    saddle.view_mut((0, 0), (n, n)).copy_from(&kappa);
    saddle.view_mut((0, n), (n, nw)).copy_from(&a.transpose());
    saddle.view_mut((n, 0), (nw, n)).copy_from(&a);
    let mut rhs = DVector::zeros(n + nw);
    rhs.rows_mut(0, n).copy_from(&(-&c - &grad_u));
    rhs.rows_mut(n, nw).copy_from(&(-adot_v));

    let solution = saddle
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::SaddleSingular { point: q.0.as_slice().to_vec() })?;
    if !solution.iter().all(|x| x.is_finite()) {
        return Err(Error::SaddleSingular { point: q.0.as_slice().to_vec() });
    }
    let accel = solution.rows(0, n).clone_owned();
    let lambda = -solution.rows(n, nw).clone_owned();
    Ok((accel, lambda))
}

/// One classical fourth-order step of (q, v) followed by projection of the
/// velocity onto D along W.
pub fn step_rk4_project(spec: &SystemSpec, state: &State, h: f64) -> Result<State> {
    let f = |s: &State| -> Result<(DVector<f64>, DVector<f64>)> {
        let (a, _) = nonholonomic_rhs(spec, s)?;
        Ok((s.v.clone(), a))
    };
    let (k1q, k1v) = f(state)?;
    let mid1 = State {
        q: ChartPoint(&state.q.0 + &k1q * (0.5 * h)),
        v: &state.v + &k1v * (0.5 * h),
    };
    let (k2q, k2v) = f(&mid1)?;
    let mid2 = State {
        q: ChartPoint(&state.q.0 + &k2q * (0.5 * h)),
        v: &state.v + &k2v * (0.5 * h),
    };
    let (k3q, k3v) = f(&mid2)?;
    let end = State { q: ChartPoint(&state.q.0 + &k3q * h), v: &state.v + &k3v * h };
    let (k4q, k4v) = f(&end)?;

    let q_new = ChartPoint(&state.q.0 + (k1q + k2q * 2.0 + k3q * 2.0 + k4q) * (h / 6.0));
    let v_new = &state.v + (k1v + k2v * 2.0 + k3v * 2.0 + k4v) * (h / 6.0);
    if !spec.in_domain(&q_new) {
        return Err(Error::DomainExit { t: f64::NAN });
    }
    let v_proj = spec.project_to_d(&q_new, &v_new)?;
    Ok(State { q: q_new, v: v_proj })
}

/// Fixed-step trajectory with per-step diagnostics. The supplied momenta are
/// evaluated and recorded at every step.
pub fn simulate(
    spec: &SystemSpec,
    state0: &State,
    t_final: f64,
    h: f64,
    momenta: &[GaugeMomentum],
) -> Result<Trajectory> {
    if !(h > 0.0 && t_final > 0.0) {
        return Err(Error::BadParameter("simulate: need h > 0 and t_final > 0".into()));
    }
    let steps = (t_final / h).round() as usize;
    let mut state = State {
        q: state0.q.clone(),
        v: spec.project_to_d(&state0.q, &state0.v)?,
    };
    let mut times = Vec::with_capacity(steps + 1);
    let mut states = Vec::with_capacity(steps + 1);
    let mut diagnostics = Vec::with_capacity(steps + 1);

    let diag = |s: &State| -> Result<DiagnosticsRow> {
        let energy = spec.energy(&s.q, &s.v);
        let momenta_vals = momenta.iter().map(|m| m.eval(spec, &s.q, &s.v)).collect();
        let v_frame = spec.d_coefficients(&s.q, &s.v)?.as_slice().to_vec();
        Ok(DiagnosticsRow {
            energy,
            momenta: momenta_vals,
            constraint_residual: spec.constraint_residual(&s.q, &s.v),
            v_frame,
        })
    };

    times.push(0.0);
    diagnostics.push(diag(&state)?);
    states.push(state.clone());
    for step in 1..=steps {
        let t = step as f64 * h;
        state = step_rk4_project(spec, &state, h).map_err(|e| match e {
            Error::DomainExit { .. } => Error::DomainExit { t },
            other => other,
        })?;
        times.push(t);
        diagnostics.push(diag(&state)?);
        states.push(state.clone());
    }
    Ok(Trajectory { times, states, diagnostics })
}

/// Outcome of the reduced-orbit periodicity scan.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum PeriodDetection {
    Periodic { period: f64 },
    Equilibrium,
    None,
}

const PERIOD_STATE_TOL: f64 = 1e-5;
const PERIOD_TIME_TOL: f64 = 0.01;
const EQUILIBRIUM_TOL: f64 = 1e-10;

/// Reduced coordinates (s, p0, p_1..p_k) of a recorded step.
fn reduced_point(spec: &SystemSpec, state: &State) -> Result<DVector<f64>> {
    let k = spec.k();
    let kappa = spec.metric.at(&state.q);
    let mut out = DVector::zeros(k + 2);
    out[0] = spec.shape_fn.at(&state.q);
    out[1] = (&kappa * &state.v).dot(&spec.x0.at(&state.q));
    for (i, y) in spec.s_basis.iter().enumerate() {
        out[2 + i] = (&kappa * &state.v).dot(&y.at(&state.q));
    }
    Ok(out)
}

/// Detect a period of the reduced orbit by successive returns to the slice
/// {s = s(0), s_dot > 0}. Requires at least three candidate returns; crossing
/// times are refined linearly.
pub fn detect_reduced_period(spec: &SystemSpec, traj: &Trajectory) -> Result<PeriodDetection> {
    if traj.len() < 3 {
        return Ok(PeriodDetection::None);
    }
    let reduced: Vec<DVector<f64>> = traj
        .states
        .iter()
        .map(|s| reduced_point(spec, s))
        .collect::<Result<_>>()?;

    // Equilibrium of the reduced dynamics: the reduced point never moves.
    let drift = reduced
        .iter()
        .map(|r| (r - &reduced[0]).amax())
        .fold(0.0, f64::max);
    if drift < EQUILIBRIUM_TOL * reduced[0].amax().max(1.0) {
        return Ok(PeriodDetection::Equilibrium);
    }

    let s0 = reduced[0][0];
    let sdot: Vec<f64> = traj
        .states
        .iter()
        .map(|st| {
            let c = spec.d_coefficients(&st.q, &st.v).expect("frame");
            c[0] * spec.shape_rate(&st.q)
        })
        .collect();

    let mut crossings: Vec<(f64, DVector<f64>)> = Vec::new();
    for i in 1..traj.len() {
        let (a, b) = (reduced[i - 1][0] - s0, reduced[i][0] - s0);
        if a <= 0.0 && b > 0.0 && sdot[i] > 0.0 {
            let frac = if (b - a).abs() > 1e-300 { -a / (b - a) } else { 0.0 };
            let t = traj.times[i - 1] + frac * (traj.times[i] - traj.times[i - 1]);
            let state = &reduced[i - 1] + (&reduced[i] - &reduced[i - 1]) * frac;
            crossings.push((t, state));
        }
    }
    if crossings.len() < 3 {
        return Ok(PeriodDetection::None);
    }

    let scale = reduced
        .iter()
        .map(|r| r.amax())
        .fold(0.0, f64::max)
        .max(1.0);
    let mut periods = Vec::new();
    for w in crossings.windows(2) {
        let dt = w[1].0 - w[0].0;
        let ds = (&w[1].1 - &w[0].1).amax() / scale;
        if ds > PERIOD_STATE_TOL {
            return Ok(PeriodDetection::None);
        }
        periods.push(dt);
    }
    let mean: f64 = periods.iter().sum::<f64>() / periods.len() as f64;
    let spread = periods
        .iter()
        .map(|p| (p - mean).abs())
        .fold(0.0, f64::max);
    if spread > PERIOD_TIME_TOL * mean {
        return Ok(PeriodDetection::None);
    }
    Ok(PeriodDetection::Periodic { period: mean })
}

fn fmt17(x: f64) -> String {
    format!("{x:.16e}")
}

/// Trajectory CSV: t, q_1..q_n, v_1..v_n, energy, J_1..J_k, constraint_residual.
pub fn write_trajectory_csv<W: Write>(
    spec: &SystemSpec,
    traj: &Trajectory,
    momenta_count: usize,
    out: &mut W,
) -> std::io::Result<()> {
    let n = spec.dim_q;
    let mut header = vec!["t".to_string()];
    header.extend((1..=n).map(|i| format!("q_{i}")));
    header.extend((1..=n).map(|i| format!("v_{i}")));
    header.push("energy".into());
    header.extend((1..=momenta_count).map(|i| format!("J_{i}")));
    header.push("constraint_residual".into());
    writeln!(out, "{}", header.join(","))?;
    for (i, t) in traj.times.iter().enumerate() {
        let mut row = vec![fmt17(*t)];
        row.extend(traj.states[i].q.0.iter().map(|&x| fmt17(x)));
        row.extend(traj.states[i].v.iter().map(|&x| fmt17(x)));
        row.push(fmt17(traj.diagnostics[i].energy));
        row.extend(traj.diagnostics[i].momenta.iter().map(|&x| fmt17(x)));
        row.push(fmt17(traj.diagnostics[i].constraint_residual));
        writeln!(out, "{}", row.join(","))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog;
    use crate::momentum::{gauge_momenta_from_solution, solve_fundamental_matrix};
    use approx::assert_abs_diff_eq;

    #[test]
    fn oscillator_rhs_hand_value() {
        // At rest with U = y^2/2 the only force is -dU, and the multiplier
        // vanishes: q_ddot = (0, -y/m, 0).
        let entry = catalog::oscillator(Default::default()).unwrap();
        let state = State {
            q: ChartPoint::from_slice(&[0.0, 1.0, 0.0]),
            v: DVector::zeros(3),
        };
        let (a, lambda) = nonholonomic_rhs(&entry.spec, &state).unwrap();
        assert_abs_diff_eq!(a[0], 0.0, epsilon = 1e-10);
        assert_abs_diff_eq!(a[1], -1.0, epsilon = 1e-9);
        assert_abs_diff_eq!(a[2], 0.0, epsilon = 1e-10);
        assert_abs_diff_eq!(lambda[0], 0.0, epsilon = 1e-9);
    }

    #[test]
    fn free_particle_in_flat_constraint_is_geodesic() {
        // Constant coframe, identity metric, zero potential: zero
        // acceleration for admissible velocities.
        use crate::geometry::{KineticMetric, OneForm, ScalarField, VectorField};
        use crate::system::SystemSpecBuilder;
        let spec = SystemSpecBuilder::new(
            "flat",
            3,
            KineticMetric::constant(DMatrix::identity(3, 3)),
            ScalarField::zero("U"),
            vec![OneForm::new("eps", |_q: &ChartPoint| {
                DVector::from_column_slice(&[0.0, 0.0, 1.0])
            })],
            VectorField::coordinate("X0", 3, 0),
            vec![VectorField::coordinate("Y", 3, 1)],
            vec![VectorField::coordinate("Z", 3, 2)],
        )
        .vertical_generators(vec![VectorField::coordinate("g", 3, 1), VectorField::coordinate("g2", 3, 2)])
        .build();
        let state = State {
            q: ChartPoint::from_slice(&[0.3, -0.2, 0.0]),
            v: DVector::from_column_slice(&[0.7, 0.4, 0.0]),
        };
        let (a, _) = nonholonomic_rhs(&spec, &state).unwrap();
        assert!(a.amax() < 1e-10);
        // Equilibrium stays put.
        let rest = State { q: state.q.clone(), v: DVector::zeros(3) };
        let next = step_rk4_project(&spec, &rest, 1e-2).unwrap();
        assert!((next.q.0 - rest.q.0).amax() < 1e-14);
    }

    #[test]
    fn oscillator_conservation_short_run() {
        let entry = catalog::oscillator(Default::default()).unwrap();
        let fs = solve_fundamental_matrix(&entry.spec, &entry.default_grid).unwrap();
        let momenta = gauge_momenta_from_solution(&entry.spec, &fs);
        let traj = simulate(&entry.spec, &entry.default_state, 2.0, 1e-3, &momenta).unwrap();
        assert!(traj.max_drift(|r| r.energy) < 1e-9);
        assert!(traj.max_drift(|r| r.momenta[0]) < 1e-9);
        assert!(traj.max_constraint_residual() < 1e-12);
    }

    #[test]
    fn oscillator_step_doubling_consistency() {
        let entry = catalog::oscillator(Default::default()).unwrap();
        let t1 = simulate(&entry.spec, &entry.default_state, 1.0, 2e-3, &[]).unwrap();
        let t2 = simulate(&entry.spec, &entry.default_state, 1.0, 1e-3, &[]).unwrap();
        let d = (&t1.states.last().unwrap().q.0 - &t2.states.last().unwrap().q.0).amax();
        assert!(d < 1e-11, "halving the step moved the endpoint by {d}");
    }

    #[test]
    fn oscillator_period_matches_quadrature() {
        // Reduced y-motion for U = y^2/2, m = 1: exactly harmonic, period
        // 2 pi regardless of amplitude (turning-point quadrature in closed
        // form).
        let entry = catalog::oscillator(Default::default()).unwrap();
        let traj = simulate(&entry.spec, &entry.default_state, 20.0, 1e-3, &[]).unwrap();
        match detect_reduced_period(&entry.spec, &traj).unwrap() {
            PeriodDetection::Periodic { period } => {
                assert_abs_diff_eq!(period, std::f64::consts::TAU, epsilon = 2e-3);
            }
            other => panic!("expected a period, got {other:?}"),
        }
    }

    #[test]
    fn snakeboard_reduced_orbit_is_not_periodic() {
        let entry = catalog::snakeboard(Default::default()).unwrap();
        let traj = simulate(&entry.spec, &entry.default_state, 10.0, 1e-3, &[]).unwrap();
        assert_eq!(detect_reduced_period(&entry.spec, &traj).unwrap(), PeriodDetection::None);
    }
}
