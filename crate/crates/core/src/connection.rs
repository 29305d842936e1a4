//! The affine connection induced on the S-sections, its gauge modification,
//! and parallel transport of momentum coefficients along trajectories.

use nalgebra::{DMatrix, DVector};

use crate::dynamics::Trajectory;
use crate::error::{Error, Result};
use crate::geometry::{jacobian_fd, ChartPoint};
use crate::linalg;
use crate::momentum::r_matrix;
use crate::system::SystemSpec;

/// Christoffel coefficients of the S-projected Levi-Civita derivative:
/// `gamma0[(l, j)]` for the X0 direction and `gammas[i][(l, j)]` for the
/// Y_i directions.
#[derive(Clone, Debug)]
pub struct HatChristoffel {
    pub gamma0: DMatrix<f64>,
    pub gammas: Vec<DMatrix<f64>>,
}

/// Coefficients of the bilinear correction form:
/// `sigma0[(l, j)]` = -(gamma0[(l, j)] + R[(l, j)]) on X0 (x) Y^j and
/// `sigmas[i][(l, j)]` = -gammas[i][(l, j)] on Y^i (x) Y^j.
#[derive(Clone, Debug)]
pub struct SigmaForm {
    pub sigma0: DMatrix<f64>,
    pub sigmas: Vec<DMatrix<f64>>,
}

impl SigmaForm {
    pub fn max_abs(&self) -> f64 {
        let mut m = self.sigma0.amax();
        for s in &self.sigmas {
            m = m.max(s.amax());
        }
        m
    }
}

/// Basis of S-perp inside V (the vertical complement used by the
/// connection), columns orthonormalized.
fn vertical_s_perp(spec: &SystemSpec, q: &ChartPoint) -> Result<DMatrix<f64>> {
    let gens: Vec<DVector<f64>> = spec
        .vertical_generators
        .iter()
        .map(|g| g.at_checked(q))
        .collect::<Result<_>>()?;
    let b_v = linalg::orthonormalize(&DMatrix::from_columns(&gens));
    let kappa = spec.metric.at(q);
    let k = spec.k();
    // Rows: kappa(Y_i, .) applied to the V-basis columns.
    let mut pair = DMatrix::zeros(k, b_v.ncols());
    for (i, y) in spec.s_basis.iter().enumerate() {
        let yk = (&kappa * y.at(q)).transpose();
        for c in 0..b_v.ncols() {
            pair[(i, c)] = (&yk * b_v.column(c))[(0, 0)];
        }
    }
    let ns = linalg::nullspace(&pair, 1e-9);
    let w = &b_v * ns;
    if w.ncols() != spec.n_w() {
        return Err(Error::FrameSingular { cond: f64::INFINITY });
    }
    Ok(linalg::orthonormalize(&w))
}

/// Levi-Civita covariant derivative (nabla_X Y)(q) in chart components,
/// with the metric derivatives taken by central differences.
pub fn levi_civita_derivative(
    spec: &SystemSpec,
    x: &crate::geometry::VectorField,
    y: &crate::geometry::VectorField,
    q: &ChartPoint,
) -> Result<DVector<f64>> {
    let n = spec.dim_q;
    let eps = spec.fd_eps;
    let xq = x.at_checked(q)?;
    let yq = y.at_checked(q)?;
    let dy = jacobian_fd(y, q, eps)?;

    let mut dkappa = Vec::with_capacity(n);
    for j in 0..n {
        let h = eps * q.0[j].abs().max(1.0);
        let plus = spec.metric.at(&q.displaced(j, h));
        let minus = spec.metric.at(&q.displaced(j, -h));
        dkappa.push((plus - minus) / (2.0 * h));
    }
    // 2 kappa(nabla_X Y, .)_m = sum_{j,l} X^j Y^l (d_j kappa_ml + d_l kappa_mj - d_m kappa_jl).
    let mut rhs = DVector::zeros(n);
    for m in 0..n {
        let mut acc = 0.0;
        for j in 0..n {
            for l in 0..n {
                acc += xq[j]
                    * yq[l]
                    * (dkappa[j][(m, l)] + dkappa[l][(m, j)] - dkappa[m][(j, l)]);
            }
        }
        rhs[m] = 0.5 * acc;
    }
    let kappa = spec.metric.at(q);
    let correction = kappa
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::SaddleSingular { point: q.0.as_slice().to_vec() })?;
    Ok(dy * xq + correction)
}

/// Christoffel coefficients of the S-projected connection at `q`. The
/// vertical complement is re-derived pointwise as S-perp inside V.
pub fn christoffel_hat(spec: &SystemSpec, q: &ChartPoint) -> Result<HatChristoffel> {
    let k = spec.k();
    let n = spec.dim_q;
    let w = vertical_s_perp(spec, q)?;
    let mut frame = DMatrix::zeros(n, n);
    frame.set_column(0, &spec.x0.at_checked(q)?);
    for (i, y) in spec.s_basis.iter().enumerate() {
        frame.set_column(1 + i, &y.at_checked(q)?);
    }
    for a in 0..spec.n_w() {
        frame.set_column(1 + k + a, &w.column(a).clone_owned());
    }
    let cond = linalg::cond_2(&frame);
    if !cond.is_finite() || cond > crate::system::FRAME_COND_LIMIT {
        return Err(Error::FrameSingular { cond });
    }
    let frame_inv = frame.try_inverse().ok_or(Error::FrameSingular { cond })?;

    let project_s = |v: &DVector<f64>| -> DVector<f64> {
        let c = &frame_inv * v;
        c.rows(1, k).clone_owned()
    };

    let mut gamma0 = DMatrix::zeros(k, k);
    for j in 0..k {
        let nab = levi_civita_derivative(spec, &spec.x0, &spec.s_basis[j], q)?;
        gamma0.set_column(j, &project_s(&nab));
    }
    let mut gammas = Vec::with_capacity(k);
    for i in 0..k {
        let mut gi = DMatrix::zeros(k, k);
        for j in 0..k {
            let nab = levi_civita_derivative(spec, &spec.s_basis[i], &spec.s_basis[j], q)?;
            gi.set_column(j, &project_s(&nab));
        }
        gammas.push(gi);
    }
    Ok(HatChristoffel { gamma0, gammas })
}

/// The gauge correction built from the hat-connection and the R matrix.
pub fn sigma_form(spec: &SystemSpec, q: &ChartPoint) -> Result<SigmaForm> {
    let hat = christoffel_hat(spec, q)?;
    let r = r_matrix(spec, q)?;
    let sigma0 = -(&hat.gamma0 + &r);
    let sigmas = hat.gammas.iter().map(|g| -g).collect();
    Ok(SigmaForm { sigma0, sigmas })
}

/// Coefficients transported along a trajectory.
#[derive(Clone, Debug)]
pub struct TransportState {
    pub t: f64,
    pub f: DVector<f64>,
}

/// Integrate the transport equation f_dot = v0(t) R(q(t)) f along the
/// trajectory with the same fourth-order scheme, one step per recorded
/// interval. Midpoint data comes from cubic Hermite interpolation of the
/// recorded states.
pub fn parallel_transport_along(
    spec: &SystemSpec,
    traj: &Trajectory,
    f0: &DVector<f64>,
) -> Result<Vec<TransportState>> {
    let n_nodes = traj.len();
    let mut out = Vec::with_capacity(n_nodes);
    let mut f = f0.clone();
    out.push(TransportState { t: traj.times[0], f: f.clone() });

    let rate = |q: &ChartPoint, v0: f64, f: &DVector<f64>| -> Result<DVector<f64>> {
        Ok(r_matrix(spec, q)? * f * v0)
    };

    for i in 0..n_nodes - 1 {
        let h = traj.times[i + 1] - traj.times[i];
        let (qa, va) = (&traj.states[i].q.0, &traj.states[i].v);
        let (qb, vb) = (&traj.states[i + 1].q.0, &traj.states[i + 1].v);
        // Cubic Hermite midpoint of the configuration and its derivative.
        let q_mid = ChartPoint((qa + qb) * 0.5 + (va - vb) * (h / 8.0));
        let v_mid = (qb - qa) * (1.5 / h) - (va + vb) * 0.25;

        let v0_a = traj.diagnostics[i].v_frame[0];
        let v0_b = traj.diagnostics[i + 1].v_frame[0];
        let v0_mid = spec.d_coefficients(&q_mid, &v_mid)?[0];

        let qa_pt = &traj.states[i].q;
        let qb_pt = &traj.states[i + 1].q;
        let k1 = rate(qa_pt, v0_a, &f)?;
        let k2 = rate(&q_mid, v0_mid, &(&f + &k1 * (0.5 * h)))?;
        let k3 = rate(&q_mid, v0_mid, &(&f + &k2 * (0.5 * h)))?;
        let k4 = rate(qb_pt, v0_b, &(&f + &k3 * h))?;
        f += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
        out.push(TransportState { t: traj.times[i + 1], f: f.clone() });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog;
    use crate::dynamics::simulate;
    use crate::momentum::{gauge_momenta_from_solution, solve_fundamental_matrix};
    use approx::assert_abs_diff_eq;

    #[test]
    fn oscillator_hat_christoffel_closed_form() {
        let entry = catalog::oscillator(Default::default()).unwrap();
        for y in [-1.2, -0.5, 0.0, 0.8, 1.6] {
            let q = entry.spec.section_at(y);
            let hat = christoffel_hat(&entry.spec, &q).unwrap();
            assert_abs_diff_eq!(hat.gamma0[(0, 0)], y / (1.0 + y * y), epsilon = 1e-7);
            assert!(hat.gammas[0].amax() < 1e-7);
        }
    }

    #[test]
    fn oscillator_sigma_vanishes() {
        let entry = catalog::oscillator(Default::default()).unwrap();
        for y in [-1.0, 0.3, 1.4] {
            let q = entry.spec.section_at(y);
            let sigma = sigma_form(&entry.spec, &q).unwrap();
            assert!(sigma.max_abs() < 1e-7, "sigma = {:?}", sigma);
        }
    }

    #[test]
    fn snakeboard_hat_christoffel_closed_form() {
        let entry = catalog::snakeboard(Default::default()).unwrap();
        let (m, r, jr) = (1.0, 1.0, 0.5);
        for phi in [-0.9f64, -0.2, 0.0, 0.5, 1.1] {
            let q = ChartPoint::from_slice(&[0.4, 0.2, -0.1, 0.9, phi]);
            let hat = christoffel_hat(&entry.spec, &q).unwrap();
            let delta = m * r * r - jr * phi.sin() * phi.sin();
            assert_abs_diff_eq!(
                hat.gamma0[(0, 0)],
                -jr * phi.sin() * phi.cos() / delta,
                epsilon = 1e-7
            );
            assert_abs_diff_eq!(
                hat.gamma0[(1, 0)],
                m * r * r * phi.cos() / delta,
                epsilon = 1e-7
            );
            assert!(hat.gamma0[(0, 1)].abs() < 1e-7);
            assert!(hat.gamma0[(1, 1)].abs() < 1e-7);
            for g in &hat.gammas {
                assert!(g.amax() < 1e-7);
            }
        }
    }

    #[test]
    fn snakeboard_sigma_vanishes() {
        let entry = catalog::snakeboard(Default::default()).unwrap();
        let q = ChartPoint::from_slice(&[0.7, -0.3, 0.2, 1.1, 0.6]);
        let sigma = sigma_form(&entry.spec, &q).unwrap();
        assert!(sigma.max_abs() < 1e-7);
    }

    #[test]
    fn transport_matches_static_solution_on_oscillator() {
        let entry = catalog::oscillator(Default::default()).unwrap();
        let spec = &entry.spec;
        let traj = simulate(spec, &entry.default_state, 5.0, 1e-3, &[]).unwrap();
        let f0 = DVector::from_column_slice(&[1.0]);
        let transported = parallel_transport_along(spec, &traj, &f0).unwrap();
        let y0 = entry.default_state.q.0[1];
        for (i, ts) in transported.iter().enumerate().step_by(500) {
            let y = traj.states[i].q.0[1];
            let expect = f0[0] * ((1.0 + y0 * y0) / (1.0 + y * y)).sqrt();
            assert_abs_diff_eq!(ts.f[0], expect, epsilon = 1e-7);
        }
        // Transported momentum J(t) = f_i(t) kappa(Y_i, v) is constant.
        let kappa0 = spec.metric.at(&traj.states[0].q);
        let j0 = f0[0] * (&kappa0 * &traj.states[0].v).dot(&spec.s_basis[0].at(&traj.states[0].q));
        for (i, ts) in transported.iter().enumerate().step_by(250) {
            let q = &traj.states[i].q;
            let kappa = spec.metric.at(q);
            let j = ts.f[0] * (&kappa * &traj.states[i].v).dot(&spec.s_basis[0].at(q));
            assert_abs_diff_eq!(j, j0, epsilon = 1e-7 * j0.abs().max(1.0));
        }
        // Zero initial data stays zero.
        let z = parallel_transport_along(spec, &traj, &DVector::zeros(1)).unwrap();
        assert!(z.iter().all(|ts| ts.f.amax() == 0.0));
    }

    #[test]
    fn transport_agrees_with_fundamental_solution_on_snakeboard() {
        let entry = catalog::snakeboard(Default::default()).unwrap();
        let spec = &entry.spec;
        let fs = solve_fundamental_matrix(spec, &entry.default_grid).unwrap();
        let momenta = gauge_momenta_from_solution(spec, &fs);
        let traj = simulate(spec, &entry.default_state, 5.0, 1e-3, &momenta).unwrap();
        let f0 = fs.value_at(spec.shape_fn.at(&traj.states[0].q)).column(0).clone_owned();
        let transported = parallel_transport_along(spec, &traj, &f0).unwrap();
        for (i, ts) in transported.iter().enumerate().step_by(1000) {
            let s = spec.shape_fn.at(&traj.states[i].q);
            let expect = fs.value_at(s).column(0).clone_owned();
            assert!((&ts.f - &expect).amax() < 1e-6, "step {i}: {:?} vs {:?}", ts.f, expect);
        }
    }
}
