//! Gauge 2-form assembly on the constraint frame, the induced rank-2
//! reduced bivector, and the numerical Casimir/Jacobi certification.
//!
//! Tangent vectors on the momentum phase space are expressed in the
//! constraint frame {X0-lift, Y_i-lifts, d/dp0, d/dp_i}; a frame vector is a
//! coefficient vector of length 2k + 2.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::dynamics::{nonholonomic_rhs, State};
use crate::error::{Error, Result};
use crate::geometry::{d_oneform_pair, lie_bracket, ChartPoint, OneForm, VectorField};
use crate::momentum::{r_matrix, FundamentalSolution};
use crate::system::SystemSpec;

/// Frame dimension on the constraint distribution of the momentum space.
pub fn c_frame_dim(spec: &SystemSpec) -> usize {
    2 * spec.k() + 2
}

/// Momenta (p0, p_1..p_k, p_a...) of a state in the adapted coframe.
pub fn frame_momenta(spec: &SystemSpec, state: &State) -> (f64, DVector<f64>, DVector<f64>) {
    let kappa = spec.metric.at(&state.q);
    let kv = &kappa * &state.v;
    let p0 = kv.dot(&spec.x0.at(&state.q));
    let ps = DVector::from_iterator(
        spec.k(),
        spec.s_basis.iter().map(|y| kv.dot(&y.at(&state.q))),
    );
    let pw = DVector::from_iterator(
        spec.n_w(),
        spec.w_basis.iter().map(|z| kv.dot(&z.at(&state.q))),
    );
    (p0, ps, pw)
}

/// Reconstruct the admissible velocity from frame momenta (p0, p_S), using
/// the S-orthogonality of X0.
pub fn state_from_momenta(
    spec: &SystemSpec,
    q: &ChartPoint,
    p0: f64,
    ps: &DVector<f64>,
) -> Result<State> {
    let kappa = spec.metric.at(q);
    let x0q = spec.x0.at_checked(q)?;
    let k00 = (&kappa * &x0q).dot(&x0q);
    if k00.abs() < 1e-300 {
        return Err(Error::MetricDegenerateOnS { point: q.0.as_slice().to_vec() });
    }
    let ks = crate::momentum::kappa_s_matrix(spec, q)?;
    let vs = ks
        .lu()
        .solve(ps)
        .ok_or_else(|| Error::MetricDegenerateOnS { point: q.0.as_slice().to_vec() })?;
    let mut v = x0q * (p0 / k00);
    for (i, y) in spec.s_basis.iter().enumerate() {
        v += y.at(q) * vs[i];
    }
    Ok(State { q: q.clone(), v })
}

/// Base field with constant coefficients in the adapted frame.
fn frame_combination_field(spec: &SystemSpec, coeffs: &DVector<f64>) -> VectorField {
    let x0 = spec.x0.clone();
    let ys = spec.s_basis.clone();
    let c = coeffs.clone();
    VectorField::new("frame-combo", move |q: &ChartPoint| {
        let mut v = x0.at(q) * c[0];
        for (i, y) in ys.iter().enumerate() {
            v += y.at(q) * c[1 + i];
        }
        v
    })
}

/// Dual coframe row `1 + i` (the Y^i form) as a standalone one-form.
fn dual_s_form(spec: &SystemSpec, i: usize) -> OneForm {
    let spec_c = spec.clone();
    OneForm::new(format!("Y^{}", i + 1), move |q: &ChartPoint| match spec_c.frame(q) {
        Ok(f) => f.dual_row(1 + i),
        Err(_) => DVector::from_element(spec_c.dim_q, f64::NAN),
    })
}

/// Pairing of the constraint-curvature term: sum_a p_a d eps^a on the base
/// parts of the frame vectors. Fiber components are annihilated.
pub fn w_curvature_pairing(
    spec: &SystemSpec,
    state: &State,
    u: &DVector<f64>,
    w: &DVector<f64>,
) -> Result<f64> {
    let k = spec.k();
    let (_, _, pw) = frame_momenta(spec, state);
    let uf = frame_combination_field(spec, &u.rows(0, 1 + k).clone_owned());
    let wf = frame_combination_field(spec, &w.rows(0, 1 + k).clone_owned());
    let mut acc = 0.0;
    for (a, eps) in spec.constraint_coframe.iter().enumerate() {
        acc += pw[a] * d_oneform_pair(eps, &uf, &wf, &state.q, spec.fd_eps)?;
    }
    Ok(acc)
}

/// The gauge 2-form on a pair of frame vectors:
/// sum_a p_a d eps^a - p_i R_ij X^0 ^ Y^j + p_i d Y^i, all semi-basic.
pub fn assemble_b_hgs(
    spec: &SystemSpec,
    state: &State,
    u: &DVector<f64>,
    w: &DVector<f64>,
) -> Result<f64> {
    let k = spec.k();
    let (_, ps, _) = frame_momenta(spec, state);
    let ub = u.rows(0, 1 + k).clone_owned();
    let wb = w.rows(0, 1 + k).clone_owned();

    let mut total = w_curvature_pairing(spec, state, u, w)?;

    let r = r_matrix(spec, &state.q)?;
    for i in 0..k {
        for j in 0..k {
            // X^0 ^ Y^j on frame vectors is exact in coefficients.
            let wedge = ub[0] * wb[1 + j] - wb[0] * ub[1 + j];
            total -= ps[i] * r[(i, j)] * wedge;
        }
    }

    let uf = frame_combination_field(spec, &ub);
    let wf = frame_combination_field(spec, &wb);
    for i in 0..k {
        let yi = dual_s_form(spec, i);
        total += ps[i] * d_oneform_pair(&yi, &uf, &wf, &state.q, spec.fd_eps)?;
    }
    Ok(total)
}

/// Full antisymmetric matrix of the gauge 2-form on the constraint frame.
pub fn b_hgs_frame_matrix(spec: &SystemSpec, state: &State) -> Result<DMatrix<f64>> {
    let dim = c_frame_dim(spec);
    let k = spec.k();
    let mut out = DMatrix::zeros(dim, dim);
    // Semi-basic: only base-base entries can be nonzero.
    for a in 0..=k {
        for b in (a + 1)..=k {
            let mut u = DVector::zeros(dim);
            let mut w = DVector::zeros(dim);
            u[a] = 1.0;
            w[b] = 1.0;
            let v = assemble_b_hgs(spec, state, &u, &w)?;
            out[(a, b)] = v;
            out[(b, a)] = -v;
        }
    }
    Ok(out)
}

/// Natural magnitude of the three constituents of the gauge form at a state,
/// used to normalize cancellation tests.
pub fn b_hgs_scale(spec: &SystemSpec, state: &State) -> Result<f64> {
    let k = spec.k();
    let (_, ps, pw) = frame_momenta(spec, state);
    let mut scale = 0.0_f64;
    for a in 0..=k {
        for b in (a + 1)..=k {
            let mut u = DVector::zeros(c_frame_dim(spec));
            let mut w = DVector::zeros(c_frame_dim(spec));
            u[a] = 1.0;
            w[b] = 1.0;
            let ub = u.rows(0, 1 + k).clone_owned();
            let wb = w.rows(0, 1 + k).clone_owned();
            let uf = frame_combination_field(spec, &ub);
            let wf = frame_combination_field(spec, &wb);
            for (ai, eps) in spec.constraint_coframe.iter().enumerate() {
                scale = scale
                    .max((pw[ai] * d_oneform_pair(eps, &uf, &wf, &state.q, spec.fd_eps)?).abs());
            }
            let r = r_matrix(spec, &state.q)?;
            for i in 0..k {
                for j in 0..k {
                    let wedge = ub[0] * wb[1 + j] - wb[0] * ub[1 + j];
                    scale = scale.max((ps[i] * r[(i, j)] * wedge).abs());
                }
            }
            for i in 0..k {
                let yi = dual_s_form(spec, i);
                scale = scale
                    .max((ps[i] * d_oneform_pair(&yi, &uf, &wf, &state.q, spec.fd_eps)?).abs());
            }
        }
    }
    Ok(scale)
}

/// The restricted symplectic structure on frame vectors. With frame-constant
/// coefficient extensions this is exact up to the bracket differences:
/// Omega(u, w) = sum_A (u_A w_pA - w_A u_pA) + kappa(v, [U_base, W_base]).
pub fn omega_m_on_c(
    spec: &SystemSpec,
    state: &State,
    u: &DVector<f64>,
    w: &DVector<f64>,
) -> Result<f64> {
    let k = spec.k();
    let mut acc = 0.0;
    for a in 0..=k {
        acc += u[a] * w[1 + k + a] - w[a] * u[1 + k + a];
    }
    let ub = u.rows(0, 1 + k).clone_owned();
    let wb = w.rows(0, 1 + k).clone_owned();
    if ub.amax() > 0.0 && wb.amax() > 0.0 {
        let uf = frame_combination_field(spec, &ub);
        let wf = frame_combination_field(spec, &wb);
        let br = lie_bracket(&uf, &wf, &state.q, spec.fd_eps)?;
        let kappa = spec.metric.at(&state.q);
        acc += (&kappa * &br).dot(&state.v);
    }
    Ok(acc)
}

/// Matrix of Omega + B on the constraint frame.
pub fn gauged_form_matrix(spec: &SystemSpec, state: &State) -> Result<DMatrix<f64>> {
    let dim = c_frame_dim(spec);
    let b = b_hgs_frame_matrix(spec, state)?;
    let mut out = b;
    for a in 0..dim {
        for c in (a + 1)..dim {
            let mut u = DVector::zeros(dim);
            let mut w = DVector::zeros(dim);
            u[a] = 1.0;
            w[c] = 1.0;
            let v = omega_m_on_c(spec, state, &u, &w)?;
            out[(a, c)] += v;
            out[(c, a)] -= v;
        }
    }
    Ok(out)
}

/// Frame components of the dynamics on the momentum space: base velocity
/// coefficients and the momentum rates.
pub fn x_nh_frame(spec: &SystemSpec, state: &State) -> Result<DVector<f64>> {
    let k = spec.k();
    let (accel, _) = nonholonomic_rhs(spec, state)?;
    let coeffs = spec.d_coefficients(&state.q, &state.v)?;
    let kappa = spec.metric.at(&state.q);
    let v = &state.v;
    let eps = spec.fd_eps;

    // d/dt kappa along the motion.
    let dkappa_v = {
        let scale = v.amax().max(1e-300);
        let h = eps * state.q.0.amax().max(1.0) / scale;
        let plus = spec.metric.at(&state.q.displaced_along(v, h));
        let minus = spec.metric.at(&state.q.displaced_along(v, -h));
        (plus - minus) / (2.0 * h)
    };

    let mut out = DVector::zeros(c_frame_dim(spec));
    for a in 0..=k {
        out[a] = coeffs[a];
    }
    let mut rate_for = |field: &VectorField, slot: usize| -> Result<()> {
        let fq = field.at_checked(&state.q)?;
        let jac = crate::geometry::jacobian_fd(field, &state.q, eps)?;
        let rate = (&kappa * &fq).dot(&accel)
            + (&dkappa_v * &fq).dot(v)
            + (&kappa * (jac * v)).dot(v);
        out[1 + k + slot] = rate;
        Ok(())
    };
    rate_for(&spec.x0, 0)?;
    for i in 0..k {
        let y = spec.s_basis[i].clone();
        rate_for(&y, 1 + i)?;
    }
    Ok(out)
}

/// Max of |B(X_nh, frame_A)| over the frame, normalized by the magnitude of
/// B and the dynamics coefficients.
pub fn dynamical_gauge_check(spec: &SystemSpec, states: &[State]) -> Result<f64> {
    let dim = c_frame_dim(spec);
    let mut worst = 0.0_f64;
    for state in states {
        let b = b_hgs_frame_matrix(spec, state)?;
        let x = x_nh_frame(spec, state)?;
        let contracted = &b * &x;
        let scale = b_hgs_scale(spec, state)? * x.amax() + 1e-6;
        for a in 0..dim {
            worst = worst.max(contracted[a].abs() / scale);
        }
    }
    Ok(worst)
}

/// The reduced bivector at a reduced point (s, p0, p_1..p_k), obtained by
/// inverting the gauged 2-form on the constraint frame and pushing through
/// the invariant coordinates.
#[derive(Clone)]
pub struct ReducedBivector {
    eval: Arc<dyn Fn(&DVector<f64>) -> Result<DMatrix<f64>> + Send + Sync>,
    pub dim: usize,
}

impl ReducedBivector {
    pub fn new<F>(dim: usize, eval: F) -> Self
    where
        F: Fn(&DVector<f64>) -> Result<DMatrix<f64>> + Send + Sync + 'static,
    {
        ReducedBivector { eval: Arc::new(eval), dim }
    }

    pub fn at(&self, zeta: &DVector<f64>) -> Result<DMatrix<f64>> {
        (self.eval)(zeta)
    }
}

/// Lift a reduced point through the shape section.
pub fn lift_reduced(spec: &SystemSpec, zeta: &DVector<f64>) -> Result<State> {
    let q = spec.section_at(zeta[0]);
    if !spec.in_domain(&q) {
        return Err(Error::BadParameter(format!("reduced point lifts outside the domain: s = {}", zeta[0])));
    }
    state_from_momenta(spec, &q, zeta[1], &zeta.rows(2, spec.k()).clone_owned())
}

/// Pointwise reduced bivector.
pub fn reduced_bivector_at(spec: &SystemSpec, zeta: &DVector<f64>) -> Result<DMatrix<f64>> {
    let k = spec.k();
    let state = lift_reduced(spec, zeta)?;
    let o = gauged_form_matrix(spec, &state)?;
    let o_inv = o
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::DegenerateTwoForm { point: state.q.0.as_slice().to_vec() })?;
    let pi_frame = -o_inv;

    // Differentials of (s, p0, p_i) on the constraint frame.
    let g = spec.shape_rate(&state.q);
    let mut l = DMatrix::zeros(k + 2, c_frame_dim(spec));
    l[(0, 0)] = g;
    for a in 0..=k {
        l[(1 + a, 1 + k + a)] = 1.0;
    }
    Ok(&l * pi_frame * l.transpose())
}

/// Closure form of the pointwise evaluation.
pub fn reduced_bivector_field(spec: &SystemSpec) -> ReducedBivector {
    let spec = spec.clone();
    let dim = spec.k() + 2;
    ReducedBivector::new(dim, move |zeta| reduced_bivector_at(&spec, zeta))
}

/// Rank diagnostics: ratio of the third-largest to the largest singular
/// value (zero means exact rank 2).
pub fn bivector_rank_excess(pi: &DMatrix<f64>) -> f64 {
    let sv = crate::linalg::singular_values(pi);
    if sv.len() < 3 || sv[0] == 0.0 {
        return 0.0;
    }
    sv[2] / sv[0]
}

/// Reduced momenta built from the fundamental solution: gradients are exact
/// in the fiber variables and use the solved node slopes in s.
pub fn reduced_momentum_gradient(
    spec: &SystemSpec,
    fs: &FundamentalSolution,
    zeta: &DVector<f64>,
    l: usize,
) -> DVector<f64> {
    let k = spec.k();
    let s = zeta[0];
    let f = fs.value_at(s);
    let fp = fs.derivative_fd_at(s);
    let mut grad = DVector::zeros(k + 2);
    for i in 0..k {
        grad[0] += fp[(i, l)] * zeta[2 + i];
        grad[2 + i] = f[(i, l)];
    }
    grad
}

/// Max normalized |pi . dJbar_l| over reduced sample points.
pub fn casimir_check(
    spec: &SystemSpec,
    fs: &FundamentalSolution,
    samples: &[DVector<f64>],
) -> Result<f64> {
    let mut worst = 0.0_f64;
    for zeta in samples {
        let pi = reduced_bivector_at(spec, zeta)?;
        for l in 0..fs.k {
            let grad = reduced_momentum_gradient(spec, fs, zeta, l);
            let v = (&pi * &grad).amax();
            let scale = pi.amax() * grad.amax() + 1e-12;
            worst = worst.max(v / scale);
        }
    }
    Ok(worst)
}

const JACOBI_FD_STEP: f64 = 1e-4;

/// Max normalized Jacobiator over coordinate triples at the samples, using
/// nested central differences of the bivector entries.
pub fn jacobi_check<F>(pi_fn: &F, dim: usize, samples: &[DVector<f64>]) -> Result<f64>
where
    F: Fn(&DVector<f64>) -> Result<DMatrix<f64>>,
{
    let mut worst = 0.0_f64;
    for zeta in samples {
        let pi = pi_fn(zeta)?;
        // d_d pi^{bc} by central differences.
        let mut dpi = Vec::with_capacity(dim);
        for d in 0..dim {
            let h = JACOBI_FD_STEP * zeta[d].abs().max(1.0);
            let mut zp = zeta.clone();
            let mut zm = zeta.clone();
            zp[d] += h;
            zm[d] -= h;
            dpi.push((pi_fn(&zp)? - pi_fn(&zm)?) / (2.0 * h));
        }
        let dpi_scale = dpi.iter().map(|m| m.amax()).fold(0.0, f64::max);
        let scale = pi.amax() * dpi_scale.max(1e-3) + 1e-12;
        for a in 0..dim {
            for b in (a + 1)..dim {
                for c in (b + 1)..dim {
                    let mut j = 0.0;
                    for d in 0..dim {
                        j += pi[(a, d)] * dpi[d][(b, c)]
                            + pi[(b, d)] * dpi[d][(c, a)]
                            + pi[(c, d)] * dpi[d][(a, b)];
                    }
                    worst = worst.max(j.abs() / scale);
                }
            }
        }
    }
    Ok(worst)
}

/// Compare pi . dH_red with the finite-difference reduced flow at a point.
pub fn hamiltonian_consistency(spec: &SystemSpec, zeta: &DVector<f64>) -> Result<f64> {
    let k = spec.k();
    let dim = k + 2;
    let pi = reduced_bivector_at(spec, zeta)?;

    let h_red = |z: &DVector<f64>| -> Result<f64> {
        let st = lift_reduced(spec, z)?;
        Ok(spec.energy(&st.q, &st.v))
    };
    let mut grad = DVector::zeros(dim);
    for d in 0..dim {
        let h = 1e-5 * zeta[d].abs().max(1.0);
        let mut zp = zeta.clone();
        let mut zm = zeta.clone();
        zp[d] += h;
        zm[d] -= h;
        grad[d] = (h_red(&zp)? - h_red(&zm)?) / (2.0 * h);
    }
    let x_ham = &pi * &grad;

    // Reduced flow by a symmetric pair of short integration steps.
    let state = lift_reduced(spec, zeta)?;
    let delta = 1e-4;
    let fwd = crate::dynamics::step_rk4_project(spec, &state, delta)?;
    let bwd = crate::dynamics::step_rk4_project(spec, &state, -delta)?;
    let red = |st: &State| -> Result<DVector<f64>> {
        let kappa = spec.metric.at(&st.q);
        let mut out = DVector::zeros(dim);
        out[0] = spec.shape_fn.at(&st.q);
        out[1] = (&kappa * &st.v).dot(&spec.x0.at(&st.q));
        for (i, y) in spec.s_basis.iter().enumerate() {
            out[2 + i] = (&kappa * &st.v).dot(&y.at(&st.q));
        }
        Ok(out)
    };
    let x_flow = (red(&fwd)? - red(&bwd)?) / (2.0 * delta);

    let scale = x_flow.amax().max(x_ham.amax()).max(1e-3);
    Ok((x_ham - x_flow).amax() / scale)
}

/// Snapshot of the reduced bivector at a reduced point.
#[derive(Clone, Debug, Serialize)]
pub struct BivectorSnapshot {
    pub reduced_point: Vec<f64>,
    pub pi_entries: Vec<Vec<f64>>,
}

/// Summary report of the hamiltonization pipeline.
#[derive(Clone, Debug, Serialize)]
pub struct HamiltonizationReport {
    pub system: String,
    pub b_is_zero: bool,
    pub b_max_normalized: f64,
    pub dynamical_gauge_max: f64,
    pub bivector_rank_max: f64,
    pub casimir_max: f64,
    pub jacobi_max: f64,
    pub hamiltonian_consistency_max: f64,
    pub snapshots: Vec<BivectorSnapshot>,
}

impl HamiltonizationReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialization")
    }
}

/// Deterministic reduced sample points around the section lift of the grid.
pub fn reduced_samples(spec: &SystemSpec, fs: &FundamentalSolution, count: usize) -> Vec<DVector<f64>> {
    let k = spec.k();
    let lo = fs.grid.s_values.first().copied().unwrap();
    let hi = fs.grid.s_values.last().copied().unwrap();
    let span = hi - lo;
    let mut bounds = vec![(lo + 0.1 * span, hi - 0.1 * span)];
    for _ in 0..=k {
        bounds.push((-1.0, 1.0));
    }
    crate::sampling::halton_box(&bounds, count)
        .into_iter()
        .map(|p| p.0)
        .filter(|z| spec.in_domain(&spec.section_at(z[0])))
        .collect()
}

/// Run the full hamiltonization diagnostics.
pub fn hamiltonization_report(
    spec: &SystemSpec,
    fs: &FundamentalSolution,
    sample_count: usize,
) -> Result<HamiltonizationReport> {
    let samples = reduced_samples(spec, fs, sample_count);
    let mut b_max = 0.0_f64;
    let mut states = Vec::new();
    for zeta in &samples {
        let state = lift_reduced(spec, zeta)?;
        let b = b_hgs_frame_matrix(spec, &state)?;
        let scale = b_hgs_scale(spec, &state)? + 1e-6;
        b_max = b_max.max(b.amax() / scale);
        states.push(state);
    }
    let probe_states: Vec<State> = states.iter().take(20).cloned().collect();
    let dynamical_gauge_max = dynamical_gauge_check(spec, &probe_states)?;

    let mut rank_max = 0.0_f64;
    let mut snapshots = Vec::new();
    for (i, zeta) in samples.iter().enumerate() {
        let pi = reduced_bivector_at(spec, zeta)?;
        rank_max = rank_max.max(bivector_rank_excess(&pi));
        if i < 3 {
            snapshots.push(BivectorSnapshot {
                reduced_point: zeta.as_slice().to_vec(),
                pi_entries: (0..pi.nrows())
                    .map(|r| pi.row(r).iter().copied().collect())
                    .collect(),
            });
        }
    }
    let casimir_max = casimir_check(spec, fs, &samples)?;
    let jacobi_samples: Vec<DVector<f64>> = samples.iter().take(10).cloned().collect();
    let jacobi_max = jacobi_check(&|z| reduced_bivector_at(spec, z), spec.k() + 2, &jacobi_samples)?;
    let mut ham_max = 0.0_f64;
    for zeta in samples.iter().take(10) {
        ham_max = ham_max.max(hamiltonian_consistency(spec, zeta)?);
    }

    Ok(HamiltonizationReport {
        system: spec.name.clone(),
        b_is_zero: b_max < 1e-8,
        b_max_normalized: b_max,
        dynamical_gauge_max,
        bivector_rank_max: rank_max,
        casimir_max,
        jacobi_max,
        hamiltonian_consistency_max: ham_max,
        snapshots,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog;
    use crate::momentum::solve_fundamental_matrix;
    use approx::assert_abs_diff_eq;

    fn oscillator_state(y: f64, p_y: f64) -> (crate::system::SystemSpec, State) {
        let entry = catalog::oscillator(Default::default()).unwrap();
        let spec = entry.spec;
        let q = ChartPoint::from_slice(&[0.0, y, 0.0]);
        let ps = DVector::from_column_slice(&[p_y]);
        let st = state_from_momenta(&spec, &q, 0.0, &ps).unwrap();
        (spec, st)
    }

    #[test]
    fn w_curvature_oscillator_hand_value() {
        // At (y = 1, p_Y = 2): p_z d eps(X0, Y) = 1 * (-1) = -1.
        let (spec, st) = oscillator_state(1.0, 2.0);
        let dim = c_frame_dim(&spec);
        let mut u = DVector::zeros(dim);
        let mut w = DVector::zeros(dim);
        u[0] = 1.0;
        w[1] = 1.0;
        let val = w_curvature_pairing(&spec, &st, &u, &w).unwrap();
        assert_abs_diff_eq!(val, -1.0, epsilon = 1e-7);
        // Zero velocity annihilates everything.
        let rest = State { q: st.q.clone(), v: DVector::zeros(3) };
        assert_abs_diff_eq!(
            w_curvature_pairing(&spec, &rest, &u, &w).unwrap(),
            0.0,
            epsilon = 1e-12
        );
    }

    #[test]
    fn b_hgs_semi_basic_and_antisymmetric() {
        let (spec, st) = oscillator_state(0.7, 1.3);
        let dim = c_frame_dim(&spec);
        // Pure fiber arguments vanish.
        let mut u = DVector::zeros(dim);
        let mut w = DVector::zeros(dim);
        u[2] = 1.0;
        w[3] = 1.0;
        assert_eq!(assemble_b_hgs(&spec, &st, &u, &w).unwrap(), 0.0);
        // Antisymmetry on generic base pairs.
        let mut a = DVector::zeros(dim);
        let mut b = DVector::zeros(dim);
        a[0] = 0.8;
        a[1] = -0.3;
        b[0] = 0.1;
        b[1] = 0.9;
        let ab = assemble_b_hgs(&spec, &st, &a, &b).unwrap();
        let ba = assemble_b_hgs(&spec, &st, &b, &a).unwrap();
        assert_abs_diff_eq!(ab + ba, 0.0, epsilon = 1e-9);
    }

    #[test]
    fn snakeboard_b_hgs_vanishes() {
        let entry = catalog::snakeboard(Default::default()).unwrap();
        let spec = &entry.spec;
        for (phi, p0, pt, pp) in [(0.3, 0.4, 1.0, -0.5), (-0.8, -0.2, 0.7, 0.9)] {
            let q = spec.section_at(phi);
            let st = state_from_momenta(spec, &q, p0, &DVector::from_column_slice(&[pt, pp]))
                .unwrap();
            let b = b_hgs_frame_matrix(spec, &st).unwrap();
            let scale = b_hgs_scale(spec, &st).unwrap() + 1e-6;
            assert!(b.amax() / scale < 1e-8, "B = {b}");
        }
    }

    #[test]
    fn omega_canonical_pairings() {
        let (spec, st) = oscillator_state(0.5, 0.8);
        let dim = c_frame_dim(&spec);
        let mut x0 = DVector::zeros(dim);
        x0[0] = 1.0;
        let mut dp0 = DVector::zeros(dim);
        dp0[2] = 1.0;
        // Omega(X0, d/dp0) = +1 under Omega = -dTheta.
        assert_abs_diff_eq!(omega_m_on_c(&spec, &st, &x0, &dp0).unwrap(), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(omega_m_on_c(&spec, &st, &dp0, &x0).unwrap(), -1.0, epsilon = 1e-12);
        // Antisymmetry on random pairs.
        let u = DVector::from_column_slice(&[0.3, -0.4, 0.9, 0.1]);
        let w = DVector::from_column_slice(&[-0.7, 0.2, 0.5, 1.1]);
        let a = omega_m_on_c(&spec, &st, &u, &w).unwrap();
        let b = omega_m_on_c(&spec, &st, &w, &u).unwrap();
        assert_abs_diff_eq!(a + b, 0.0, epsilon = 1e-10);
        // The full gauged matrix is invertible.
        let o = gauged_form_matrix(&spec, &st).unwrap();
        assert!(o.determinant().abs() > 1e-6);
    }

    #[test]
    fn snakeboard_reduced_bivector_matches_reference() {
        let entry = catalog::snakeboard(Default::default()).unwrap();
        let spec = &entry.spec;
        let pi_ref = entry.references.pi_red.as_ref().unwrap();
        for zeta_vals in [[0.4, 0.3, 0.8, -0.5], [-0.7, -0.1, 0.2, 0.9]] {
            let zeta = DVector::from_column_slice(&zeta_vals);
            let pi = reduced_bivector_at(spec, &zeta).unwrap();
            let expect = pi_ref(&zeta);
            assert!((&pi - &expect).amax() < 1e-6, "pi = {pi} expect {expect}");
            assert!(bivector_rank_excess(&pi) < 1e-9);
        }
    }

    #[test]
    fn snakeboard_casimirs_and_jacobi() {
        let entry = catalog::snakeboard(Default::default()).unwrap();
        let spec = &entry.spec;
        let fs = solve_fundamental_matrix(spec, &entry.default_grid).unwrap();
        let samples = reduced_samples(spec, &fs, 25);
        assert!(casimir_check(spec, &fs, &samples).unwrap() < 1e-7);
        let jsamples: Vec<_> = samples.into_iter().take(6).collect();
        let j = jacobi_check(&|z| reduced_bivector_at(spec, z), 4, &jsamples).unwrap();
        assert!(j < 1e-5, "jacobi residual {j}");
    }

    #[test]
    fn jacobi_detector_flags_perturbation() {
        let entry = catalog::snakeboard(Default::default()).unwrap();
        let spec = &entry.spec;
        let perturbed = |z: &DVector<f64>| -> Result<DMatrix<f64>> {
            let mut pi = reduced_bivector_at(spec, z)?;
            // Inject s * p0 into an off-diagonal pair.
            pi[(0, 3)] += z[0] * z[1];
            pi[(3, 0)] -= z[0] * z[1];
            Ok(pi)
        };
        let fs = solve_fundamental_matrix(spec, &entry.default_grid).unwrap();
        let samples: Vec<_> = reduced_samples(spec, &fs, 6);
        let j = jacobi_check(&perturbed, 4, &samples).unwrap();
        assert!(j > 1e-3, "perturbation not detected: {j}");
    }

    #[test]
    fn constant_bivector_is_poisson() {
        let pi0 = DMatrix::from_row_slice(
            3,
            3,
            &[0.0, 1.0, -0.4, -1.0, 0.0, 0.2, 0.4, -0.2, 0.0],
        );
        let f = |_z: &DVector<f64>| -> Result<DMatrix<f64>> { Ok(pi0.clone()) };
        let samples = vec![DVector::from_column_slice(&[0.3, -0.2, 0.9])];
        assert!(jacobi_check(&f, 3, &samples).unwrap() < 1e-12);
    }

    #[test]
    fn snakeboard_gauge_dynamics_and_hamilton_consistency() {
        let entry = catalog::snakeboard(Default::default()).unwrap();
        let spec = &entry.spec;
        let zeta = DVector::from_column_slice(&[0.3, 0.25, 0.7, -0.4]);
        assert!(hamiltonian_consistency(spec, &zeta).unwrap() < 1e-6);
        let st = lift_reduced(spec, &zeta).unwrap();
        assert!(dynamical_gauge_check(spec, &[st]).unwrap() < 1e-8);
    }
}
