//! The system description consumed by every other module: metric, potential,
//! constraint coframe, adapted frame fields and the shape chart.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::geometry::{
    directional_derivative, jacobian_fd, ChartPoint, KineticMetric, OneForm, ScalarField,
    VectorField,
};
use crate::linalg;
use crate::DEFAULT_FD_EPS;

type GuardFn = dyn Fn(&ChartPoint) -> bool + Send + Sync;
type SectionFn = dyn Fn(f64) -> ChartPoint + Send + Sync;

/// Complete numeric description of a nonholonomic system with symmetry in an
/// adapted frame `{X0, Y_1..Y_k, Z_1..Z_nw}`.
#[derive(Clone)]
pub struct SystemSpec {
    pub name: String,
    pub dim_q: usize,
    pub metric: KineticMetric,
    pub potential: ScalarField,
    /// Constraint one-forms `eps^a`; their joint kernel is D.
    pub constraint_coframe: Vec<OneForm>,
    /// Generator of the horizontal line bundle H.
    pub x0: VectorField,
    /// Basis `Y_i` of S = D intersect V.
    pub s_basis: Vec<VectorField>,
    /// Basis `Z_a` of the vertical complement W.
    pub w_basis: Vec<VectorField>,
    /// Infinitesimal generators of the symmetry action (span V).
    pub vertical_generators: Vec<VectorField>,
    /// The invariant shape coordinate (the quotient is one-dimensional).
    pub shape_fn: ScalarField,
    /// A section of the shape coordinate: shape_fn(shape_section(s)) = s.
    pub shape_section: Arc<SectionFn>,
    /// Excludes singular strata; sampling and integration stay inside.
    pub domain_guard: Arc<GuardFn>,
    /// Box used by deterministic sampling (chart coordinates).
    pub sample_box: Vec<(f64, f64)>,
    /// Relative step for finite differences.
    pub fd_eps: f64,
}

impl fmt::Debug for SystemSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "SystemSpec({}, n={}, k={}, nw={})", self.name, self.dim_q, self.k(), self.n_w())
    }
}

/// Frame matrix and dual coframe at a point.
pub struct Frame {
    /// Columns `[X0 | Y_1..Y_k | Z_1..Z_nw]`.
    pub e: DMatrix<f64>,
    /// Rows `[X^0; Y^1..Y^k; Z^1..Z^nw]`.
    pub e_inv: DMatrix<f64>,
    pub cond: f64,
}

impl Frame {
    /// Coefficients of `v` in the frame.
    pub fn coefficients(&self, v: &DVector<f64>) -> DVector<f64> {
        &self.e_inv * v
    }

    /// Row `i` of the dual coframe.
    pub fn dual_row(&self, i: usize) -> DVector<f64> {
        self.e_inv.row(i).transpose()
    }
}

pub const FRAME_COND_LIMIT: f64 = 1e12;

impl SystemSpec {
    /// Rank of S.
    pub fn k(&self) -> usize {
        self.s_basis.len()
    }

    /// Rank of the vertical complement W (= number of constraints).
    pub fn n_w(&self) -> usize {
        self.w_basis.len()
    }

    pub fn in_domain(&self, q: &ChartPoint) -> bool {
        q.dim() == self.dim_q && q.is_finite() && (self.domain_guard)(q)
    }

    pub fn section_at(&self, s: f64) -> ChartPoint {
        (self.shape_section)(s)
    }

    pub fn with_fd_eps(mut self, eps: f64) -> Self {
        self.fd_eps = eps;
        self
    }

    /// Assemble the adapted frame `E(q)` and its dual by a pointwise solve.
    pub fn frame(&self, q: &ChartPoint) -> Result<Frame> {
        let n = self.dim_q;
        let mut e = DMatrix::zeros(n, n);
        e.set_column(0, &self.x0.at_checked(q)?);
        for (i, y) in self.s_basis.iter().enumerate() {
            e.set_column(1 + i, &y.at_checked(q)?);
        }
        for (a, z) in self.w_basis.iter().enumerate() {
            e.set_column(1 + self.k() + a, &z.at_checked(q)?);
        }
        let cond = linalg::cond_2(&e);
        if !cond.is_finite() || cond > FRAME_COND_LIMIT {
            return Err(Error::FrameSingular { cond });
        }
        let e_inv = e.clone().try_inverse().ok_or(Error::FrameSingular { cond })?;
        Ok(Frame { e, e_inv, cond })
    }

    /// Projection of a velocity onto D along W (removes the `Z_a` components).
    pub fn project_to_d(&self, q: &ChartPoint, v: &DVector<f64>) -> Result<DVector<f64>> {
        let frame = self.frame(q)?;
        let mut c = frame.coefficients(v);
        for a in 0..self.n_w() {
            c[1 + self.k() + a] = 0.0;
        }
        Ok(&frame.e * c)
    }

    /// Velocity coefficients `(v0, v^1..v^k)` in the adapted frame.
    pub fn d_coefficients(&self, q: &ChartPoint, v: &DVector<f64>) -> Result<DVector<f64>> {
        let frame = self.frame(q)?;
        let c = frame.coefficients(v);
        Ok(c.rows(0, 1 + self.k()).clone_owned())
    }

    /// Max constraint pairing `max_a |eps^a(v)|`.
    pub fn constraint_residual(&self, q: &ChartPoint, v: &DVector<f64>) -> f64 {
        self.constraint_coframe
            .iter()
            .map(|eps| eps.pair(q, v).abs())
            .fold(0.0, f64::max)
    }

    /// dshape(X0) at `q` (the factor converting X0-flow to shape velocity).
    pub fn shape_rate(&self, q: &ChartPoint) -> f64 {
        let x0q = self.x0.at(q);
        directional_derivative(|p| self.shape_fn.at(p), q, &x0q, self.fd_eps)
    }

    /// Potential gradient by central differences.
    pub fn potential_gradient(&self, q: &ChartPoint) -> DVector<f64> {
        crate::geometry::gradient_fd(|p| self.potential.at(p), q, self.fd_eps)
    }

    /// Kinetic-plus-potential energy of a state.
    pub fn energy(&self, q: &ChartPoint, v: &DVector<f64>) -> f64 {
        0.5 * self.metric.pair_vectors(q, v, v) + self.potential.at(q)
    }

    /// Structural validation at the given points. Checks frame duality,
    /// D-membership of the frame, S-orthogonality of X0, metric symmetry and
    /// positivity on D, consistency of any analytic Jacobians, and the shape
    /// section.
    pub fn validate(&self, points: &[ChartPoint]) -> Result<()> {
        for q in points {
            if !self.in_domain(q) {
                continue;
            }
            let frame = self.frame(q)?;
            let dual_residual = (&frame.e * &frame.e_inv - DMatrix::identity(self.dim_q, self.dim_q)).amax();
            if dual_residual > 1e-10 {
                return Err(Error::BadParameter(format!(
                    "{}: frame duality residual {dual_residual:.3e} at {q:?}",
                    self.name
                )));
            }

            for eps in &self.constraint_coframe {
                let on_x0 = eps.pair_field(q, &self.x0).abs();
                let on_s: f64 = self
                    .s_basis
                    .iter()
                    .map(|y| eps.pair_field(q, y).abs())
                    .fold(0.0, f64::max);
                if on_x0.max(on_s) > 1e-9 {
                    return Err(Error::BadParameter(format!(
                        "{}: constraint {} does not annihilate the D-frame at {q:?} ({:.3e})",
                        self.name,
                        eps.label,
                        on_x0.max(on_s)
                    )));
                }
            }

            let kappa = self.metric.at(q);
            let asym = (&kappa - kappa.transpose()).amax() / kappa.amax().max(1.0);
            if asym > 1e-12 {
                return Err(Error::BadParameter(format!(
                    "{}: metric not symmetric ({asym:.3e}) at {q:?}",
                    self.name
                )));
            }

            // kappa restricted to D must be positive definite (the ambient
            // matrix may be indefinite for the synthetic counterexamples).
            let d_cols = 1 + self.k();
            let d_basis = frame.e.columns(0, d_cols).clone_owned();
            let gram = d_basis.transpose() * &kappa * &d_basis;
            let eig = gram.symmetric_eigen();
            let min = eig.eigenvalues.min();
            let max = eig.eigenvalues.max();
            if !(min > 1e-12 * max.max(1.0)) {
                return Err(Error::MetricDegenerateOnS { point: q.0.as_slice().to_vec() });
            }

            let x0q = self.x0.at(q);
            let x0n = self.metric.norm(q, &x0q).max(1e-300);
            for y in &self.s_basis {
                let yq = y.at(q);
                let yn = self.metric.norm(q, &yq).max(1e-300);
                let c = self.metric.pair_vectors(q, &x0q, &yq).abs() / (x0n * yn);
                if c > 1e-8 {
                    return Err(Error::BadParameter(format!(
                        "{}: X0 not S-orthogonal at {q:?} ({c:.3e})",
                        self.name
                    )));
                }
            }

            for field in std::iter::once(&self.x0).chain(&self.s_basis).chain(&self.w_basis) {
                if field.has_jacobian() {
                    let ana = field.analytic_jacobian(q).unwrap();
                    let fd = {
                        let mut stripped = field.clone();
                        stripped = VectorField::new(stripped.label.clone(), {
                            let f = field.clone();
                            move |p: &ChartPoint| f.at(p)
                        });
                        jacobian_fd(&stripped, q, self.fd_eps)?
                    };
                    if (&ana - &fd).amax() > 1e-4 * ana.amax().max(1.0) {
                        return Err(Error::BadParameter(format!(
                            "{}: analytic Jacobian of {} disagrees with finite differences",
                            self.name, field.label
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    /// Check shape_fn(shape_section(s)) = s over a grid of shape values.
    pub fn validate_shape_chart(&self, s_values: &[f64]) -> Result<()> {
        for &s in s_values {
            let q = self.section_at(s);
            if !self.in_domain(&q) {
                return Err(Error::BadParameter(format!(
                    "{}: section leaves the domain at s = {s}",
                    self.name
                )));
            }
            let back = self.shape_fn.at(&q);
            if (back - s).abs() > 1e-9 * s.abs().max(1.0) {
                return Err(Error::BadParameter(format!(
                    "{}: shape_fn(section({s})) = {back}",
                    self.name
                )));
            }
        }
        Ok(())
    }
}

/// Builder with defaults for the optional pieces.
pub struct SystemSpecBuilder {
    spec: SystemSpec,
}

impl SystemSpecBuilder {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        name: impl Into<String>,
        dim_q: usize,
        metric: KineticMetric,
        potential: ScalarField,
        constraint_coframe: Vec<OneForm>,
        x0: VectorField,
        s_basis: Vec<VectorField>,
        w_basis: Vec<VectorField>,
    ) -> Self {
        let spec = SystemSpec {
            name: name.into(),
            dim_q,
            metric,
            potential,
            constraint_coframe,
            x0,
            s_basis,
            w_basis,
            vertical_generators: Vec::new(),
            shape_fn: ScalarField::zero("shape"),
            shape_section: Arc::new(move |_s| ChartPoint(DVector::zeros(dim_q))),
            domain_guard: Arc::new(|_q| true),
            sample_box: vec![(-1.0, 1.0); dim_q],
            fd_eps: DEFAULT_FD_EPS,
        };
        SystemSpecBuilder { spec }
    }

    pub fn vertical_generators(mut self, gens: Vec<VectorField>) -> Self {
        self.spec.vertical_generators = gens;
        self
    }

    pub fn shape(mut self, shape_fn: ScalarField, section: impl Fn(f64) -> ChartPoint + Send + Sync + 'static) -> Self {
        self.spec.shape_fn = shape_fn;
        self.spec.shape_section = Arc::new(section);
        self
    }

    pub fn domain_guard(mut self, guard: impl Fn(&ChartPoint) -> bool + Send + Sync + 'static) -> Self {
        self.spec.domain_guard = Arc::new(guard);
        self
    }

    pub fn sample_box(mut self, bounds: Vec<(f64, f64)>) -> Self {
        self.spec.sample_box = bounds;
        self
    }

    pub fn build(self) -> SystemSpec {
        self.spec
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog;
    use crate::sampling;
    use approx::assert_abs_diff_eq;

    #[test]
    fn oscillator_frame_duality_and_projection() {
        let entry = catalog::oscillator(Default::default()).unwrap();
        let spec = &entry.spec;
        let (points, _) = sampling::domain_samples(spec, 50);
        spec.validate(&points).unwrap();

        let q = ChartPoint::from_slice(&[0.3, 1.0, -0.2]);
        // v already in D is unchanged.
        let v_d = spec.x0.at(&q);
        let p = spec.project_to_d(&q, &v_d).unwrap();
        assert!((p - &v_d).amax() < 1e-12);
        // v along Z projects to zero.
        let v_w = spec.w_basis[0].at(&q);
        let p = spec.project_to_d(&q, &v_w).unwrap();
        assert!(p.amax() < 1e-12);
        // Generic vector lands in the kernel of every constraint.
        let v = DVector::from_column_slice(&[1.0, 0.0, 0.0]);
        let p = spec.project_to_d(&q, &v).unwrap();
        assert!(spec.constraint_residual(&q, &p) < 1e-12);
        // Idempotence.
        let pp = spec.project_to_d(&q, &p).unwrap();
        assert!((&pp - &p).amax() < 1e-12);
    }

    #[test]
    fn oscillator_shape_chart_roundtrip() {
        let entry = catalog::oscillator(Default::default()).unwrap();
        let s_values: Vec<f64> = (0..21).map(|i| -2.0 + 0.2 * i as f64).collect();
        entry.spec.validate_shape_chart(&s_values).unwrap();
        assert_abs_diff_eq!(entry.spec.shape_rate(&entry.spec.section_at(0.4)), 1.0, epsilon = 1e-9);
    }
}
