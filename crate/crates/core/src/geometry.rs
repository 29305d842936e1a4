//! Chart-level differential geometry: fields, forms, metric pairings and the
//! finite-difference derivative operators everything else is built on.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// A point of the configuration manifold in its global chart.
#[derive(Clone, PartialEq)]
pub struct ChartPoint(pub DVector<f64>);

impl ChartPoint {
    pub fn from_slice(q: &[f64]) -> Self {
        ChartPoint(DVector::from_column_slice(q))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|x| x.is_finite())
    }

    /// Copy with coordinate `j` displaced by `h`.
    pub fn displaced(&self, j: usize, h: f64) -> Self {
        let mut q = self.0.clone();
        q[j] += h;
        ChartPoint(q)
    }

    /// Copy displaced by `h * dir`.
    pub fn displaced_along(&self, dir: &DVector<f64>, h: f64) -> Self {
        ChartPoint(&self.0 + dir * h)
    }
}

impl fmt::Debug for ChartPoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "q{:?}", self.0.as_slice())
    }
}

type VecFn = dyn Fn(&ChartPoint) -> DVector<f64> + Send + Sync;
type MatFn = dyn Fn(&ChartPoint) -> DMatrix<f64> + Send + Sync;
type ScalarFn = dyn Fn(&ChartPoint) -> f64 + Send + Sync;

/// A vector field given by its chart components.
#[derive(Clone)]
pub struct VectorField {
    pub label: String,
    eval: Arc<VecFn>,
    jac: Option<Arc<MatFn>>,
}

impl VectorField {
    pub fn new<F>(label: impl Into<String>, eval: F) -> Self
    where
        F: Fn(&ChartPoint) -> DVector<f64> + Send + Sync + 'static,
    {
        VectorField { label: label.into(), eval: Arc::new(eval), jac: None }
    }

    pub fn with_jacobian<F>(mut self, jac: F) -> Self
    where
        F: Fn(&ChartPoint) -> DMatrix<f64> + Send + Sync + 'static,
    {
        self.jac = Some(Arc::new(jac));
        self
    }

    /// Constant field.
    pub fn constant(label: impl Into<String>, v: DVector<f64>) -> Self {
        let n = v.len();
        let w = v.clone();
        VectorField::new(label, move |_q| w.clone())
            .with_jacobian(move |_q| DMatrix::zeros(n, n))
    }

    /// Coordinate field along axis `i` of an `n`-dimensional chart.
    pub fn coordinate(label: impl Into<String>, n: usize, i: usize) -> Self {
        let mut v = DVector::zeros(n);
        v[i] = 1.0;
        VectorField::constant(label, v)
    }

    pub fn at(&self, q: &ChartPoint) -> DVector<f64> {
        (self.eval)(q)
    }

    pub fn at_checked(&self, q: &ChartPoint) -> Result<DVector<f64>> {
        let v = self.at(q);
        if v.iter().all(|x| x.is_finite()) {
            Ok(v)
        } else {
            Err(Error::NonFiniteEvaluation {
                label: self.label.clone(),
                point: q.0.as_slice().to_vec(),
            })
        }
    }

    pub fn has_jacobian(&self) -> bool {
        self.jac.is_some()
    }

    pub(crate) fn analytic_jacobian(&self, q: &ChartPoint) -> Option<DMatrix<f64>> {
        self.jac.as_ref().map(|j| j(q))
    }
}

impl fmt::Debug for VectorField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "VectorField({})", self.label)
    }
}

/// A one-form given by its chart components (covector per point).
#[derive(Clone)]
pub struct OneForm {
    pub label: String,
    eval: Arc<VecFn>,
}

impl OneForm {
    pub fn new<F>(label: impl Into<String>, eval: F) -> Self
    where
        F: Fn(&ChartPoint) -> DVector<f64> + Send + Sync + 'static,
    {
        OneForm { label: label.into(), eval: Arc::new(eval) }
    }

    pub fn at(&self, q: &ChartPoint) -> DVector<f64> {
        (self.eval)(q)
    }

    /// Pairing with a tangent vector at `q`.
    pub fn pair(&self, q: &ChartPoint, v: &DVector<f64>) -> f64 {
        self.at(q).dot(v)
    }

    pub fn pair_field(&self, q: &ChartPoint, x: &VectorField) -> f64 {
        self.pair(q, &x.at(q))
    }
}

impl fmt::Debug for OneForm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "OneForm({})", self.label)
    }
}

/// Scalar function on the chart.
#[derive(Clone)]
pub struct ScalarField {
    pub label: String,
    eval: Arc<ScalarFn>,
}

impl ScalarField {
    pub fn new<F>(label: impl Into<String>, eval: F) -> Self
    where
        F: Fn(&ChartPoint) -> f64 + Send + Sync + 'static,
    {
        ScalarField { label: label.into(), eval: Arc::new(eval) }
    }

    pub fn zero(label: impl Into<String>) -> Self {
        ScalarField::new(label, |_q| 0.0)
    }

    pub fn at(&self, q: &ChartPoint) -> f64 {
        (self.eval)(q)
    }
}

impl fmt::Debug for ScalarField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ScalarField({})", self.label)
    }
}

/// Kinetic-energy matrix in chart coordinates.
#[derive(Clone)]
pub struct KineticMetric {
    eval: Arc<MatFn>,
}

impl KineticMetric {
    pub fn new<F>(eval: F) -> Self
    where
        F: Fn(&ChartPoint) -> DMatrix<f64> + Send + Sync + 'static,
    {
        KineticMetric { eval: Arc::new(eval) }
    }

    pub fn constant(m: DMatrix<f64>) -> Self {
        KineticMetric::new(move |_q| m.clone())
    }

    pub fn at(&self, q: &ChartPoint) -> DMatrix<f64> {
        (self.eval)(q)
    }

    /// kappa(u, w) for tangent vectors at `q`.
    pub fn pair_vectors(&self, q: &ChartPoint, u: &DVector<f64>, w: &DVector<f64>) -> f64 {
        (self.at(q) * w).dot(u)
    }

    /// kappa-norm of a tangent vector; the absolute value guards the
    /// indefinite test metrics.
    pub fn norm(&self, q: &ChartPoint, u: &DVector<f64>) -> f64 {
        self.pair_vectors(q, u, u).abs().sqrt()
    }
}

impl fmt::Debug for KineticMetric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "KineticMetric")
    }
}

/// Central-difference Jacobian of a vector field, per-coordinate step
/// `eps * max(1, |q_j|)`. Uses the analytic Jacobian when one is attached.
pub fn jacobian_fd(x: &VectorField, q: &ChartPoint, eps: f64) -> Result<DMatrix<f64>> {
    if let Some(j) = x.analytic_jacobian(q) {
        return Ok(j);
    }
    let n = q.dim();
    let mut jac = DMatrix::zeros(n, n);
    for j in 0..n {
        let h = eps * q.0[j].abs().max(1.0);
        let plus = x.at_checked(&q.displaced(j, h))?;
        let minus = x.at_checked(&q.displaced(j, -h))?;
        let col = (plus - minus) / (2.0 * h);
        jac.set_column(j, &col);
    }
    Ok(jac)
}

/// Directional derivative of a scalar function along `dir`, by a central
/// difference on the straight line `q ± h dir`.
pub fn directional_derivative<F>(f: F, q: &ChartPoint, dir: &DVector<f64>, eps: f64) -> f64
where
    F: Fn(&ChartPoint) -> f64,
{
    let scale = dir.amax();
    if scale < 1e-300 {
        return 0.0;
    }
    let h = eps * q.0.amax().max(1.0) / scale;
    (f(&q.displaced_along(dir, h)) - f(&q.displaced_along(dir, -h))) / (2.0 * h)
}

/// Lie bracket [X, Y](q) = DY(q) X(q) - DX(q) Y(q).
pub fn lie_bracket(x: &VectorField, y: &VectorField, q: &ChartPoint, eps: f64) -> Result<DVector<f64>> {
    let xq = x.at_checked(q)?;
    let yq = y.at_checked(q)?;
    let dy = jacobian_fd(y, q, eps)?;
    let dx = jacobian_fd(x, q, eps)?;
    Ok(dy * xq - dx * yq)
}

/// kappa(X, Y)(q).
pub fn metric_pairing(metric: &KineticMetric, x: &VectorField, y: &VectorField, q: &ChartPoint) -> f64 {
    metric.pair_vectors(q, &x.at(q), &y.at(q))
}

/// Exterior derivative of a one-form on a pair of fields:
/// d alpha(X, Y) = X(alpha(Y)) - Y(alpha(X)) - alpha([X, Y]).
pub fn d_oneform_pair(
    alpha: &OneForm,
    x: &VectorField,
    y: &VectorField,
    q: &ChartPoint,
    eps: f64,
) -> Result<f64> {
    let xq = x.at_checked(q)?;
    let yq = y.at_checked(q)?;
    let t1 = directional_derivative(|p| alpha.pair_field(p, y), q, &xq, eps);
    let t2 = directional_derivative(|p| alpha.pair_field(p, x), q, &yq, eps);
    let t3 = alpha.pair(q, &lie_bracket(x, y, q, eps)?);
    let out = t1 - t2 - t3;
    if out.is_finite() {
        Ok(out)
    } else {
        Err(Error::NonFiniteEvaluation {
            label: format!("d{}({},{})", alpha.label, x.label, y.label),
            point: q.0.as_slice().to_vec(),
        })
    }
}

/// Gradient of a scalar function by central differences.
pub fn gradient_fd<F>(f: F, q: &ChartPoint, eps: f64) -> DVector<f64>
where
    F: Fn(&ChartPoint) -> f64,
{
    let n = q.dim();
    let mut g = DVector::zeros(n);
    for j in 0..n {
        let h = eps * q.0[j].abs().max(1.0);
        g[j] = (f(&q.displaced(j, h)) - f(&q.displaced(j, -h))) / (2.0 * h);
    }
    g
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn dvec(v: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(v)
    }

    #[test]
    fn jacobian_of_constant_field_is_zero() {
        let x = VectorField::new("c", |_q| dvec(&[1.0, 2.0, 3.0]));
        let q = ChartPoint::from_slice(&[0.3, -1.0, 2.0]);
        let j = jacobian_fd(&x, &q, 1e-6).unwrap();
        assert!(j.amax() < 1e-12);
    }

    #[test]
    fn jacobian_of_linear_field() {
        // X(q) = (q2, 0, 0) at q = (0, 5, 0): single entry dX1/dq2 = 1.
        let x = VectorField::new("lin", |q: &ChartPoint| dvec(&[q.0[1], 0.0, 0.0]));
        let q = ChartPoint::from_slice(&[0.0, 5.0, 0.0]);
        let j = jacobian_fd(&x, &q, 1e-6).unwrap();
        assert_abs_diff_eq!(j[(0, 1)], 1.0, epsilon = 1e-9);
        assert!(j.iter().enumerate().all(|(k, &v)| k == 3 || v.abs() < 1e-9));
    }

    #[test]
    fn jacobian_of_affine_field_row() {
        // Oscillator Y = (1, 0, y) at y = 0.7: third row gradient (0, 1, 0).
        let y = VectorField::new("Y", |q: &ChartPoint| dvec(&[1.0, 0.0, q.0[1]]));
        let q = ChartPoint::from_slice(&[0.0, 0.7, 0.0]);
        let j = jacobian_fd(&y, &q, 1e-6).unwrap();
        assert_abs_diff_eq!(j[(2, 1)], 1.0, epsilon = 1e-9);
        assert!(j[(0, 0)].abs() + j[(0, 1)].abs() + j[(1, 2)].abs() < 1e-10);
    }

    #[test]
    fn bracket_with_itself_vanishes() {
        let y = VectorField::new("Y", |q: &ChartPoint| dvec(&[1.0, 0.0, q.0[1]]));
        let q = ChartPoint::from_slice(&[0.4, -0.3, 1.1]);
        let b = lie_bracket(&y, &y, &q, 1e-6).unwrap();
        assert!(b.amax() < 1e-12);
    }

    #[test]
    fn oscillator_bracket_hand_value() {
        // [Y, d/dy] = -(0, 0, 1) for Y = dx + y dz.
        let y = VectorField::new("Y", |q: &ChartPoint| dvec(&[1.0, 0.0, q.0[1]]));
        let dy = VectorField::coordinate("X0", 3, 1);
        let q = ChartPoint::from_slice(&[0.2, 0.9, -0.5]);
        let b = lie_bracket(&y, &dy, &q, 1e-6).unwrap();
        assert_abs_diff_eq!(b[2], -1.0, epsilon = 1e-9);
        assert!(b[0].abs() + b[1].abs() < 1e-9);
    }

    #[test]
    fn nonfinite_evaluation_is_reported() {
        let x = VectorField::new("bad", |q: &ChartPoint| dvec(&[1.0 / q.0[0], 0.0]));
        let q = ChartPoint::from_slice(&[0.0, 1.0]);
        assert!(matches!(
            jacobian_fd(&x, &q, 1e-6),
            Err(Error::NonFiniteEvaluation { .. })
        ));
    }

    #[test]
    fn metric_pairing_oscillator_values() {
        let metric = KineticMetric::constant(DMatrix::identity(3, 3));
        let y = VectorField::new("Y", |q: &ChartPoint| dvec(&[1.0, 0.0, q.0[1]]));
        let x0 = VectorField::coordinate("X0", 3, 1);
        let q = ChartPoint::from_slice(&[0.0, 1.0, 0.0]);
        assert_abs_diff_eq!(metric_pairing(&metric, &y, &y, &q), 2.0, epsilon = 1e-14);
        assert_abs_diff_eq!(metric_pairing(&metric, &x0, &y, &q), 0.0, epsilon = 1e-14);
    }

    #[test]
    fn d_of_constant_coframe_on_constant_fields_vanishes() {
        let alpha = OneForm::new("dx", |_q| dvec(&[1.0, 0.0, 0.0]));
        let x = VectorField::constant("a", dvec(&[0.3, 1.0, -2.0]));
        let y = VectorField::constant("b", dvec(&[1.0, 0.5, 0.25]));
        let q = ChartPoint::from_slice(&[0.1, 0.2, 0.3]);
        assert_abs_diff_eq!(d_oneform_pair(&alpha, &x, &y, &q, 1e-6).unwrap(), 0.0, epsilon = 1e-10);
    }

    #[test]
    fn d_oscillator_constraint_hand_value() {
        // eps = dz - y dx, d eps = dx ^ dy, d eps(d/dy, Y) = -1 everywhere.
        let eps_form = OneForm::new("eps", |q: &ChartPoint| dvec(&[-q.0[1], 0.0, 1.0]));
        let dy = VectorField::coordinate("X0", 3, 1);
        let y = VectorField::new("Y", |q: &ChartPoint| dvec(&[1.0, 0.0, q.0[1]]));
        for qv in [[0.0, 0.0, 0.0], [1.0, 2.0, -0.3], [-0.7, 0.4, 0.9]] {
            let q = ChartPoint::from_slice(&qv);
            assert_abs_diff_eq!(
                d_oneform_pair(&eps_form, &dy, &y, &q, 1e-6).unwrap(),
                -1.0,
                epsilon = 1e-8
            );
        }
    }
}
