//! Construction of the conserved momenta: the S-restricted metric, the
//! coefficient matrices N and R, the fundamental matrix of the linear
//! momentum ODE along the shape coordinate, the full quadratic residual of
//! the momentum equation, and a constrained solver for systems violating
//! the sufficient conditions.

use std::io::Write;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::geometry::{lie_bracket, ChartPoint};
use crate::linalg;
use crate::sampling;
use crate::system::SystemSpec;

/// Discretization of the shape coordinate with a normalization node.
#[derive(Clone, Debug)]
pub struct ShapeGrid {
    pub s_values: Vec<f64>,
    pub base_index: usize,
}

impl ShapeGrid {
    pub fn uniform(lo: f64, hi: f64, n: usize, base: f64) -> Result<Self> {
        if !(n >= 2 && lo < hi && lo.is_finite() && hi.is_finite()) {
            return Err(Error::BadParameter(format!("bad grid {lo}:{hi}:{n}")));
        }
        let step = (hi - lo) / (n - 1) as f64;
        let s_values: Vec<f64> = (0..n).map(|i| lo + step * i as f64).collect();
        let base_index = s_values
            .iter()
            .enumerate()
            .min_by(|a, b| (a.1 - base).abs().partial_cmp(&(b.1 - base).abs()).unwrap())
            .map(|(i, _)| i)
            .unwrap();
        if (s_values[base_index] - base).abs() > 0.51 * step {
            return Err(Error::BadParameter(format!("base {base} outside grid {lo}:{hi}")));
        }
        Ok(ShapeGrid { s_values, base_index })
    }

    pub fn base(&self) -> f64 {
        self.s_values[self.base_index]
    }

    pub fn len(&self) -> usize {
        self.s_values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.s_values.is_empty()
    }
}

/// kappa restricted to S: entries kappa(Y_i, Y_j). Errors when numerically
/// degenerate.
pub fn kappa_s_matrix(spec: &SystemSpec, q: &ChartPoint) -> Result<DMatrix<f64>> {
    let k = spec.k();
    let kappa = spec.metric.at(q);
    let ys: Vec<DVector<f64>> = spec
        .s_basis
        .iter()
        .map(|y| y.at_checked(q))
        .collect::<Result<_>>()?;
    let mut m = DMatrix::zeros(k, k);
    for i in 0..k {
        for j in i..k {
            let v = (&kappa * &ys[j]).dot(&ys[i]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
    let eig = m.clone().symmetric_eigen();
    let min = eig.eigenvalues.min();
    let max = eig.eigenvalues.max();
    if !(min > 1e-12 * max.max(1e-300)) {
        return Err(Error::MetricDegenerateOnS { point: q.0.as_slice().to_vec() });
    }
    Ok(m)
}

/// Brackets used by the momentum machinery at a point.
struct SBrackets {
    /// yy[i][l] = [Y_i, Y_l]
    yy: Vec<Vec<DVector<f64>>>,
    /// yx0[j] = [Y_j, X0]
    yx0: Vec<DVector<f64>>,
}

fn s_brackets(spec: &SystemSpec, q: &ChartPoint) -> Result<SBrackets> {
    let k = spec.k();
    let n = spec.dim_q;
    let mut yy = vec![vec![DVector::zeros(n); k]; k];
    for i in 0..k {
        for l in (i + 1)..k {
            let b = lie_bracket(&spec.s_basis[i], &spec.s_basis[l], q, spec.fd_eps)?;
            yy[i][l] = b.clone();
            yy[l][i] = -b;
        }
    }
    let yx0 = spec
        .s_basis
        .iter()
        .map(|y| lie_bracket(y, &spec.x0, q, spec.fd_eps))
        .collect::<Result<_>>()?;
    Ok(SBrackets { yy, yx0 })
}

/// N_{lj} = kappa(Y_l, [Y_j, X0]) + kappa(X0, [Y_j, Y_l]).
pub fn n_matrix(spec: &SystemSpec, q: &ChartPoint) -> Result<DMatrix<f64>> {
    let k = spec.k();
    let kappa = spec.metric.at(q);
    let br = s_brackets(spec, q)?;
    let x0q = spec.x0.at_checked(q)?;
    let ys: Vec<DVector<f64>> = spec.s_basis.iter().map(|y| y.at(q)).collect();
    let mut n_mat = DMatrix::zeros(k, k);
    for l in 0..k {
        for j in 0..k {
            n_mat[(l, j)] =
                (&kappa * &br.yx0[j]).dot(&ys[l]) + (&kappa * &br.yy[j][l]).dot(&x0q);
        }
    }
    Ok(n_mat)
}

/// R = [kappa|_S]^{-1} N.
pub fn r_matrix(spec: &SystemSpec, q: &ChartPoint) -> Result<DMatrix<f64>> {
    let ks = kappa_s_matrix(spec, q)?;
    let n = n_matrix(spec, q)?;
    ks.clone()
        .cholesky()
        .map(|ch| ch.solve(&n))
        .ok_or(Error::MetricDegenerateOnS { point: q.0.as_slice().to_vec() })
}

/// R together with its constituents, for inspection and reference tests.
pub struct RMatrixData {
    pub kappa_s: DMatrix<f64>,
    pub n: DMatrix<f64>,
    pub r: DMatrix<f64>,
}

pub fn r_data(spec: &SystemSpec, q: &ChartPoint) -> Result<RMatrixData> {
    let kappa_s = kappa_s_matrix(spec, q)?;
    let n = n_matrix(spec, q)?;
    let r = kappa_s
        .clone()
        .cholesky()
        .map(|ch| ch.solve(&n))
        .ok_or(Error::MetricDegenerateOnS { point: q.0.as_slice().to_vec() })?;
    Ok(RMatrixData { kappa_s, n, r })
}

/// Node data with cubic Hermite interpolation between nodes.
#[derive(Clone)]
struct GridInterp {
    s: Vec<f64>,
    vals: Vec<DMatrix<f64>>,
    derivs: Vec<DMatrix<f64>>,
}

impl GridInterp {
    fn locate(&self, s: f64) -> usize {
        // Interval index i with s between nodes i and i+1 (clamped).
        match self.s.binary_search_by(|x| x.partial_cmp(&s).unwrap()) {
            Ok(i) => i.min(self.s.len() - 2),
            Err(0) => 0,
            Err(i) if i >= self.s.len() => self.s.len() - 2,
            Err(i) => i - 1,
        }
    }

    fn value_at(&self, s: f64) -> DMatrix<f64> {
        let i = self.locate(s);
        let (s0, s1) = (self.s[i], self.s[i + 1]);
        let h = s1 - s0;
        let t = (s - s0) / h;
        let (t2, t3) = (t * t, t * t * t);
        let h00 = 2.0 * t3 - 3.0 * t2 + 1.0;
        let h10 = t3 - 2.0 * t2 + t;
        let h01 = -2.0 * t3 + 3.0 * t2;
        let h11 = t3 - t2;
        &self.vals[i] * h00
            + &self.derivs[i] * (h10 * h)
            + &self.vals[i + 1] * h01
            + &self.derivs[i + 1] * (h11 * h)
    }

    /// Derivative from node values only (5-point Lagrange stencil); stays
    /// independent of the ODE right-hand side stored in `derivs`.
    fn derivative_fd_at(&self, s: f64) -> DMatrix<f64> {
        let n = self.s.len();
        let width = 5.min(n);
        let i = self.locate(s);
        let lo = i.saturating_sub(width / 2).min(n - width);
        let xs = &self.s[lo..lo + width];
        let mut out = DMatrix::zeros(self.vals[0].nrows(), self.vals[0].ncols());
        for (j, val) in self.vals[lo..lo + width].iter().enumerate() {
            let mut lj = 0.0;
            for m in 0..width {
                if m == j {
                    continue;
                }
                let mut term = 1.0;
                for r in 0..width {
                    if r == j || r == m {
                        continue;
                    }
                    term *= (s - xs[r]) / (xs[j] - xs[r]);
                }
                lj += term / (xs[j] - xs[m]);
            }
            out += val * lj;
        }
        out
    }
}

/// Fundamental matrix F(s) of the momentum ODE, F(base) = identity.
#[derive(Clone)]
pub struct FundamentalSolution {
    pub grid: ShapeGrid,
    pub k: usize,
    interp: GridInterp,
}

impl FundamentalSolution {
    pub fn node(&self, i: usize) -> &DMatrix<f64> {
        &self.interp.vals[i]
    }

    pub fn value_at(&self, s: f64) -> DMatrix<f64> {
        self.interp.value_at(s)
    }

    /// d/ds F from node values (independent of the stored ODE slope).
    pub fn derivative_fd_at(&self, s: f64) -> DMatrix<f64> {
        self.interp.derivative_fd_at(s)
    }
}

/// R(sigma(s)) / g(s) with g = dshape(X0) at the section point.
pub fn rtilde_at(spec: &SystemSpec, s: f64) -> Result<DMatrix<f64>> {
    let q = spec.section_at(s);
    if !spec.in_domain(&q) {
        return Err(Error::BadParameter(format!(
            "{}: section leaves the domain at s = {s}",
            spec.name
        )));
    }
    let g = spec.shape_rate(&q);
    if g.abs() < 1e-10 {
        return Err(Error::ShapeDegenerate { s, value: g.abs() });
    }
    Ok(r_matrix(spec, &q)? / g)
}

const ODE_LOCAL_TOL: f64 = 1e-10;
const MAX_SUBSTEP_DOUBLINGS: u32 = 16;

fn rk4_const_steps<F>(rhs: &F, s0: f64, s1: f64, y0: &DMatrix<f64>, m: usize) -> Result<DMatrix<f64>>
where
    F: Fn(f64, &DMatrix<f64>) -> Result<DMatrix<f64>>,
{
    let h = (s1 - s0) / m as f64;
    let mut y = y0.clone();
    let mut s = s0;
    for _ in 0..m {
        let k1 = rhs(s, &y)?;
        let k2 = rhs(s + 0.5 * h, &(&y + &k1 * (0.5 * h)))?;
        let k3 = rhs(s + 0.5 * h, &(&y + &k2 * (0.5 * h)))?;
        let k4 = rhs(s + h, &(&y + &k3 * h))?;
        y += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
        s += h;
    }
    Ok(y)
}

/// One grid interval with step-doubled substeps until the Richardson local
/// error estimate meets `ODE_LOCAL_TOL`.
fn integrate_interval<F>(rhs: &F, s0: f64, s1: f64, y0: &DMatrix<f64>) -> Result<DMatrix<f64>>
where
    F: Fn(f64, &DMatrix<f64>) -> Result<DMatrix<f64>>,
{
    let mut m = 1usize;
    for _ in 0..=MAX_SUBSTEP_DOUBLINGS {
        let coarse = rk4_const_steps(rhs, s0, s1, y0, m)?;
        let fine = rk4_const_steps(rhs, s0, s1, y0, 2 * m)?;
        let err = (&fine - &coarse).amax() / 15.0;
        if err < ODE_LOCAL_TOL * fine.amax().max(1.0) {
            return Ok(fine);
        }
        m *= 2;
    }
    Err(Error::StepFailure { s: s1, target: ODE_LOCAL_TOL })
}

/// Integrate the matrix ODE F' = Rtilde(s) F over the grid with F = identity
/// at the base node.
pub fn solve_fundamental_matrix(spec: &SystemSpec, grid: &ShapeGrid) -> Result<FundamentalSolution> {
    let k = spec.k();
    let rhs = |s: f64, f: &DMatrix<f64>| -> Result<DMatrix<f64>> { Ok(rtilde_at(spec, s)? * f) };
    let n_nodes = grid.len();
    let mut vals = vec![DMatrix::zeros(k, k); n_nodes];
    vals[grid.base_index] = DMatrix::identity(k, k);
    for i in grid.base_index..n_nodes - 1 {
        let next = integrate_interval(&rhs, grid.s_values[i], grid.s_values[i + 1], &vals[i])?;
        vals[i + 1] = next;
    }
    for i in (0..grid.base_index).rev() {
        let next = integrate_interval(&rhs, grid.s_values[i + 1], grid.s_values[i], &vals[i + 1])?;
        vals[i] = next;
    }
    let mut derivs = Vec::with_capacity(n_nodes);
    for (i, s) in grid.s_values.iter().enumerate() {
        derivs.push(rtilde_at(spec, *s)? * &vals[i]);
    }
    for (i, f) in vals.iter().enumerate() {
        let det = f.determinant();
        if !(det.is_finite() && det.abs() > 1e-300) {
            return Err(Error::StepFailure { s: grid.s_values[i], target: ODE_LOCAL_TOL });
        }
    }
    Ok(FundamentalSolution {
        grid: grid.clone(),
        k,
        interp: GridInterp { s: grid.s_values.clone(), vals, derivs },
    })
}

/// A conserved momentum J(q, v) = sum_i f_i(q) kappa(Y_i(q), v) with the
/// coefficients depending on q only through the shape coordinate.
#[derive(Clone)]
pub struct GaugeMomentum {
    pub label: String,
    coeffs: Arc<dyn Fn(&ChartPoint) -> DVector<f64> + Send + Sync>,
}

impl GaugeMomentum {
    pub fn new<F>(label: impl Into<String>, coeffs: F) -> Self
    where
        F: Fn(&ChartPoint) -> DVector<f64> + Send + Sync + 'static,
    {
        GaugeMomentum { label: label.into(), coeffs: Arc::new(coeffs) }
    }

    pub fn coeffs_at(&self, q: &ChartPoint) -> DVector<f64> {
        (self.coeffs)(q)
    }

    pub fn eval(&self, spec: &SystemSpec, q: &ChartPoint, v: &DVector<f64>) -> f64 {
        let f = self.coeffs_at(q);
        let kappa = spec.metric.at(q);
        spec.s_basis
            .iter()
            .enumerate()
            .map(|(i, y)| f[i] * (&kappa * v).dot(&y.at(q)))
            .sum()
    }
}

/// Momenta from the columns of the fundamental matrix.
pub fn gauge_momenta_from_solution(spec: &SystemSpec, fs: &FundamentalSolution) -> Vec<GaugeMomentum> {
    (0..fs.k)
        .map(|l| {
            let fs = fs.clone();
            let shape = spec.shape_fn.clone();
            GaugeMomentum::new(format!("J{}", l + 1), move |q: &ChartPoint| {
                fs.value_at(shape.at(q)).column(l).clone_owned()
            })
        })
        .collect()
}

/// Full quadratic residual of the coordinate momentum equation at one
/// (q, v0, v): callers supply the coefficients and their X0-derivative.
pub fn momentum_equation_residual(
    spec: &SystemSpec,
    f: &DVector<f64>,
    x0f: &DVector<f64>,
    q: &ChartPoint,
    v0: f64,
    v: &DVector<f64>,
) -> Result<f64> {
    let k = spec.k();
    let kappa = spec.metric.at(q);
    let br = s_brackets(spec, q)?;
    let x0q = spec.x0.at_checked(q)?;
    let ys: Vec<DVector<f64>> = spec.s_basis.iter().map(|y| y.at(q)).collect();
    let kappa_s = {
        let mut m = DMatrix::zeros(k, k);
        for i in 0..k {
            for j in 0..k {
                m[(i, j)] = (&kappa * &ys[j]).dot(&ys[i]);
            }
        }
        m
    };

    let mut term_s = 0.0;
    for l in 0..k {
        for j in 0..k {
            let mut c = 0.0;
            for i in 0..k {
                c += f[i] * (&kappa * &br.yy[i][l]).dot(&ys[j]);
            }
            term_s += v[l] * v[j] * c;
        }
    }

    let mut term_h = 0.0;
    for i in 0..k {
        let b = lie_bracket(&spec.s_basis[i], &spec.x0, q, spec.fd_eps)?;
        term_h += f[i] * (&kappa * &b).dot(&x0q);
    }
    term_h *= v0 * v0;

    let mut term_m = 0.0;
    for j in 0..k {
        let mut p0j = 0.0;
        for i in 0..k {
            p0j += f[i]
                * ((&kappa * &br.yx0[i]).dot(&ys[j]) + (&kappa * &br.yy[i][j]).dot(&x0q));
        }
        for i in 0..k {
            p0j -= kappa_s[(i, j)] * x0f[i];
        }
        term_m += v0 * v[j] * p0j;
    }

    Ok(term_s + term_h + term_m)
}

/// Scale-free version of the residual used by certificates.
pub fn normalized_momentum_residual(
    spec: &SystemSpec,
    f: &DVector<f64>,
    x0f: &DVector<f64>,
    q: &ChartPoint,
    v0: f64,
    v: &DVector<f64>,
) -> Result<f64> {
    let raw = momentum_equation_residual(spec, f, x0f, q, v0, v)?;
    let ks = kappa_s_matrix(spec, q)?;
    let x0q = spec.x0.at(q);
    let scale = (ks.amax().max(spec.metric.pair_vectors(q, &x0q, &x0q).abs()))
        * (v0 * v0 + v.norm_squared()).max(1e-300)
        * f.amax().max(1.0);
    Ok(raw.abs() / scale.max(1e-300))
}

/// Algebraic constraint rows imposed on constant-direction coefficients:
/// the symmetrized S-bracket conditions (skipped for k = 1) and the
/// horizontal condition. Returns the rows and their natural magnitude.
fn constraint_rows(spec: &SystemSpec, q: &ChartPoint) -> Result<(DMatrix<f64>, f64)> {
    let k = spec.k();
    let kappa = spec.metric.at(q);
    let br = s_brackets(spec, q)?;
    let x0q = spec.x0.at_checked(q)?;
    let ys: Vec<DVector<f64>> = spec.s_basis.iter().map(|y| y.at(q)).collect();
    let y_norm: Vec<f64> = ys.iter().map(|y| spec.metric.norm(q, y)).collect();

    let mut rows: Vec<DVector<f64>> = Vec::new();
    let mut scale: f64 = 0.0;
    if k > 1 {
        for j in 0..k {
            for l in j..k {
                let mut row = DVector::zeros(k);
                for i in 0..k {
                    row[i] = (&kappa * &br.yy[i][l]).dot(&ys[j])
                        + (&kappa * &br.yy[i][j]).dot(&ys[l]);
                    scale = scale.max(
                        y_norm[j] * spec.metric.norm(q, &br.yy[i][l])
                            + y_norm[l] * spec.metric.norm(q, &br.yy[i][j]),
                    );
                }
                rows.push(row);
            }
        }
    }
    let mut row = DVector::zeros(k);
    let x0n = spec.metric.norm(q, &x0q);
    for i in 0..k {
        let b = lie_bracket(&spec.s_basis[i], &spec.x0, q, spec.fd_eps)?;
        row[i] = -(&kappa * &b).dot(&x0q);
        scale = scale.max(x0n * spec.metric.norm(q, &b));
    }
    rows.push(row);

    let mut m = DMatrix::zeros(rows.len(), k);
    for (i, r) in rows.iter().enumerate() {
        m.set_row(i, &r.transpose());
    }
    Ok((m, scale))
}

fn nullspace_with_floor(m: &DMatrix<f64>, scale: f64) -> DMatrix<f64> {
    let sv = linalg::singular_values(m);
    let smax = sv.first().copied().unwrap_or(0.0);
    let floor = (1e-9 * smax).max(1e-6 * scale.max(1e-300));
    // Columns of V with singular value below the floor.
    let svd = m.clone().svd(false, true);
    let vt = svd.v_t.expect("svd v_t");
    let mut keep = Vec::new();
    for j in 0..m.ncols() {
        let s = if j < svd.singular_values.len() { svd.singular_values[j] } else { 0.0 };
        if s <= floor {
            keep.push(j);
        }
    }
    let mut out = DMatrix::zeros(m.ncols(), keep.len());
    for (c, &j) in keep.iter().enumerate() {
        out.set_column(c, &vt.row(j).transpose());
    }
    out
}

/// Outcome of the constrained solver.
pub struct ConstrainedSolution {
    pub momenta: Vec<GaugeMomentum>,
    pub nullspace_dims: Vec<usize>,
    pub warnings: Vec<String>,
    /// Max normalized residual of each returned momentum on the
    /// verification sample.
    pub residuals: Vec<f64>,
}

const CONSTRAINED_RESIDUAL_TOL: f64 = 1e-6;

/// Collocation solver for systems that may violate the sufficient
/// conditions: per-node nullspace of the algebraic constraints, ODE
/// integration with projection, residual verification. Zero surviving
/// momenta is a valid outcome.
pub fn solve_momenta_constrained(spec: &SystemSpec, grid: &ShapeGrid) -> Result<ConstrainedSolution> {
    let k = spec.k();
    let mut warnings = Vec::new();

    let nullspace_at = |s: f64| -> Result<DMatrix<f64>> {
        let q = spec.section_at(s);
        let (rows, scale) = constraint_rows(spec, &q)?;
        Ok(nullspace_with_floor(&rows, scale))
    };

    let mut dims = Vec::with_capacity(grid.len());
    for &s in &grid.s_values {
        dims.push(nullspace_at(s)?.ncols());
    }
    let d = dims.iter().copied().min().unwrap_or(0);
    if dims.iter().any(|&x| x != d) {
        warnings.push(format!(
            "nullspace dimension varies across the grid (min {d}); using the minimum"
        ));
    }
    if d == 0 {
        return Ok(ConstrainedSolution {
            momenta: Vec::new(),
            nullspace_dims: dims,
            warnings,
            residuals: Vec::new(),
        });
    }

    // Seed directions at the base node.
    let base_ns = nullspace_at(grid.base())?;
    let seeds: Vec<DVector<f64>> = (0..d.min(base_ns.ncols()))
        .map(|j| base_ns.column(j).clone_owned())
        .collect();

    // Integrate f' = Rtilde f with projection onto the local nullspace
    // after every accepted interval.
    let rhs = |s: f64, f: &DMatrix<f64>| -> Result<DMatrix<f64>> { Ok(rtilde_at(spec, s)? * f) };
    let project = |s: f64, f: &DVector<f64>| -> Result<DVector<f64>> {
        let ns = nullspace_at(s)?;
        Ok(&ns * (ns.transpose() * f))
    };

    let mut tables: Vec<Vec<DVector<f64>>> = Vec::new();
    for seed in &seeds {
        let mut nodes = vec![DVector::zeros(k); grid.len()];
        nodes[grid.base_index] = seed.clone();
        for i in grid.base_index..grid.len() - 1 {
            let y0 = DMatrix::from_column_slice(k, 1, nodes[i].as_slice());
            let y1 = integrate_interval(&rhs, grid.s_values[i], grid.s_values[i + 1], &y0)?;
            nodes[i + 1] = project(grid.s_values[i + 1], &y1.column(0).clone_owned())?;
        }
        for i in (0..grid.base_index).rev() {
            let y0 = DMatrix::from_column_slice(k, 1, nodes[i + 1].as_slice());
            let y1 = integrate_interval(&rhs, grid.s_values[i + 1], grid.s_values[i], &y0)?;
            nodes[i] = project(grid.s_values[i], &y1.column(0).clone_owned())?;
        }
        tables.push(nodes);
    }

    // Verification sample: domain points paired with deterministic
    // velocity-coefficient draws.
    let (points, _) = sampling::domain_samples(spec, 1000);
    let vbox: Vec<(f64, f64)> = vec![(-1.0, 1.0); k + 1];
    let draws = sampling::halton_box(&vbox, points.len());

    let mut momenta = Vec::new();
    let mut residuals = Vec::new();
    let mut kept_cols: Vec<DVector<f64>> = Vec::new();
    for (idx, nodes) in tables.iter().enumerate() {
        let interp = GridInterp {
            s: grid.s_values.clone(),
            vals: nodes.iter().map(|v| DMatrix::from_column_slice(k, 1, v.as_slice())).collect(),
            derivs: {
                // Hermite slopes from the projected path itself.
                let tmp = GridInterp {
                    s: grid.s_values.clone(),
                    vals: nodes
                        .iter()
                        .map(|v| DMatrix::from_column_slice(k, 1, v.as_slice()))
                        .collect(),
                    derivs: vec![DMatrix::zeros(k, 1); nodes.len()],
                };
                grid.s_values.iter().map(|&s| tmp.derivative_fd_at(s)).collect()
            },
        };

        let mut max_res: f64 = 0.0;
        for (q, draw) in points.iter().zip(&draws) {
            let s = spec.shape_fn.at(q);
            if s < grid.s_values[0] || s > *grid.s_values.last().unwrap() {
                continue;
            }
            let f = interp.value_at(s).column(0).clone_owned();
            let g = spec.shape_rate(q);
            let x0f = interp.derivative_fd_at(s).column(0).clone_owned() * g;
            let v0 = draw.0[0];
            let v = draw.0.rows(1, k).clone_owned();
            max_res = max_res.max(normalized_momentum_residual(spec, &f, &x0f, q, v0, &v)?);
        }

        if max_res < CONSTRAINED_RESIDUAL_TOL {
            // Keep only directions independent of those already accepted.
            let mut probe = kept_cols.clone();
            probe.push(nodes[grid.base_index].clone());
            let m = DMatrix::from_columns(&probe);
            if linalg::rank(&m, 1e-9) == probe.len() {
                kept_cols.push(nodes[grid.base_index].clone());
                residuals.push(max_res);
                let interp = Arc::new(interp);
                let shape = spec.shape_fn.clone();
                momenta.push(GaugeMomentum::new(format!("Jc{}", idx + 1), move |q: &ChartPoint| {
                    interp.value_at(shape.at(q)).column(0).clone_owned()
                }));
            }
        }
    }

    Ok(ConstrainedSolution { momenta, nullspace_dims: dims, warnings, residuals })
}

/// Constant coefficient vectors c with N(q) c = 0 at every sample:
/// intersection of the nullspaces, i.e. constant solutions of the ODE.
pub fn horizontal_symmetry_detect(spec: &SystemSpec, samples: &[ChartPoint]) -> Result<DMatrix<f64>> {
    let k = spec.k();
    let kept: Vec<&ChartPoint> = samples.iter().filter(|q| spec.in_domain(q)).collect();
    if kept.is_empty() {
        return Err(Error::BadParameter("no in-domain samples".into()));
    }
    let mut stacked = DMatrix::zeros(kept.len() * k, k);
    let mut scale: f64 = 0.0;
    for (i, q) in kept.iter().enumerate() {
        let n = n_matrix(spec, q)?;
        let x0q = spec.x0.at(q);
        let x0n = spec.metric.norm(q, &x0q);
        for (j, y) in spec.s_basis.iter().enumerate() {
            let b = lie_bracket(y, &spec.x0, q, spec.fd_eps)?;
            scale = scale.max(spec.metric.norm(q, &y.at(q)) * spec.metric.norm(q, &b) + x0n);
            let _ = j;
        }
        stacked.view_mut((i * k, 0), (k, k)).copy_from(&n);
    }
    Ok(nullspace_with_floor(&stacked, scale / (kept.len() as f64).sqrt()))
}

fn fmt17(x: f64) -> String {
    format!("{x:.16e}")
}

/// CSV export: columns `s, F_11..F_kk` (row-major entries).
pub fn write_fundamental_csv<W: Write>(fs: &FundamentalSolution, out: &mut W) -> std::io::Result<()> {
    let k = fs.k;
    let mut header = vec!["s".to_string()];
    for i in 1..=k {
        for j in 1..=k {
            header.push(format!("F_{i}{j}"));
        }
    }
    writeln!(out, "{}", header.join(","))?;
    for (idx, &s) in fs.grid.s_values.iter().enumerate() {
        let f = fs.node(idx);
        let mut row = vec![fmt17(s)];
        for i in 0..k {
            for j in 0..k {
                row.push(fmt17(f[(i, j)]));
            }
        }
        writeln!(out, "{}", row.join(","))?;
    }
    Ok(())
}

/// CSV export of per-momentum coefficients per grid node.
pub fn write_coefficients_csv<W: Write>(
    spec: &SystemSpec,
    momenta: &[GaugeMomentum],
    grid: &ShapeGrid,
    out: &mut W,
) -> std::io::Result<()> {
    let k = spec.k();
    let mut header = vec!["s".to_string()];
    for m in momenta {
        for i in 1..=k {
            header.push(format!("{}_f{}", m.label, i));
        }
    }
    writeln!(out, "{}", header.join(","))?;
    for &s in &grid.s_values {
        let q = spec.section_at(s);
        let mut row = vec![fmt17(s)];
        for m in momenta {
            let c = m.coeffs_at(&q);
            for i in 0..k {
                row.push(fmt17(c[i]));
            }
        }
        writeln!(out, "{}", row.join(","))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog;
    use approx::assert_abs_diff_eq;

    #[test]
    fn oscillator_r_matrix_closed_form() {
        let entry = catalog::oscillator(Default::default()).unwrap();
        let spec = &entry.spec;
        for y in [-1.5, -0.4, 0.0, 0.7, 1.0, 1.9] {
            let q = spec.section_at(y);
            let r = r_matrix(spec, &q).unwrap();
            assert_abs_diff_eq!(r[(0, 0)], -y / (1.0 + y * y), epsilon = 1e-9);
        }
        // Paper value at y = 1.
        let q = spec.section_at(1.0);
        assert_abs_diff_eq!(r_matrix(spec, &q).unwrap()[(0, 0)], -0.5, epsilon = 1e-9);
    }

    #[test]
    fn oscillator_n_matrix_hand_value() {
        let entry = catalog::oscillator(Default::default()).unwrap();
        let q = entry.spec.section_at(0.8);
        let n = n_matrix(&entry.spec, &q).unwrap();
        assert_abs_diff_eq!(n[(0, 0)], -0.8, epsilon = 1e-9);
    }

    #[test]
    fn oscillator_fundamental_matrix_matches_analytic() {
        let entry = catalog::oscillator(Default::default()).unwrap();
        let grid = ShapeGrid::uniform(-2.0, 2.0, 401, 0.0).unwrap();
        let fs = solve_fundamental_matrix(&entry.spec, &grid).unwrap();
        for y in [-2.0, -1.0, 0.0, 0.33, 1.0, 1.57, 2.0] {
            let expect = 1.0 / (1.0 + y * y).sqrt();
            assert_abs_diff_eq!(fs.value_at(y)[(0, 0)], expect, epsilon = 1e-8);
        }
        assert_abs_diff_eq!(fs.value_at(1.0)[(0, 0)], 0.7071067811865476, epsilon = 1e-8);
        assert_abs_diff_eq!(fs.node(grid.base_index)[(0, 0)], 1.0, epsilon = 0.0);
    }

    #[test]
    fn oscillator_momentum_eval_and_zero_velocity() {
        let entry = catalog::oscillator(Default::default()).unwrap();
        let grid = ShapeGrid::uniform(-2.0, 2.0, 201, 0.0).unwrap();
        let fs = solve_fundamental_matrix(&entry.spec, &grid).unwrap();
        let momenta = gauge_momenta_from_solution(&entry.spec, &fs);
        assert_eq!(momenta.len(), 1);
        let q = ChartPoint::from_slice(&[0.4, 1.2, 0.0]);
        let v = DVector::zeros(3);
        assert_eq!(momenta[0].eval(&entry.spec, &q, &v), 0.0);
        // J = p_Y / sqrt(1 + y^2): velocity along Y gives kappa(Y, Y) f.
        let vy = entry.spec.s_basis[0].at(&q);
        let y = 1.2;
        let expect = (1.0 + y * y) / (1.0 + y * y).sqrt();
        assert_abs_diff_eq!(momenta[0].eval(&entry.spec, &q, &vy), expect, epsilon = 1e-7);
    }

    #[test]
    fn residual_hand_value_constant_coefficients() {
        let entry = catalog::oscillator(Default::default()).unwrap();
        let q = ChartPoint::from_slice(&[0.0, 1.0, 0.0]);
        let f = DVector::from_column_slice(&[1.0]);
        let x0f = DVector::from_column_slice(&[0.0]);
        let v = DVector::from_column_slice(&[1.0]);
        let res = momentum_equation_residual(&entry.spec, &f, &x0f, &q, 1.0, &v).unwrap();
        assert_abs_diff_eq!(res, -1.0, epsilon = 1e-8);
    }

    #[test]
    fn oscillator_has_no_horizontal_symmetry() {
        let entry = catalog::oscillator(Default::default()).unwrap();
        let (samples, _) = crate::sampling::domain_samples(&entry.spec, 40);
        let basis = horizontal_symmetry_detect(&entry.spec, &samples).unwrap();
        assert_eq!(basis.ncols(), 0);
    }

    #[test]
    fn fundamental_matrix_group_property() {
        let entry = catalog::oscillator(Default::default()).unwrap();
        let g0 = ShapeGrid::uniform(-1.5, 1.5, 151, 0.0).unwrap();
        let g1 = ShapeGrid::uniform(-1.5, 1.5, 151, 0.5).unwrap();
        let f0 = solve_fundamental_matrix(&entry.spec, &g0).unwrap();
        let f1 = solve_fundamental_matrix(&entry.spec, &g1).unwrap();
        for s in [-1.2, -0.3, 0.9, 1.4] {
            let lhs = f0.value_at(s)[(0, 0)];
            let rhs = f1.value_at(s)[(0, 0)] * f0.value_at(0.5)[(0, 0)];
            assert_abs_diff_eq!(lhs, rhs, epsilon = 1e-8);
        }
    }
}
