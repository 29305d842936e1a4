//! Small dense-matrix helpers shared across modules.

use nalgebra::{DMatrix, DVector};

/// Singular values, descending.
pub fn singular_values(m: &DMatrix<f64>) -> Vec<f64> {
    let mut sv: Vec<f64> = m.clone().svd(false, false).singular_values.iter().copied().collect();
    sv.sort_by(|a, b| b.partial_cmp(a).unwrap());
    sv
}

/// 2-norm condition number (infinite when rank-deficient).
pub fn cond_2(m: &DMatrix<f64>) -> f64 {
    let sv = singular_values(m);
    let max = sv.first().copied().unwrap_or(0.0);
    let min = sv.last().copied().unwrap_or(0.0);
    if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Numerical rank with a relative singular-value threshold.
pub fn rank(m: &DMatrix<f64>, rel_tol: f64) -> usize {
    let sv = singular_values(m);
    let max = sv.first().copied().unwrap_or(0.0);
    if max == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > rel_tol * max).count()
}

/// Orthonormal basis of the (right) nullspace, columns of the result.
pub fn nullspace(m: &DMatrix<f64>, rel_tol: f64) -> DMatrix<f64> {
    let ncols = m.ncols();
    let svd = m.clone().svd(false, true);
    let vt = svd.v_t.expect("svd with v_t");
    let smax = svd.singular_values.iter().cloned().fold(0.0_f64, f64::max);
    let mut keep: Vec<usize> = Vec::new();
    for j in 0..ncols {
        let s = if j < svd.singular_values.len() { svd.singular_values[j] } else { 0.0 };
        if smax == 0.0 || s <= rel_tol * smax {
            keep.push(j);
        }
    }
    let mut out = DMatrix::zeros(ncols, keep.len());
    for (c, &j) in keep.iter().enumerate() {
        out.set_column(c, &vt.row(j).transpose());
    }
    out
}

/// Largest principal angle (radians) between the column spans of `a` and `b`.
pub fn max_principal_angle(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let qa = orthonormalize(a);
    let qb = orthonormalize(b);
    if qa.ncols() != qb.ncols() {
        return std::f64::consts::FRAC_PI_2;
    }
    if qa.ncols() == 0 {
        return 0.0;
    }
    let m = qa.transpose() * qb;
    let sv = singular_values(&m);
    let sigma_min = sv.last().copied().unwrap_or(0.0).clamp(-1.0, 1.0);
    sigma_min.acos()
}

/// Orthonormal basis of the column span (drops numerically dependent columns).
pub fn orthonormalize(a: &DMatrix<f64>) -> DMatrix<f64> {
    let mut cols: Vec<DVector<f64>> = Vec::new();
    for j in 0..a.ncols() {
        let mut v = a.column(j).clone_owned();
        for u in &cols {
            let c = u.dot(&v);
            v -= u * c;
        }
        let n = v.norm();
        if n > 1e-12 * a.column(j).norm().max(1.0) {
            cols.push(v / n);
        }
    }
    let mut out = DMatrix::zeros(a.nrows(), cols.len());
    for (j, c) in cols.iter().enumerate() {
        out.set_column(j, c);
    }
    out
}

/// Solve `m x = rhs` via SVD, reporting the condition number.
pub fn solve_with_cond(m: &DMatrix<f64>, rhs: &DVector<f64>) -> Option<(DVector<f64>, f64)> {
    let svd = m.clone().svd(true, true);
    let smax = svd.singular_values.iter().cloned().fold(0.0_f64, f64::max);
    let smin = svd.singular_values.iter().cloned().fold(f64::INFINITY, f64::min);
    let cond = if smin > 0.0 { smax / smin } else { f64::INFINITY };
    svd.solve(rhs, 0.0).ok().map(|x| (x, cond))
}
