//! Small dense helpers not covered directly by nalgebra.

use nalgebra::{DMatrix, DVector};

pub(crate) fn symmetric_eigenvalues(m: &DMatrix<f64>) -> DVector<f64> {
    let sym = (m + m.transpose()) * 0.5;
    sym.symmetric_eigenvalues()
}

pub(crate) fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    symmetric_eigenvalues(m).min()
}

pub(crate) fn max_eigenvalue(m: &DMatrix<f64>) -> f64 {
    symmetric_eigenvalues(m).max()
}

/// Numerical rank at relative singular-value tolerance `rel_tol`.
pub(crate) fn rank(m: &DMatrix<f64>, rel_tol: f64) -> usize {
    if m.is_empty() {
        return 0;
    }
    let sv = m.clone().svd(false, false).singular_values;
    let top = sv.max();
    if top == 0.0 {
        return 0;
    }
    sv.iter().filter(|s| **s > rel_tol * top).count()
}

/// Euclidean projection onto the probability simplex.
pub(crate) fn project_simplex(v: &mut [f64]) {
    let mut sorted: Vec<f64> = v.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cum = 0.0;
    let mut tau = 0.0;
    for (i, s) in sorted.iter().enumerate() {
        cum += s;
        let candidate = (cum - 1.0) / (i + 1) as f64;
        if s - candidate > 0.0 {
            tau = candidate;
        }
    }
    for x in v.iter_mut() {
        *x = (*x - tau).max(0.0);
    }
}

/// Scale `v` back into the ball of radius `r` if it lies outside.
pub(crate) fn clip_to_ball(v: &mut DVector<f64>, r: f64) {
    let n = v.norm();
    if n > r {
        if r == 0.0 {
            v.fill(0.0);
        } else {
            *v *= r / n;
        }
    }
}
