//! Small dense linear-algebra helpers shared by the geometry modules.

use nalgebra::{DMatrix, DVector};

pub fn inner(g: &DMatrix<f64>, u: &DVector<f64>, v: &DVector<f64>) -> f64 {
    let n = u.len();
    let mut s = 0.0;
    for a in 0..n {
        let mut row = 0.0;
        for b in 0..n {
            row += g[(a, b)] * v[b];
        }
        s += u[a] * row;
    }
    s
}

pub fn symmetric_part(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

pub fn antisymmetric_part(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m - m.transpose()) * 0.5
}

/// Eigenvalues of the symmetric part, ascending.
pub fn sym_eigenvalues(m: &DMatrix<f64>) -> Vec<f64> {
    if m.nrows() == 0 {
        return Vec::new();
    }
    let mut ev: Vec<f64> = symmetric_part(m).symmetric_eigenvalues().iter().copied().collect();
    ev.sort_by(f64::total_cmp);
    ev
}

pub fn sym_min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    sym_eigenvalues(m).first().copied().unwrap_or(f64::INFINITY)
}

/// Counts of (negative, zero, positive) eigenvalues with relative tolerance.
pub fn inertia(g: &DMatrix<f64>, rel_tol: f64) -> (usize, usize, usize) {
    let ev = sym_eigenvalues(g);
    let scale = ev.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut out = (0, 0, 0);
    for v in ev {
        if v.abs() <= rel_tol * scale {
            out.1 += 1;
        } else if v < 0.0 {
            out.0 += 1;
        } else {
            out.2 += 1;
        }
    }
    out
}

/// Orthonormal basis for `g` with the timelike vector first, oriented so
/// that it has a positive component along `future` (when given) by the
/// metric pairing `g(e0, future) < 0`.
pub fn orthonormal_basis(g: &DMatrix<f64>, future: Option<&DVector<f64>>) -> Option<Vec<DVector<f64>>> {
    let n = g.nrows();
    let eig = symmetric_part(g).symmetric_eigen();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let mut basis = Vec::with_capacity(n);
    for &i in &idx {
        let lam = eig.eigenvalues[i];
        if lam.abs() < 1e-300 {
            return None;
        }
        basis.push(eig.eigenvectors.column(i) / lam.abs().sqrt());
    }
    // Re-orthonormalise in the metric to remove eigen-solver round-off.
    let basis = gram_schmidt(g, &basis)?;
    let mut basis = basis;
    if let Some(fut) = future {
        if inner(g, &basis[0], fut) > 0.0 {
            basis[0] = -&basis[0];
        }
    }
    Some(basis)
}

/// Metric Gram–Schmidt; fails on (near-)null or dependent input.
pub fn gram_schmidt(g: &DMatrix<f64>, vs: &[DVector<f64>]) -> Option<Vec<DVector<f64>>> {
    let mut out: Vec<DVector<f64>> = Vec::with_capacity(vs.len());
    let mut norms: Vec<f64> = Vec::with_capacity(vs.len());
    for v in vs {
        let mut w = v.clone();
        for (e, s) in out.iter().zip(&norms) {
            let c = inner(g, &w, e) * s;
            w -= e * c;
        }
        let q = inner(g, &w, &w);
        let scale = v.norm_squared().max(1e-300);
        if q.abs() < 1e-12 * scale {
            return None;
        }
        let s = q.signum();
        w /= q.abs().sqrt();
        out.push(w);
        norms.push(s);
    }
    Some(out)
}

pub fn matrix_from_columns(cols: &[DVector<f64>], rows: usize) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(rows, cols.len());
    for (j, c) in cols.iter().enumerate() {
        m.set_column(j, c);
    }
    m
}

pub fn frobenius(m: &DMatrix<f64>) -> f64 {
    m.iter().map(|v| v * v).sum::<f64>().sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minkowski_basis_is_orthonormal() {
        let g = DMatrix::from_diagonal(&DVector::from_vec(vec![-1.0, 1.0, 1.0]));
        let t = DVector::from_vec(vec![1.0, 0.0, 0.0]);
        let b = orthonormal_basis(&g, Some(&t)).unwrap();
        assert!((inner(&g, &b[0], &b[0]) + 1.0).abs() < 1e-14);
        assert!(inner(&g, &b[0], &t) < 0.0);
        for i in 1..3 {
            assert!((inner(&g, &b[i], &b[i]) - 1.0).abs() < 1e-14);
            assert!(inner(&g, &b[0], &b[i]).abs() < 1e-14);
        }
    }

    #[test]
    fn inertia_counts_signature() {
        let g = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        assert_eq!(inertia(&g, 1e-12), (1, 0, 1));
    }
}
