//! Small dense linear-algebra helpers shared by the test modules.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Relative singular-value cutoff used for rank decisions.
pub(crate) const RANK_TOL: f64 = 1e-10;

/// Symmetric eigendecomposition with eigenvalues sorted in decreasing order.
pub(crate) fn sym_eigen_desc(m: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let sym = (m + m.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let k = eig.eigenvalues.len();
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let vals = DVector::from_iterator(k, order.iter().map(|&i| eig.eigenvalues[i]));
    let mut vecs = DMatrix::zeros(m.nrows(), k);
    for (dst, &src) in order.iter().enumerate() {
        vecs.set_column(dst, &eig.eigenvectors.column(src));
    }
    (vals, vecs)
}

/// Orthonormal basis of the column space of `m`, dropping directions whose
/// singular value falls below `RANK_TOL` times the largest.
pub(crate) fn column_basis(m: &DMatrix<f64>) -> DMatrix<f64> {
    if m.ncols() == 0 || m.nrows() == 0 {
        return DMatrix::zeros(m.nrows(), 0);
    }
    let svd = m.clone().svd(true, false);
    let u = svd.u.expect("requested U");
    let smax = svd.singular_values.max();
    if smax <= 0.0 {
        return DMatrix::zeros(m.nrows(), 0);
    }
    let keep: Vec<usize> = (0..svd.singular_values.len())
        .filter(|&i| svd.singular_values[i] > RANK_TOL * smax)
        .collect();
    let mut out = DMatrix::zeros(m.nrows(), keep.len());
    for (dst, &src) in keep.iter().enumerate() {
        out.set_column(dst, &u.column(src));
    }
    out
}

#[derive(Debug, Clone)]
pub(crate) struct Ols {
    pub coef: DVector<f64>,
    pub fitted: DVector<f64>,
    pub residuals: DVector<f64>,
}

/// Least squares of `y` on the columns of `x`. Rank deficiency is an error.
pub(crate) fn ols(x: &DMatrix<f64>, y: &DVector<f64>) -> Result<Ols> {
    if x.nrows() != y.len() {
        return Err(Error::invalid(format!("design has {} rows, response {}", x.nrows(), y.len())));
    }
    if x.ncols() > x.nrows() {
        return Err(Error::SingularDesign(format!("{} columns for {} rows", x.ncols(), x.nrows())));
    }
    // Column scaling keeps the rank decision independent of units.
    let scale: Vec<f64> = x.column_iter().map(|c| c.norm()).collect();
    if let Some(j) = scale.iter().position(|&s| s == 0.0) {
        return Err(Error::SingularDesign(format!("column {j} is identically zero")));
    }
    let mut xs = x.clone();
    for (j, mut col) in xs.column_iter_mut().enumerate() {
        col /= scale[j];
    }
    let svd = xs.svd(true, true);
    let s = &svd.singular_values;
    let smax = s.max();
    let smin = s.min();
    if smin <= RANK_TOL * smax {
        return Err(Error::SingularDesign(format!("condition number {:.3e} exceeds limit", smax / smin)));
    }
    let u = svd.u.as_ref().expect("requested U");
    let vt = svd.v_t.as_ref().expect("requested V");
    let uty = u.transpose() * y;
    let z = DVector::from_iterator(s.len(), uty.iter().zip(s.iter()).map(|(a, b)| a / b));
    let mut coef = vt.transpose() * z;
    for j in 0..coef.len() {
        coef[j] /= scale[j];
    }
    let fitted = u * uty;
    let residuals = y - &fitted;
    Ok(Ols { coef, fitted, residuals })
}

/// `[1 | m]`.
pub(crate) fn with_intercept(m: &DMatrix<f64>) -> DMatrix<f64> {
    m.clone().insert_column(0, 1.0)
}
