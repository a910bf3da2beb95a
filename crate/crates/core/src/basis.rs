//! B-spline bases, difference penalties, and the mixed-model design of the
//! functional generalized additive model.
//!
//! The surface `F(x, t)` is expanded in a tensor product of cubic B-splines.
//! Each marginal basis is split, through the eigendecomposition of its
//! second-order difference penalty, into an unpenalized part spanning
//! `{1, x}` (resp. `{1, t}`) and a penalized part whose coefficients carry an
//! identity penalty. Row-wise products of the parts, integrated over `t` with
//! the grid quadrature weights, give the fixed-effect matrix and the three
//! random-effect blocks.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::funcdata::FunctionalDataset;
use crate::linalg::sym_eigen_desc;

/// Default basis dimension on both marginal axes.
pub const DEFAULT_K: usize = 7;

#[derive(Debug, Clone, PartialEq)]
pub struct SplineBasis {
    knots: Vec<f64>,
    degree: usize,
}

impl SplineBasis {
    /// Basis from an explicit nondecreasing knot vector.
    pub fn new(knots: Vec<f64>, degree: usize) -> Result<Self> {
        if knots.len() < 2 * (degree + 1) {
            return Err(Error::invalid(format!(
                "{} knots cannot support a degree-{degree} basis",
                knots.len()
            )));
        }
        if knots.windows(2).any(|w| w[1] < w[0]) || knots.iter().any(|k| !k.is_finite()) {
            return Err(Error::invalid("knots must be finite and nondecreasing"));
        }
        if knots[degree] >= knots[knots.len() - degree - 1] {
            return Err(Error::invalid("empty basis domain"));
        }
        Ok(Self { knots, degree })
    }

    /// `k` functions on `[a, b]` with boundary knots repeated `degree + 1` times,
    /// so the basis interpolates at both ends.
    pub fn clamped(a: f64, b: f64, k: usize, degree: usize) -> Result<Self> {
        check_dims(a, b, k, degree)?;
        let inner = k - degree;
        let mut knots = vec![a; degree];
        knots.extend((0..=inner).map(|i| a + (b - a) * i as f64 / inner as f64));
        knots.extend(std::iter::repeat_n(b, degree));
        Self::new(knots, degree)
    }

    /// `k` functions on `[a, b]` with equispaced knots extended past both ends.
    /// Coefficients of a linear function are then an arithmetic sequence, so
    /// second differences of the coefficients vanish exactly on `{1, x}`.
    pub fn uniform(a: f64, b: f64, k: usize, degree: usize) -> Result<Self> {
        check_dims(a, b, k, degree)?;
        let inner = k - degree;
        let h = (b - a) / inner as f64;
        let knots = (0..k + degree + 1).map(|i| a + h * (i as f64 - degree as f64)).collect();
        Self::new(knots, degree)
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    /// Number of basis functions.
    pub fn dim(&self) -> usize {
        self.knots.len() - self.degree - 1
    }

    /// Interval on which the functions form a partition of unity.
    pub fn domain(&self) -> (f64, f64) {
        (self.knots[self.degree], self.knots[self.dim()])
    }

    /// Index of the first nonzero function at `x` and the `degree + 1`
    /// nonzero values. `x` is clamped into the domain.
    pub fn eval_local(&self, x: f64) -> (usize, Vec<f64>) {
        let p = self.degree;
        let k = self.dim();
        let (lo, hi) = self.domain();
        let x = x.clamp(lo, hi);
        let u = &self.knots;
        // span s with u[s] <= x < u[s+1], s in [p, k-1]
        let mut s = match u[p..=k].binary_search_by(|v| v.total_cmp(&x)) {
            Ok(i) => p + i,
            Err(i) => p + i - 1,
        };
        s = s.min(k - 1);
        while s > p && u[s] == u[s + 1] {
            s -= 1;
        }
        let mut n = vec![0.0; p + 1];
        let mut left = vec![0.0; p + 1];
        let mut right = vec![0.0; p + 1];
        n[0] = 1.0;
        for j in 1..=p {
            left[j] = x - u[s + 1 - j];
            right[j] = u[s + j] - x;
            let mut saved = 0.0;
            for r in 0..j {
                let denom = right[r + 1] + left[j - r];
                let tmp = if denom == 0.0 { 0.0 } else { n[r] / denom };
                n[r] = saved + right[r + 1] * tmp;
                saved = left[j - r] * tmp;
            }
            n[j] = saved;
        }
        (s - p, n)
    }
}

fn check_dims(a: f64, b: f64, k: usize, degree: usize) -> Result<()> {
    if !(a < b) || !a.is_finite() || !b.is_finite() {
        return Err(Error::invalid(format!("need finite a < b, got [{a}, {b}]")));
    }
    if k < degree + 1 {
        return Err(Error::invalid(format!("K = {k} is below degree + 1 = {}", degree + 1)));
    }
    Ok(())
}

/// Basis values at each `x` (rows) for each function (columns).
pub fn eval_bspline(basis: &SplineBasis, x: &[f64]) -> Result<DMatrix<f64>> {
    if x.is_empty() {
        return Err(Error::invalid("no evaluation points"));
    }
    let mut out = DMatrix::zeros(x.len(), basis.dim());
    for (r, &xv) in x.iter().enumerate() {
        let (first, vals) = basis.eval_local(xv);
        for (c, v) in vals.into_iter().enumerate() {
            out[(r, first + c)] = v;
        }
    }
    Ok(out)
}

/// `DᵀD` for the order-`order` difference operator on `k` coefficients.
pub fn penalty_matrix(k: usize, order: usize) -> Result<DMatrix<f64>> {
    if order < 1 || k <= order {
        return Err(Error::invalid(format!("need K > order >= 1, got K = {k}, order = {order}")));
    }
    let mut d = DMatrix::<f64>::identity(k, k);
    for _ in 0..order {
        let rows = d.nrows() - 1;
        d = DMatrix::from_fn(rows, k, |i, j| d[(i + 1, j)] - d[(i, j)]);
    }
    Ok(d.transpose() * d)
}

/// Coefficient transforms from the penalty eigendecomposition: `u0` spans the
/// null space, `u_pen` holds the positive eigenvectors scaled by `D₊^{-1/2}`.
#[derive(Debug, Clone)]
pub struct PenaltySplit {
    pub u0: DMatrix<f64>,
    pub u_pen: DMatrix<f64>,
}

pub fn split_penalty(p: &DMatrix<f64>) -> Result<PenaltySplit> {
    if !p.is_square() {
        return Err(Error::invalid("penalty must be square"));
    }
    let k = p.nrows();
    let (vals, vecs) = sym_eigen_desc(p);
    if k > 0 && vals[k - 1] < -1e-8 {
        return Err(Error::NumericalFailure(format!("penalty has eigenvalue {:.3e}", vals[k - 1])));
    }
    let top = if k > 0 { vals[0].max(0.0) } else { 0.0 };
    let tol = 1e-10 * top.max(1.0);
    let npos = vals.iter().filter(|&&v| v > tol).count();
    let mut u_pen = DMatrix::zeros(k, npos);
    for j in 0..npos {
        u_pen.set_column(j, &(vecs.column(j) / vals[j].sqrt()));
    }
    let u0 = vecs.columns(npos, k - npos).into_owned();
    Ok(PenaltySplit { u0, u_pen })
}

/// `(B·U₀, B·U₊·D₊^{-1/2})`: unpenalized and identity-penalized columns.
pub fn reparameterize(b: &DMatrix<f64>, p: &DMatrix<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    if b.ncols() != p.nrows() {
        return Err(Error::invalid(format!("basis has {} columns, penalty is {}x{}", b.ncols(), p.nrows(), p.ncols())));
    }
    let s = split_penalty(p)?;
    Ok((b * &s.u0, b * &s.u_pen))
}

/// Fixed and random-effect design of the mixed-model form of the FGAM.
#[derive(Debug, Clone, PartialEq)]
pub struct MixedDesign {
    /// `[1, ∫X, ∫tX]`.
    pub x: DMatrix<f64>,
    /// `∫ X(t)·Z_t(t)`: smooth deviations of a linear effect.
    pub z1: DMatrix<f64>,
    /// `∫ Z_x(X(t)) ⊗ X_t(t)`: nonlinear in `x`, linear in `t`.
    pub z2: DMatrix<f64>,
    /// `∫ Z_x(X(t)) ⊗ Z_t(t)`: nonlinear in both.
    pub z3: DMatrix<f64>,
}

impl MixedDesign {
    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.z1.ncols(), self.z2.ncols(), self.z3.ncols())
    }
}

/// Builds the FGAM design with `kx` cubic B-splines over the range of the
/// observed curve values and `kt` over the grid.
pub fn fgam_design(ds: &FunctionalDataset, kx: usize, kt: usize) -> Result<MixedDesign> {
    if kx < 4 || kt < 4 {
        return Err(Error::invalid(format!("need K_x, K_t >= 4, got {kx}, {kt}")));
    }
    let curves = ds.curves();
    let (xmin, xmax) = curves.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    if xmax - xmin < 1e-12 {
        return Err(Error::invalid("curve values have no range"));
    }
    let grid = ds.grid();
    let t = grid.points();
    let w = grid.weights();
    let n = ds.n();
    let m = grid.len();

    let tb = SplineBasis::uniform(grid.start(), grid.end(), kt, 3)?;
    let bt = eval_bspline(&tb, t)?;
    let (xt, zt) = reparameterize(&bt, &penalty_matrix(kt, 2)?)?;

    let xb = SplineBasis::uniform(xmin, xmax, kx, 3)?;
    let xsplit = split_penalty(&penalty_matrix(kx, 2)?)?;
    let qx = xsplit.u_pen.ncols();
    let qt = zt.ncols();
    let pt = xt.ncols();

    let mut fixed = DMatrix::zeros(n, 3);
    let mut z1 = DMatrix::zeros(n, qt);
    let mut z2 = DMatrix::zeros(n, qx * pt);
    let mut z3 = DMatrix::zeros(n, qx * qt);
    let mut zx = vec![0.0; qx];
    for i in 0..n {
        fixed[(i, 0)] = 1.0;
        for j in 0..m {
            let x = curves[(i, j)];
            let wj = w[j];
            fixed[(i, 1)] += wj * x;
            fixed[(i, 2)] += wj * x * t[j];
            for c in 0..qt {
                z1[(i, c)] += wj * x * zt[(j, c)];
            }
            let (first, vals) = xb.eval_local(x);
            for (a, za) in zx.iter_mut().enumerate() {
                *za = vals.iter().enumerate().map(|(r, v)| v * xsplit.u_pen[(first + r, a)]).sum();
            }
            for a in 0..qx {
                let wz = wj * zx[a];
                for c in 0..pt {
                    z2[(i, a * pt + c)] += wz * xt[(j, c)];
                }
                for c in 0..qt {
                    z3[(i, a * qt + c)] += wz * zt[(j, c)];
                }
            }
        }
    }
    Ok(MixedDesign { x: fixed, z1, z2, z3 })
}
