//! Functional linear model fits and null-model residuals.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::basis::{eval_bspline, SplineBasis};
use crate::error::{Error, Result};
use crate::fpca::FpcaFit;
use crate::funcdata::FunctionalDataset;
use crate::linalg::{column_basis, ols, with_intercept};
use crate::testing::Hypothesis;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FlmRoute {
    Basis,
    Scores,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlmFit {
    pub alpha: f64,
    /// Coefficient function on the grid.
    pub beta: Vec<f64>,
    pub fitted: Vec<f64>,
    pub residuals: Vec<f64>,
    pub route: FlmRoute,
    pub p: usize,
}

/// Default basis dimension: 4 for the M settings, 7 otherwise.
pub const DEFAULT_P: usize = 7;
pub const DEFAULT_P_M: usize = 4;

/// `p` B-splines on the grid's domain, cubic when `p >= 4`.
pub fn flm_basis(ds: &FunctionalDataset, p: usize) -> Result<DMatrix<f64>> {
    if p == 0 {
        return Err(Error::invalid("basis dimension must be >= 1"));
    }
    let degree = (p - 1).min(3);
    let b = SplineBasis::clamped(ds.grid().start(), ds.grid().end(), p, degree)?;
    eval_bspline(&b, ds.grid().points())
}

/// `⟨X_i, B_j⟩` for each subject and basis function.
pub(crate) fn basis_design(ds: &FunctionalDataset, basis: &DMatrix<f64>) -> DMatrix<f64> {
    let mut wb = basis.clone();
    for (j, mut row) in wb.row_iter_mut().enumerate() {
        row *= ds.grid().weights()[j];
    }
    ds.curves() * wb
}

fn check_size(n: usize, p: usize) -> Result<()> {
    if n <= p + 1 {
        return Err(Error::InsufficientSample { needed: p + 1, available: n });
    }
    Ok(())
}

/// Expands curves and `β` in the same `p`-dimensional B-spline basis and fits
/// by least squares with an intercept.
pub fn fit_flm_basis(ds: &FunctionalDataset, p: usize) -> Result<FlmFit> {
    check_size(ds.n(), p)?;
    let basis = flm_basis(ds, p)?;
    let design = with_intercept(&basis_design(ds, &basis));
    let y = DVector::from_column_slice(ds.y());
    let fit = ols(&design, &y)?;
    let c = fit.coef.rows(1, p).into_owned();
    Ok(FlmFit {
        alpha: fit.coef[0],
        beta: (basis * c).iter().copied().collect(),
        fitted: fit.fitted.iter().copied().collect(),
        residuals: fit.residuals.iter().copied().collect(),
        route: FlmRoute::Basis,
        p,
    })
}

/// Least squares of `y` on an intercept and the FPC scores.
pub fn fit_flm_scores(fit: &FpcaFit, y: &[f64]) -> Result<FlmFit> {
    let n = fit.scores.nrows();
    let p = fit.n_components();
    if y.len() != n {
        return Err(Error::invalid(format!("{} responses for {n} score rows", y.len())));
    }
    check_size(n, p)?;
    let design = with_intercept(&fit.scores);
    let o = ols(&design, &DVector::from_column_slice(y))?;
    let b = o.coef.rows(1, p).into_owned();
    Ok(FlmFit {
        alpha: o.coef[0],
        beta: (&fit.eigenfunctions * b).iter().copied().collect(),
        fitted: o.fitted.iter().copied().collect(),
        residuals: o.residuals.iter().copied().collect(),
        route: FlmRoute::Scores,
        p,
    })
}

/// How residuals are formed under the no-effect hypothesis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NullResiduals {
    /// `y - ȳ`: residuals of the intercept-only model.
    #[default]
    Centered,
    /// `y` itself: residuals of the model with no intercept.
    Raw,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlmConfig {
    pub p: usize,
    pub null_residuals: NullResiduals,
}

impl Default for FlmConfig {
    fn default() -> Self {
        Self { p: DEFAULT_P, null_residuals: NullResiduals::Centered }
    }
}

/// The least-squares null model as a reusable residual-maker.
#[derive(Debug, Clone)]
pub struct NullModel {
    /// Orthonormal basis of the null model's column space (may be empty).
    q: DMatrix<f64>,
    pub residuals: DVector<f64>,
    pub fitted: DVector<f64>,
}

impl NullModel {
    pub fn new(ds: &FunctionalDataset, hypothesis: Hypothesis, config: &FlmConfig) -> Result<Self> {
        let n = ds.n();
        let design = match hypothesis {
            Hypothesis::Linearity => {
                check_size(n, config.p)?;
                let basis = flm_basis(ds, config.p)?;
                let d = with_intercept(&basis_design(ds, &basis));
                let q = column_basis(&d);
                if q.ncols() < d.ncols() {
                    return Err(Error::SingularDesign(format!(
                        "basis design has rank {} of {}",
                        q.ncols(),
                        d.ncols()
                    )));
                }
                q
            }
            Hypothesis::Nullity => match config.null_residuals {
                NullResiduals::Centered => DMatrix::from_element(n, 1, 1.0 / (n as f64).sqrt()),
                NullResiduals::Raw => DMatrix::zeros(n, 0),
            },
        };
        let y = DVector::from_column_slice(ds.y());
        let fitted = &design * (design.transpose() * &y);
        let residuals = &y - &fitted;
        Ok(Self { q: design, residuals, fitted })
    }

    /// Least squares on the columns of `design`, which must have full rank.
    pub fn from_design(design: &DMatrix<f64>, y: &[f64]) -> Result<Self> {
        if design.nrows() != y.len() {
            return Err(Error::invalid(format!("design has {} rows, response has {}", design.nrows(), y.len())));
        }
        let q = column_basis(design);
        if q.ncols() < design.ncols() {
            return Err(Error::SingularDesign(format!("design has rank {} of {}", q.ncols(), design.ncols())));
        }
        let y = DVector::from_column_slice(y);
        let fitted = &q * (q.transpose() * &y);
        let residuals = &y - &fitted;
        Ok(Self { q, residuals, fitted })
    }

    /// Residuals of a refit of the null model to response `v`.
    pub fn residualize(&self, v: &DVector<f64>) -> DVector<f64> {
        if self.q.ncols() == 0 {
            return v.clone();
        }
        v - &self.q * (self.q.transpose() * v)
    }
}

/// Residuals of the fitted null model.
pub fn null_residuals(ds: &FunctionalDataset, hypothesis: Hypothesis, config: &FlmConfig) -> Result<Vec<f64>> {
    Ok(NullModel::new(ds, hypothesis, config)?.residuals.iter().copied().collect())
}
