//! Test for the quadratic term of a functional quadratic regression.
//!
//! The response is regressed on the first `p` centered FPC scores, their
//! pairwise products and an intercept. `U_n = (n/τ²) Âᵀ(Ĝ − M̂M̂ᵀ)Â`, where
//! `Â` holds the quadratic coefficients, `Ĝ` and `M̂` are the second moment
//! and mean of the product rows, and `τ²` is the mean squared residual of the
//! full fit. Under linearity `U_n` is asymptotically `χ²` with
//! `p(p+1)/2` degrees of freedom.

use nalgebra::{DMatrix, DVector};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{Error, Result};
use crate::fpca::{fit_fpca, FpcaFit, Truncation};
use crate::funcdata::FunctionalDataset;
use crate::linalg::ols;
use crate::testing::{Diagnostics, Hypothesis, Method, TestResult};

pub const DEFAULT_COMPONENTS: usize = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct HrFit {
    pub a_hat: Vec<f64>,
    pub b_hat: Vec<f64>,
    pub mu_hat: f64,
    /// n × p(p+1)/2 product rows.
    pub d: DMatrix<f64>,
    pub g_hat: DMatrix<f64>,
    pub m_hat: Vec<f64>,
    pub tau2: f64,
    pub u_n: f64,
    pub df: usize,
}

fn n_products(p: usize) -> usize {
    p * (p + 1) / 2
}

/// Rows `[D̂ᵢ, F̂ᵢ, 1]`: products `ξ_j ξ_k` for `j ≤ k` (doubled off the
/// diagonal), then the scores, then an intercept.
pub fn hr_design(fit: &FpcaFit, ds: &FunctionalDataset) -> Result<DMatrix<f64>> {
    let n = ds.n();
    let p = fit.n_components();
    if fit.scores.nrows() != n {
        return Err(Error::invalid(format!("fit has {} score rows, data has {n} subjects", fit.scores.nrows())));
    }
    let cols = n_products(p) + p + 1;
    if cols >= n {
        return Err(Error::InsufficientSample { needed: cols, available: n });
    }
    let s = &fit.scores;
    let mut z = DMatrix::zeros(n, cols);
    for i in 0..n {
        let mut c = 0;
        for j in 0..p {
            for k in j..p {
                let factor = if j == k { 1.0 } else { 2.0 };
                z[(i, c)] = factor * s[(i, j)] * s[(i, k)];
                c += 1;
            }
        }
        for j in 0..p {
            z[(i, c + j)] = s[(i, j)];
        }
        z[(i, cols - 1)] = 1.0;
    }
    Ok(z)
}

/// Fits the quadratic model with the scores of `fit` and forms `U_n`.
pub fn hr_fit(fit: &FpcaFit, ds: &FunctionalDataset) -> Result<HrFit> {
    let p = fit.n_components();
    let r = n_products(p);
    let n = ds.n();
    let z = hr_design(fit, ds)?;
    let y = DVector::from_column_slice(ds.y());
    let o = ols(&z, &y)?;
    let a = o.coef.rows(0, r).into_owned();
    let d = z.columns(0, r).into_owned();
    let nf = n as f64;
    let m = d.row_sum().transpose() / nf;
    let g = d.transpose() * &d / nf;
    let tau2 = o.residuals.norm_squared() / nf;

    let quad = &d * &a;
    let qm = quad.mean();
    let spread = quad.iter().map(|v| (v - qm).powi(2)).sum::<f64>().sqrt();
    let ym = y.mean();
    let yscale = y.iter().map(|v| (v - ym).powi(2)).sum::<f64>().sqrt().max(1e-300);
    let u_n = if spread <= 1e-10 * yscale {
        0.0
    } else if tau2 == 0.0 {
        f64::INFINITY
    } else {
        let form = (a.transpose() * (&g - &m * m.transpose()) * &a)[(0, 0)];
        nf / tau2 * form
    };
    Ok(HrFit {
        a_hat: a.iter().copied().collect(),
        b_hat: o.coef.rows(r, p).iter().copied().collect(),
        mu_hat: o.coef[r + p],
        d,
        g_hat: g,
        m_hat: m.iter().copied().collect(),
        tau2,
        u_n,
        df: r,
    })
}

/// `U_n` test of linearity using `p` components.
pub fn hr_test(ds: &FunctionalDataset, p: usize) -> Result<TestResult> {
    if p == 0 {
        return Err(Error::invalid("need at least one component"));
    }
    let cols = n_products(p) + p + 1;
    if cols >= ds.n() {
        return Err(Error::InsufficientSample { needed: cols, available: ds.n() });
    }
    let fit = fit_fpca(ds, Truncation::K(p))?;
    let h = hr_fit(&fit, ds)?;
    let mut warnings = Vec::new();
    if ds.n() <= 10 * h.df {
        warnings.push(format!("n = {} is at most 10 x df = {}; size may be inflated", ds.n(), 10 * h.df));
    }
    if h.u_n < 0.0 {
        warnings.push(format!("U_n = {:.3e} is negative: product covariance is numerically indefinite", h.u_n));
    }
    let chi = ChiSquared::new(h.df as f64).map_err(|e| Error::NumericalFailure(e.to_string()))?;
    let p_value = if h.u_n.is_infinite() { 0.0 } else { chi.sf(h.u_n.max(0.0)) };
    Ok(TestResult {
        method: Method::Hr,
        hypothesis: Hypothesis::Linearity,
        statistic: h.u_n,
        p_value,
        diagnostics: Diagnostics {
            df: Some(h.df as f64),
            variance_components: vec![h.tau2],
            warnings,
            ..Diagnostics::default()
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{generate, Design, SettingId, SimulationSetting};
    use crate::RngStream;
    use proptest::prelude::*;

    fn h1(delta: f64, n: usize, seed: u64) -> FunctionalDataset {
        generate(&SimulationSetting::new(SettingId::H1, delta, n, Design::Dense), RngStream::new(seed, 0)).unwrap()
    }

    #[test]
    fn design_layout() {
        let ds = h1(0.0, 30, 1);
        let fit = fit_fpca(&ds, Truncation::K(3)).unwrap();
        let z = hr_design(&fit, &ds).unwrap();
        assert_eq!(z.ncols(), 10);
        let s = &fit.scores;
        assert!((z[(4, 1)] - 2.0 * s[(4, 0)] * s[(4, 1)]).abs() < 1e-14);
        assert!((z[(4, 0)] - s[(4, 0)] * s[(4, 0)]).abs() < 1e-14);
        assert_eq!(z[(4, 9)], 1.0);

        let mut unit = fit.clone();
        unit.scores.fill(0.0);
        unit.scores[(0, 0)] = 1.0;
        let zu = hr_design(&unit, &ds).unwrap();
        assert_eq!(zu.row(0).columns(0, 6).iter().copied().collect::<Vec<_>>(), vec![1.0, 0.0, 0.0, 0.0, 0.0, 0.0]);

        let small = h1(0.0, 10, 2);
        let f = fit_fpca(&small, Truncation::K(3)).unwrap();
        assert!(matches!(hr_design(&f, &small), Err(Error::InsufficientSample { .. })));
    }

    #[test]
    fn df_and_exact_linear_response() {
        let ds = h1(0.0, 80, 3);
        let fit = fit_fpca(&ds, Truncation::K(3)).unwrap();
        let y: Vec<f64> = (0..80).map(|i| 1.0 + 2.0 * fit.scores[(i, 0)] - fit.scores[(i, 2)]).collect();
        let r = hr_test(&ds.with_response(y).unwrap(), 3).unwrap();
        assert_eq!(r.diagnostics.df, Some(6.0));
        assert_eq!(r.statistic, 0.0);
        assert_eq!(r.p_value, 1.0);
    }

    #[test]
    fn matches_variance_of_quadratic_part() {
        // Â'(Ĝ − M̂M̂')Â is the biased sample variance of the fitted quadratic part.
        let ds = h1(1.0, 120, 4);
        let fit = fit_fpca(&ds, Truncation::K(3)).unwrap();
        let h = hr_fit(&fit, &ds).unwrap();
        let q = &h.d * DVector::from_vec(h.a_hat.clone());
        let m = q.mean();
        let v = q.iter().map(|x| (x - m).powi(2)).sum::<f64>() / 120.0;
        assert!((h.u_n - 120.0 * v / h.tau2).abs() < 1e-8 * h.u_n);
    }

    #[test]
    fn power_grows_with_n() {
        let p100 = hr_test(&h1(1.8, 100, 5), 3).unwrap().p_value;
        let p500 = hr_test(&h1(1.8, 500, 5), 3).unwrap().p_value;
        assert!(p500 <= p100 && p500 < 1e-6, "{p100} {p500}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn invariances(seed in 0u64..200, c in -20f64..20.0, j in 0usize..3) {
            let ds = h1(0.5, 60, seed);
            let fit = fit_fpca(&ds, Truncation::K(3)).unwrap();
            let base = hr_fit(&fit, &ds).unwrap().u_n;
            let flipped = hr_fit(&fit.flip(j), &ds).unwrap().u_n;
            prop_assert!((base - flipped).abs() < 1e-8 * (1.0 + base));
            let shifted = ds.with_response(ds.y().iter().map(|v| v + c).collect()).unwrap();
            let s = hr_fit(&fit, &shifted).unwrap().u_n;
            prop_assert!((base - s).abs() < 1e-7 * (1.0 + base));
        }
    }
}
