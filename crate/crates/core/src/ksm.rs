//! F test of no effect in the regression of `y` on leading FPC scores.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF, FisherSnedecor};

use crate::error::{Error, Result};
use crate::fpca::{fit_fpca, FpcaFit, Truncation};
use crate::funcdata::FunctionalDataset;
use crate::linalg::{ols, with_intercept};
use crate::testing::{Diagnostics, Hypothesis, Method, TestResult};

/// Smallest reported p-value.
pub const P_FLOOR: f64 = 1e-16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KsmCalibration {
    /// `s_n · T_F` against `χ²(s_n)`.
    ChiSquare,
    /// `T_F` against `F(s_n, n − s_n − 1)`.
    F,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KsmConfig {
    pub pve: f64,
    /// Fixed number of components; overrides `pve`.
    pub s_n: Option<usize>,
    pub calibration: KsmCalibration,
}

impl Default for KsmConfig {
    fn default() -> Self {
        Self { pve: 0.95, s_n: None, calibration: KsmCalibration::ChiSquare }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KsmFit {
    pub s_n: usize,
    pub t_f: f64,
    pub df_num: usize,
    pub df_den: usize,
    pub p_value_chi2: f64,
    pub p_value_f: f64,
    pub rss_null: f64,
    pub rss_alt: f64,
}

/// Smallest `s` whose cumulative share of the fit's total variance reaches
/// `pve`, capped at `n − 2`.
pub fn select_sn(fit: &FpcaFit, pve: f64) -> usize {
    let n = fit.scores.nrows();
    let total = fit.total_variance;
    let mut acc = 0.0;
    let mut s = fit.n_components();
    for (j, v) in fit.eigenvalues.iter().enumerate() {
        acc += v;
        if acc >= pve * total * (1.0 - 1e-12) {
            s = j + 1;
            break;
        }
    }
    s.min(n.saturating_sub(2)).max(1)
}

/// The F statistic for the first `s_n` score columns of `fit`.
pub fn ksm_fit(fit: &FpcaFit, y: &[f64], s_n: usize) -> Result<KsmFit> {
    let n = y.len();
    if fit.scores.nrows() != n {
        return Err(Error::invalid(format!("{} score rows for {n} responses", fit.scores.nrows())));
    }
    if s_n == 0 || s_n > fit.n_components() {
        return Err(Error::invalid(format!("s_n = {s_n} outside 1..={}", fit.n_components())));
    }
    if n <= s_n + 1 {
        return Err(Error::InsufficientSample { needed: s_n + 1, available: n });
    }
    let yv = DVector::from_column_slice(y);
    let ybar = yv.mean();
    let rss_null: f64 = yv.iter().map(|v| (v - ybar).powi(2)).sum();
    let design = with_intercept(&fit.scores.columns(0, s_n).into_owned());
    let rss_alt = ols(&design, &yv)?.residuals.norm_squared().min(rss_null);
    let df_den = n - s_n - 1;
    let t_f = if rss_null == 0.0 {
        0.0
    } else if rss_alt <= 1e-28 * rss_null {
        f64::INFINITY
    } else {
        ((rss_null - rss_alt) / s_n as f64) / (rss_alt / df_den as f64)
    };
    let (p_chi, p_f) = if t_f.is_infinite() {
        (P_FLOOR, P_FLOOR)
    } else {
        let chi = ChiSquared::new(s_n as f64).map_err(|e| Error::NumericalFailure(e.to_string()))?;
        let f = FisherSnedecor::new(s_n as f64, df_den as f64).map_err(|e| Error::NumericalFailure(e.to_string()))?;
        (chi.sf(s_n as f64 * t_f).max(P_FLOOR), f.sf(t_f).max(P_FLOOR))
    };
    Ok(KsmFit { s_n, t_f, df_num: s_n, df_den, p_value_chi2: p_chi, p_value_f: p_f, rss_null, rss_alt })
}

/// Test from a precomputed FPCA, for example conditional scores of sparse data.
pub fn ksm_from_fit(fit: &FpcaFit, y: &[f64], config: &KsmConfig) -> Result<TestResult> {
    let s_n = match config.s_n {
        Some(s) => s,
        None => select_sn(fit, config.pve),
    };
    let k = ksm_fit(fit, y, s_n)?;
    let (p_value, alt) = match config.calibration {
        KsmCalibration::ChiSquare => (k.p_value_chi2, k.p_value_f),
        KsmCalibration::F => (k.p_value_f, k.p_value_chi2),
    };
    Ok(TestResult {
        method: Method::Ksm,
        hypothesis: Hypothesis::Nullity,
        statistic: k.t_f,
        p_value,
        diagnostics: Diagnostics {
            df: Some(k.df_num as f64),
            df_den: Some(k.df_den as f64),
            alt_p_value: Some(alt),
            ..Diagnostics::default()
        },
    })
}

pub fn ksm_test(ds: &FunctionalDataset, config: &KsmConfig) -> Result<TestResult> {
    if !(config.pve > 0.0 && config.pve <= 1.0) {
        return Err(Error::invalid(format!("pve must be in (0, 1], got {}", config.pve)));
    }
    let fit = fit_fpca(ds, Truncation::Pve(1.0))?;
    ksm_from_fit(&fit, ds.y(), config)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{generate, Design, SettingId, SimulationSetting};
    use crate::funcdata::make_uniform_grid;
    use crate::RngStream;
    use nalgebra::DMatrix;
    use proptest::prelude::*;

    fn synthetic_fit(eigs: &[f64], n: usize) -> FpcaFit {
        let k = eigs.len();
        FpcaFit {
            grid: make_uniform_grid(5, 0.0, 1.0).unwrap(),
            mean: vec![0.0; 5],
            eigenfunctions: DMatrix::zeros(5, k),
            eigenvalues: eigs.to_vec(),
            scores: DMatrix::zeros(n, k),
            pve: 1.0,
            total_variance: eigs.iter().sum(),
        }
    }

    #[test]
    fn sn_selection() {
        assert_eq!(select_sn(&synthetic_fit(&[8.0, 2.0, 0.889, 0.5], 100), 0.95), 3);
        assert_eq!(select_sn(&synthetic_fit(&[8.0, 2.0, 0.889, 0.5], 100), 1.0), 4);
        assert_eq!(select_sn(&synthetic_fit(&[3.0], 100), 0.5), 1);
        assert_eq!(select_sn(&synthetic_fit(&[3.0], 100), 0.99), 1);
        assert_eq!(select_sn(&synthetic_fit(&[1.0; 10], 6), 1.0), 4);
    }

    fn g0(delta: f64, n: usize, seed: u64) -> FunctionalDataset {
        generate(&SimulationSetting::new(SettingId::G0, delta, n, Design::Dense), RngStream::new(seed, 0)).unwrap()
    }

    /// Textbook F statistic from two independent normal-equation solves.
    fn direct_f(scores: &DMatrix<f64>, y: &[f64], s: usize) -> f64 {
        let n = y.len();
        let x = DMatrix::from_fn(n, s + 1, |i, j| if j == 0 { 1.0 } else { scores[(i, j - 1)] });
        let yv = DVector::from_column_slice(y);
        let beta = (x.transpose() * &x).lu().solve(&(x.transpose() * &yv)).unwrap();
        let rss1 = (&yv - &x * beta).norm_squared();
        let m = yv.mean();
        let rss0: f64 = y.iter().map(|v| (v - m).powi(2)).sum();
        ((rss0 - rss1) / s as f64) / (rss1 / (n - s - 1) as f64)
    }

    #[test]
    fn equals_direct_f() {
        for seed in 0..20 {
            let ds = g0(0.3, 40, seed);
            let fit = fit_fpca(&ds, Truncation::Pve(1.0)).unwrap();
            let s = select_sn(&fit, 0.95);
            let k = ksm_fit(&fit, ds.y(), s).unwrap();
            let d = direct_f(&fit.scores, ds.y(), s);
            assert!((k.t_f - d).abs() < 1e-10, "{} vs {d}", k.t_f);
            assert!(k.rss_alt <= k.rss_null);
        }
    }

    #[test]
    fn exact_response_floors_p() {
        let ds = g0(0.0, 50, 3);
        let fit = fit_fpca(&ds, Truncation::Pve(1.0)).unwrap();
        let y: Vec<f64> = (0..50).map(|i| 2.0 + fit.scores[(i, 0)]).collect();
        let r = ksm_from_fit(&fit, &y, &KsmConfig::default()).unwrap();
        assert!(r.statistic.is_infinite());
        assert_eq!(r.p_value, P_FLOOR);
    }

    #[test]
    fn insufficient() {
        let fit = synthetic_fit(&[1.0, 1.0, 1.0], 4);
        assert!(matches!(ksm_fit(&fit, &[0.0; 4], 3), Err(Error::InsufficientSample { .. })));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn scale_and_sign_invariance(seed in 0u64..300, c in 0.01f64..100.0, j in 0usize..3) {
            let ds = g0(0.2, 60, seed);
            let fit = fit_fpca(&ds, Truncation::Pve(1.0)).unwrap();
            let base = ksm_fit(&fit, ds.y(), 3).unwrap().t_f;
            let scaled: Vec<f64> = ds.y().iter().map(|v| c * v).collect();
            prop_assert!((ksm_fit(&fit, &scaled, 3).unwrap().t_f - base).abs() < 1e-8 * (1.0 + base));
            prop_assert!((ksm_fit(&fit.flip(j), ds.y(), 3).unwrap().t_f - base).abs() < 1e-8 * (1.0 + base));
        }
    }
}
