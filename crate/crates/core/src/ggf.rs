//! Projected Cramér-von Mises test with wild-bootstrap calibration.
//!
//! Curves are represented by their coordinates in a `p`-dimensional
//! orthonormal basis: an `L²`-orthonormalized B-spline basis, or the leading
//! functional principal components. For a direction `γ` on the unit sphere of
//! that coordinate space, each curve projects to `u_i = ⟨x_i, γ⟩`, and the
//! residual-marked empirical process `R(u) = n^{-1/2} Σ ε_i 1{u_i ≤ u}` is
//! integrated in square against the empirical distribution of the `u_i` and
//! the uniform measure on directions. The statistic is a quadratic form
//! `n⁻² εᵀ A ε` in the residuals, where `A_ik` is the expected number of
//! points `r` with `u_r ≥ max(u_i, u_k)`. `A` depends on the curves only, so
//! it is built once and reused for every bootstrap round.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flm::{basis_design, flm_basis, FlmConfig, NullModel, NullResiduals, DEFAULT_P};
use crate::fpca::{fit_fpca, Truncation};
use crate::funcdata::FunctionalDataset;
use crate::linalg::with_intercept;
use crate::rng::RngStream;
use crate::testing::{Diagnostics, Hypothesis, Method, TestResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PcvmRoute {
    /// Average over `n_proj` random directions.
    MonteCarlo,
    /// Exact expectation over directions from pairwise angles.
    AMatrix,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Multipliers {
    /// Two-point law with mean 0 and variance 1 putting mass
    /// `(5 + √5)/10` on `(1 − √5)/2`.
    Golden,
    Rademacher,
}

/// Basis for the linear fit and the projection coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GgfBasis {
    #[default]
    BSpline,
    /// Leading `p` principal components of the curves.
    Fpc,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PcvmStatistic {
    pub value: f64,
    pub p: usize,
    pub route: PcvmRoute,
    pub n_projections: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GgfConfig {
    pub bootstrap: usize,
    pub p: usize,
    pub n_proj: usize,
    pub route: PcvmRoute,
    pub multipliers: Multipliers,
    pub null_residuals: NullResiduals,
    pub basis: GgfBasis,
}

impl Default for GgfConfig {
    fn default() -> Self {
        Self {
            bootstrap: 500,
            p: DEFAULT_P,
            n_proj: 1000,
            route: PcvmRoute::MonteCarlo,
            multipliers: Multipliers::Golden,
            null_residuals: NullResiduals::Centered,
            basis: GgfBasis::BSpline,
        }
    }
}

pub const MIN_BOOTSTRAP: usize = 100;

/// `n_proj` directions drawn uniformly from the unit sphere in `R^p`,
/// one per row.
pub fn sample_directions(p: usize, n_proj: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let mut g = DMatrix::zeros(n_proj, p);
    for r in 0..n_proj {
        loop {
            let v: Vec<f64> = (0..p).map(|_| rng.sample(StandardNormal)).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 1e-12 {
                for (c, x) in v.iter().enumerate() {
                    g[(r, c)] = x / norm;
                }
                break;
            }
        }
    }
    g
}

fn check_inputs(residuals: &[f64], coef_scores: &DMatrix<f64>) -> Result<()> {
    if residuals.is_empty() {
        return Err(Error::invalid("no residuals"));
    }
    if coef_scores.nrows() != residuals.len() {
        return Err(Error::invalid(format!(
            "{} residuals but {} score rows",
            residuals.len(),
            coef_scores.nrows()
        )));
    }
    if coef_scores.ncols() == 0 {
        return Err(Error::invalid("projection dimension must be >= 1"));
    }
    Ok(())
}

/// `A` averaged over the given directions: `A_ik = mean_γ min(c_i, c_k)` with
/// `c_i = #{r : u_r ≥ u_i}`.
pub fn a_matrix_from_directions(coef_scores: &DMatrix<f64>, directions: &DMatrix<f64>) -> DMatrix<f64> {
    let n = coef_scores.nrows();
    let proj = coef_scores * directions.transpose();
    let mut a = DMatrix::<f64>::zeros(n, n);
    let mut order: Vec<usize> = (0..n).collect();
    let mut counts = vec![0.0f64; n];
    for d in 0..proj.ncols() {
        let u = proj.column(d);
        order.sort_unstable_by(|&x, &y| u[x].total_cmp(&u[y]));
        // Walk from the top so ties share the larger count.
        let mut r = n;
        while r > 0 {
            let mut s = r - 1;
            while s > 0 && u[order[s - 1]] == u[order[r - 1]] {
                s -= 1;
            }
            let c = (n - s) as f64;
            for &idx in &order[s..r] {
                counts[idx] = c;
            }
            r = s;
        }
        for k in 0..n {
            let ck = counts[k];
            let col = a.column_mut(k);
            for (i, v) in col.into_iter().enumerate() {
                *v += counts[i].min(ck);
            }
        }
    }
    a / proj.ncols() as f64
}

/// Exact `A` for directions uniform on the sphere.
///
/// `A_ik = Σ_r P(⟨x_r − x_i, γ⟩ ≥ 0, ⟨x_r − x_k, γ⟩ ≥ 0)`. For two nonzero
/// vectors at angle `θ` that probability is `(π − θ)/(2π)`; a zero vector
/// makes its constraint vacuous.
pub fn a_matrix_exact(coef_scores: &DMatrix<f64>) -> DMatrix<f64> {
    let n = coef_scores.nrows();
    let p = coef_scores.ncols();
    let x = coef_scores;
    let mut a = DMatrix::<f64>::zeros(n, n);
    let mut diff = DMatrix::<f64>::zeros(n, p);
    let mut norm = vec![0.0; n];
    for r in 0..n {
        for i in 0..n {
            let mut s = 0.0;
            for c in 0..p {
                let d = x[(r, c)] - x[(i, c)];
                diff[(i, c)] = d;
                s += d * d;
            }
            norm[i] = s.sqrt();
        }
        let scale = norm.iter().fold(0.0f64, |m, v| m.max(*v));
        let zero = |v: f64| v <= 1e-14 * scale.max(f64::MIN_POSITIVE);
        for i in 0..n {
            for k in i..n {
                let prob = match (zero(norm[i]), zero(norm[k])) {
                    (true, true) => 1.0,
                    (true, false) | (false, true) => 0.5,
                    (false, false) => {
                        let dot: f64 = (0..p).map(|c| diff[(i, c)] * diff[(k, c)]).sum();
                        let cos = (dot / (norm[i] * norm[k])).clamp(-1.0, 1.0);
                        (std::f64::consts::PI - cos.acos()) / (2.0 * std::f64::consts::PI)
                    }
                };
                a[(i, k)] += prob;
                if k != i {
                    a[(k, i)] += prob;
                }
            }
        }
    }
    a
}

fn quad_form(a: &DMatrix<f64>, e: &DVector<f64>) -> f64 {
    let n = e.len() as f64;
    e.dot(&(a * e)) / (n * n)
}

/// Statistic averaged over `n_proj` random directions.
pub fn pcvm_monte_carlo(
    residuals: &[f64],
    coef_scores: &DMatrix<f64>,
    n_proj: usize,
    stream: RngStream,
) -> Result<PcvmStatistic> {
    check_inputs(residuals, coef_scores)?;
    if n_proj == 0 {
        return Err(Error::invalid("n_proj must be >= 1"));
    }
    let dirs = sample_directions(coef_scores.ncols(), n_proj, &mut stream.rng());
    let a = a_matrix_from_directions(coef_scores, &dirs);
    Ok(PcvmStatistic {
        value: quad_form(&a, &DVector::from_column_slice(residuals)).max(0.0),
        p: coef_scores.ncols(),
        route: PcvmRoute::MonteCarlo,
        n_projections: n_proj,
    })
}

/// Statistic with the exact direction average.
pub fn pcvm_a_matrix(residuals: &[f64], coef_scores: &DMatrix<f64>) -> Result<PcvmStatistic> {
    check_inputs(residuals, coef_scores)?;
    let a = a_matrix_exact(coef_scores);
    Ok(PcvmStatistic {
        value: quad_form(&a, &DVector::from_column_slice(residuals)).max(0.0),
        p: coef_scores.ncols(),
        route: PcvmRoute::AMatrix,
        n_projections: 0,
    })
}

/// Coordinates of the curves in the orthonormalized `p`-dimensional basis.
pub fn coef_scores(ds: &FunctionalDataset, p: usize) -> Result<DMatrix<f64>> {
    let basis = flm_basis(ds, p)?;
    let mut wb = basis.clone();
    for (j, mut row) in wb.row_iter_mut().enumerate() {
        row *= ds.grid().weights()[j];
    }
    let gram = basis.transpose() * wb;
    let r = gram
        .cholesky()
        .ok_or_else(|| Error::NumericalFailure("basis Gram matrix is not positive definite".into()))?
        .l()
        .transpose();
    let design = basis_design(ds, &basis);
    // X W B R⁻¹, solved as Rᵀ Yᵀ = (X W B)ᵀ.
    let sol = r
        .transpose()
        .solve_lower_triangular(&design.transpose())
        .ok_or_else(|| Error::NumericalFailure("singular basis Gram factor".into()))?;
    Ok(sol.transpose())
}

fn draw_multipliers(kind: Multipliers, n: usize, rng: &mut ChaCha8Rng) -> DVector<f64> {
    let s5 = 5f64.sqrt();
    let (lo, hi, p_lo) = match kind {
        Multipliers::Golden => ((1.0 - s5) / 2.0, (1.0 + s5) / 2.0, (5.0 + s5) / 10.0),
        Multipliers::Rademacher => (-1.0, 1.0, 0.5),
    };
    DVector::from_fn(n, |_, _| if rng.random::<f64>() < p_lo { lo } else { hi })
}

/// Bootstrap test of `hypothesis` on `ds`.
pub fn ggf_test(
    ds: &FunctionalDataset,
    hypothesis: Hypothesis,
    config: &GgfConfig,
    stream: RngStream,
) -> Result<TestResult> {
    if config.bootstrap < MIN_BOOTSTRAP {
        return Err(Error::invalid(format!("need at least {MIN_BOOTSTRAP} bootstrap rounds, got {}", config.bootstrap)));
    }
    let flm_cfg = FlmConfig { p: config.p, null_residuals: config.null_residuals };
    let (null, scores) = match config.basis {
        GgfBasis::BSpline => (NullModel::new(ds, hypothesis, &flm_cfg)?, coef_scores(ds, config.p)?),
        GgfBasis::Fpc => {
            let fit = fit_fpca(ds, Truncation::K(config.p))?;
            if fit.n_components() < config.p {
                return Err(Error::SingularDesign(format!(
                    "curves span {} principal components, need {}",
                    fit.n_components(),
                    config.p
                )));
            }
            let null = match hypothesis {
                Hypothesis::Linearity => NullModel::from_design(&with_intercept(&fit.scores), ds.y())?,
                Hypothesis::Nullity => NullModel::new(ds, hypothesis, &flm_cfg)?,
            };
            (null, fit.scores)
        }
    };
    let a = match config.route {
        PcvmRoute::MonteCarlo => {
            if config.n_proj == 0 {
                return Err(Error::invalid("n_proj must be >= 1"));
            }
            let dirs = sample_directions(config.p, config.n_proj, &mut stream.substream(0).rng());
            a_matrix_from_directions(&scores, &dirs)
        }
        PcvmRoute::AMatrix => a_matrix_exact(&scores),
    };

    let y = DVector::from_column_slice(ds.y());
    let mut resid = null.residuals.clone();
    // An exact null fit leaves only rounding noise; treat it as zero.
    if resid.norm() <= 1e-10 * y.norm().max(1.0) {
        resid.fill(0.0);
    }
    let stat = quad_form(&a, &resid).max(0.0);

    let boot = stream.substream(1);
    let outcomes: Vec<Result<bool>> = (0..config.bootstrap)
        .into_par_iter()
        .map(|b| {
            let mut rng = boot.substream(b as u64).rng();
            let v = draw_multipliers(config.multipliers, resid.len(), &mut rng);
            let e_star = null.residualize(&resid.component_mul(&v));
            let t = quad_form(&a, &e_star).max(0.0);
            if !t.is_finite() {
                return Err(Error::BootstrapFailure {
                    round: b,
                    source: Box::new(Error::NumericalFailure("non-finite bootstrap statistic".into())),
                });
            }
            Ok(t >= stat)
        })
        .collect();
    let mut exceed = 0usize;
    for o in outcomes {
        if o? {
            exceed += 1;
        }
    }
    let p_value = (1 + exceed) as f64 / (config.bootstrap + 1) as f64;
    Ok(TestResult {
        method: Method::Ggf,
        hypothesis,
        statistic: stat,
        p_value,
        diagnostics: Diagnostics {
            df: Some(config.p as f64),
            resamples: Some(config.bootstrap),
            ..Diagnostics::default()
        },
    })
}
