//! Functional principal components for dense and sparsely observed curves.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::funcdata::{FunctionalDataset, Grid, SparseFunctionalDataset};
use crate::linalg::sym_eigen_desc;

/// Relative cutoff below which eigenvalues are treated as zero.
const EIGEN_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Truncation {
    /// Smallest number of components whose cumulative share reaches the value.
    Pve(f64),
    /// Fixed number of components.
    K(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct FpcaFit {
    pub grid: Grid,
    pub mean: Vec<f64>,
    /// Grid length × p; columns are quadrature-orthonormal.
    pub eigenfunctions: DMatrix<f64>,
    /// Nonincreasing.
    pub eigenvalues: Vec<f64>,
    /// n × p.
    pub scores: DMatrix<f64>,
    /// Share of the total positive spectrum retained.
    pub pve: f64,
    /// Sum of all positive eigenvalues.
    pub total_variance: f64,
}

impl FpcaFit {
    pub fn n_components(&self) -> usize {
        self.eigenvalues.len()
    }

    /// `mean + scores · eigenfunctionsᵀ`, one row per subject.
    pub fn reconstruct(&self) -> DMatrix<f64> {
        let mut out = &self.scores * self.eigenfunctions.transpose();
        for mut row in out.row_iter_mut() {
            for (v, m) in row.iter_mut().zip(&self.mean) {
                *v += m;
            }
        }
        out
    }

    /// Keeps the first `k` components.
    pub fn truncate(&self, k: usize) -> Result<Self> {
        if k == 0 || k > self.n_components() {
            return Err(Error::invalid(format!("cannot keep {k} of {} components", self.n_components())));
        }
        let kept: f64 = self.eigenvalues[..k].iter().sum();
        Ok(Self {
            grid: self.grid.clone(),
            mean: self.mean.clone(),
            eigenfunctions: self.eigenfunctions.columns(0, k).into_owned(),
            eigenvalues: self.eigenvalues[..k].to_vec(),
            scores: self.scores.columns(0, k).into_owned(),
            pve: kept / self.total_variance,
            total_variance: self.total_variance,
        })
    }

    /// Flips component `j` (eigenfunction and score column).
    pub fn flip(&self, j: usize) -> Self {
        let mut out = self.clone();
        out.eigenfunctions.column_mut(j).neg_mut();
        out.scores.column_mut(j).neg_mut();
        out
    }
}

/// Number of leading components whose cumulative share of `eigenvalues`
/// reaches `pve`.
pub(crate) fn count_for_pve(eigenvalues: &[f64], pve: f64) -> usize {
    let total: f64 = eigenvalues.iter().sum();
    let mut acc = 0.0;
    for (j, v) in eigenvalues.iter().enumerate() {
        acc += v;
        if acc >= pve * total * (1.0 - 1e-12) {
            return j + 1;
        }
    }
    eigenvalues.len()
}

fn check_truncation(t: Truncation) -> Result<()> {
    match t {
        Truncation::Pve(p) if !(p > 0.0 && p <= 1.0) => Err(Error::invalid(format!("pve must be in (0, 1], got {p}"))),
        Truncation::K(0) => Err(Error::invalid("k must be >= 1")),
        _ => Ok(()),
    }
}

/// Eigenpairs of the covariance operator represented by `cov` on `grid`,
/// returned as (positive eigenvalues, quadrature-orthonormal eigenfunctions).
fn operator_eigen(cov: &DMatrix<f64>, grid: &Grid) -> (Vec<f64>, DMatrix<f64>) {
    let sw: Vec<f64> = grid.weights().iter().map(|w| w.sqrt()).collect();
    let m = grid.len();
    let a = DMatrix::from_fn(m, m, |i, j| sw[i] * cov[(i, j)] * sw[j]);
    let (vals, vecs) = sym_eigen_desc(&a);
    let top = vals[0];
    if !(top > 0.0) {
        return (vec![], DMatrix::zeros(m, 0));
    }
    let k = vals.iter().take_while(|&&v| v > EIGEN_TOL * top).count();
    let mut phi = DMatrix::zeros(m, k);
    for j in 0..k {
        for i in 0..m {
            phi[(i, j)] = vecs[(i, j)] / sw[i];
        }
    }
    (vals.iter().take(k).copied().collect(), phi)
}

/// Dense FPCA via the quadrature-weighted sample covariance.
pub fn fit_fpca(ds: &FunctionalDataset, truncation: Truncation) -> Result<FpcaFit> {
    check_truncation(truncation)?;
    let n = ds.n();
    if n < 2 {
        return Err(Error::invalid("FPCA needs at least two curves"));
    }
    let (centered, mean) = crate::funcdata::center_curves(ds);
    let xc = centered.curves();
    let cov = xc.transpose() * xc / (n as f64 - 1.0);
    let scale = ds.curves().iter().fold(0.0f64, |a, v| a.max(v * v)).max(f64::MIN_POSITIVE);
    let (vals, phi) = operator_eigen(&cov, ds.grid());
    if vals.is_empty() || vals[0] <= 1e-14 * scale * ds.grid().domain_length() {
        return Err(Error::DegenerateCovariance("curves have no variation".into()));
    }
    let total: f64 = vals.iter().sum();
    let k = match truncation {
        Truncation::Pve(p) => count_for_pve(&vals, p),
        Truncation::K(k) => {
            if k > vals.len() {
                return Err(Error::invalid(format!("requested {k} components, only {} are positive", vals.len())));
            }
            k
        }
    };
    let w = DVector::from_column_slice(ds.grid().weights());
    let mut wphi = phi.columns(0, k).into_owned();
    for (i, mut row) in wphi.row_iter_mut().enumerate() {
        row *= w[i];
    }
    let scores = xc * wphi;
    Ok(FpcaFit {
        grid: ds.grid().clone(),
        mean,
        eigenfunctions: phi.columns(0, k).into_owned(),
        eigenvalues: vals[..k].to_vec(),
        scores,
        pve: vals[..k].iter().sum::<f64>() / total,
        total_variance: total,
    })
}

/// Flips each component so its quadrature inner product with the matching
/// column of `reference` (grid length × q) is nonnegative.
pub fn align_signs(fit: &FpcaFit, reference: &DMatrix<f64>) -> Result<FpcaFit> {
    if reference.nrows() != fit.grid.len() {
        return Err(Error::invalid("reference curves do not match the grid"));
    }
    let w = fit.grid.weights();
    let mut out = fit.clone();
    for j in 0..fit.n_components().min(reference.ncols()) {
        let ip: f64 = (0..w.len()).map(|i| w[i] * fit.eigenfunctions[(i, j)] * reference[(i, j)]).sum();
        if ip < 0.0 {
            out = out.flip(j);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SparseOptions {
    pub pve: f64,
    /// Kernel half-width; `None` uses [`default_bandwidth`].
    pub bandwidth: Option<f64>,
    /// Measurement-error variance; `None` estimates it from the diagonal.
    pub noise_var: Option<f64>,
}

impl Default for SparseOptions {
    fn default() -> Self {
        Self { pve: 0.99, bandwidth: None, noise_var: None }
    }
}

/// Sparse FPCA: smoothed mean and covariance, conditional-expectation scores.
#[derive(Debug, Clone)]
pub struct SparseFpca {
    pub fit: FpcaFit,
    pub noise_var: f64,
}

const MIN_DISTINCT_POINTS: usize = 10;
const NOISE_FLOOR: f64 = 1e-8;

fn epanechnikov(u: f64) -> f64 {
    if u.abs() < 1.0 {
        0.75 * (1.0 - u * u)
    } else {
        0.0
    }
}

/// Local-linear estimate at each target point from binned sums: `counts[j]`
/// observations at `t[j]` with total `sums[j]`.
fn local_linear_1d(t: &[f64], counts: &[f64], sums: &[f64], h: f64) -> Result<Vec<f64>> {
    t.iter()
        .map(|&t0| {
            let (mut s0, mut s1, mut s2, mut r0, mut r1) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for j in 0..t.len() {
                if counts[j] == 0.0 {
                    continue;
                }
                let d = t[j] - t0;
                let k = epanechnikov(d / h);
                if k == 0.0 {
                    continue;
                }
                s0 += k * counts[j];
                s1 += k * counts[j] * d;
                s2 += k * counts[j] * d * d;
                r0 += k * sums[j];
                r1 += k * sums[j] * d;
            }
            let det = s0 * s2 - s1 * s1;
            if s0 <= 0.0 {
                return Err(Error::ImputationFailure(format!("no observations within bandwidth of {t0}")));
            }
            if det <= 1e-12 * s0 * s2.max(f64::MIN_POSITIVE) {
                Ok(r0 / s0)
            } else {
                Ok((s2 * r0 - s1 * r1) / det)
            }
        })
        .collect()
}

/// Epanechnikov half-width `domain · clamp(2/m̄, 0.02, 0.2)`, with `m̄` the
/// mean number of observations per subject.
pub fn default_bandwidth(sds: &SparseFunctionalDataset, target: &Grid) -> f64 {
    let mean_count = sds.counts().iter().sum::<usize>() as f64 / sds.n().max(1) as f64;
    target.domain_length() * (2.0 / mean_count).clamp(0.02, 0.2)
}

/// Fits FPCA to sparse curves, with all functions represented on `target`.
pub fn fit_sparse_fpca(sds: &SparseFunctionalDataset, target: &Grid, opts: SparseOptions) -> Result<SparseFpca> {
    if !(opts.pve > 0.0 && opts.pve <= 1.0) {
        return Err(Error::invalid(format!("pve must be in (0, 1], got {}", opts.pve)));
    }
    let m = target.len();
    let t = target.points();
    let h = opts.bandwidth.unwrap_or_else(|| default_bandwidth(sds, target));
    if !(h > 0.0) {
        return Err(Error::invalid("bandwidth must be positive"));
    }
    let bins: Vec<Vec<(usize, f64)>> = sds
        .obs()
        .iter()
        .map(|s| s.iter().map(|&(p, x)| (target.nearest_index(p), x)).collect())
        .collect();

    let mut counts = vec![0.0; m];
    let mut sums = vec![0.0; m];
    for s in &bins {
        for &(j, x) in s {
            counts[j] += 1.0;
            sums[j] += x;
        }
    }
    let distinct = counts.iter().filter(|&&c| c > 0.0).count();
    if distinct < MIN_DISTINCT_POINTS {
        return Err(Error::ImputationFailure(format!(
            "pooled observations cover {distinct} distinct points, need {MIN_DISTINCT_POINTS}"
        )));
    }
    let mean = local_linear_1d(t, &counts, &sums, h)?;

    // Raw covariance products, off-diagonal pairs only.
    let mut pair_n = DMatrix::<f64>::zeros(m, m);
    let mut pair_s = DMatrix::<f64>::zeros(m, m);
    let mut diag_s = vec![0.0; m];
    for s in &bins {
        for (a, &(j, xj)) in s.iter().enumerate() {
            let rj = xj - mean[j];
            diag_s[j] += rj * rj;
            for &(k, xk) in &s[a + 1..] {
                let rk = xk - mean[k];
                pair_n[(j, k)] += 1.0;
                pair_n[(k, j)] += 1.0;
                pair_s[(j, k)] += rj * rk;
                pair_s[(k, j)] += rj * rk;
            }
        }
    }
    let cov = smooth_surface(t, &pair_n, &pair_s, h)?;
    let cov = (&cov + cov.transpose()) * 0.5;

    let noise_var = match opts.noise_var {
        Some(v) if v >= 0.0 => v.max(NOISE_FLOOR),
        Some(v) => return Err(Error::invalid(format!("noise variance must be >= 0, got {v}"))),
        None => {
            let diag = local_linear_1d(t, &counts, &diag_s, h)?;
            // Average gap over the middle half of the domain, away from boundary bias.
            let (lo, hi) = (target.start() + 0.25 * target.domain_length(), target.end() - 0.25 * target.domain_length());
            let (mut acc, mut len) = (0.0, 0.0);
            for j in 0..m {
                if t[j] >= lo && t[j] <= hi {
                    acc += target.weights()[j] * (diag[j] - cov[(j, j)]);
                    len += target.weights()[j];
                }
            }
            (acc / len).max(NOISE_FLOOR)
        }
    };

    let (vals, phi) = operator_eigen(&cov, target);
    if vals.is_empty() {
        return Err(Error::ImputationFailure("smoothed covariance has no positive spectrum".into()));
    }
    let total: f64 = vals.iter().sum();
    let k = count_for_pve(&vals, opts.pve);
    let phi = phi.columns(0, k).into_owned();
    let lambda = &vals[..k];

    let n = sds.n();
    let mut scores = DMatrix::zeros(n, k);
    for (i, s) in bins.iter().enumerate() {
        let mi = s.len();
        let phi_i = DMatrix::from_fn(mi, k, |r, c| phi[(s[r].0, c)]);
        let resid = DVector::from_fn(mi, |r, _| s[r].1 - mean[s[r].0]);
        let xi = if mi <= k {
            let mut sigma = &phi_i * DMatrix::from_diagonal(&DVector::from_column_slice(lambda)) * phi_i.transpose();
            for r in 0..mi {
                sigma[(r, r)] += noise_var;
            }
            let sol = sigma
                .cholesky()
                .ok_or_else(|| Error::ImputationFailure(format!("subject {i}: covariance not positive definite")))?
                .solve(&resid);
            let proj = phi_i.transpose() * sol;
            DVector::from_fn(k, |c, _| lambda[c] * proj[c])
        } else {
            let mut a = phi_i.transpose() * &phi_i;
            for c in 0..k {
                a[(c, c)] += noise_var / lambda[c];
            }
            a.cholesky()
                .ok_or_else(|| Error::ImputationFailure(format!("subject {i}: score system not positive definite")))?
                .solve(&(phi_i.transpose() * resid))
        };
        scores.set_row(i, &xi.transpose());
    }

    Ok(SparseFpca {
        fit: FpcaFit {
            grid: target.clone(),
            mean,
            eigenfunctions: phi,
            eigenvalues: lambda.to_vec(),
            scores,
            pve: lambda.iter().sum::<f64>() / total,
            total_variance: total,
        },
        noise_var,
    })
}

/// Product-kernel local-linear smoother of binned pair sums, evaluated on the
/// full grid. All moment sums are formed as `K_a · N · K_bᵀ` matrix products.
fn smooth_surface(t: &[f64], pair_n: &DMatrix<f64>, pair_s: &DMatrix<f64>, h: f64) -> Result<DMatrix<f64>> {
    let m = t.len();
    let kern = |pow: i32| DMatrix::from_fn(m, m, |s, j| {
        let d = t[j] - t[s];
        epanechnikov(d / h) * d.powi(pow)
    });
    let k0 = kern(0);
    let k1 = kern(1);
    let k2 = kern(2);
    let n0 = pair_n * k0.transpose();
    let n1 = pair_n * k1.transpose();
    let n2 = pair_n * k2.transpose();
    let s0 = pair_s * k0.transpose();
    let s1 = pair_s * k1.transpose();
    let m00 = &k0 * &n0;
    let m10 = &k1 * &n0;
    let m01 = &k0 * &n1;
    let m20 = &k2 * &n0;
    let m02 = &k0 * &n2;
    let m11 = &k1 * &n1;
    let r00 = &k0 * &s0;
    let r10 = &k1 * &s0;
    let r01 = &k0 * &s1;
    let mut out = DMatrix::zeros(m, m);
    for a in 0..m {
        for b in 0..m {
            if m00[(a, b)] <= 0.0 {
                return Err(Error::ImputationFailure(format!(
                    "no observation pairs near ({}, {})",
                    t[a], t[b]
                )));
            }
            let sys = nalgebra::Matrix3::new(
                m00[(a, b)], m10[(a, b)], m01[(a, b)],
                m10[(a, b)], m20[(a, b)], m11[(a, b)],
                m01[(a, b)], m11[(a, b)], m02[(a, b)],
            );
            let rhs = nalgebra::Vector3::new(r00[(a, b)], r10[(a, b)], r01[(a, b)]);
            out[(a, b)] = match sys.lu().solve(&rhs) {
                Some(sol) if sol[0].is_finite() => sol[0],
                _ => r00[(a, b)] / m00[(a, b)],
            };
        }
    }
    Ok(out)
}

/// Reconstructs sparse curves on `target` from a sparse FPCA at `pve`.
pub fn impute_sparse(sds: &SparseFunctionalDataset, target: &Grid, pve: f64) -> Result<FunctionalDataset> {
    impute_sparse_with(sds, target, SparseOptions { pve, ..SparseOptions::default() })
}

pub fn impute_sparse_with(sds: &SparseFunctionalDataset, target: &Grid, opts: SparseOptions) -> Result<FunctionalDataset> {
    let sf = fit_sparse_fpca(sds, target, opts)?;
    FunctionalDataset::new(sds.y().to_vec(), sf.fit.reconstruct(), target.clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{generate, sparsify, Design, SettingId, SimulationSetting};
    use crate::funcdata::{inner_product, make_uniform_grid};
    use crate::RngStream;
    use proptest::prelude::*;
    use rand::Rng;
    use rand_distr::StandardNormal;
    use std::f64::consts::PI;

    fn rank_one(n: usize) -> (FunctionalDataset, Vec<f64>, Vec<f64>) {
        let g = make_uniform_grid(101, 0.0, 1.0).unwrap();
        let phi: Vec<f64> = g.points().iter().map(|t| 2f64.sqrt() * (PI * t).sin()).collect();
        let mut rng = RngStream::new(4, 0).rng();
        let xi: Vec<f64> = (0..n).map(|_| 1.5 * rng.sample::<f64, _>(StandardNormal)).collect();
        let curves = DMatrix::from_fn(n, 101, |i, j| xi[i] * phi[j]);
        (FunctionalDataset::new(vec![0.0; n], curves, g).unwrap(), phi, xi)
    }

    #[test]
    fn rank_one_recovery() {
        let (ds, phi, xi) = rank_one(200);
        let fit = fit_fpca(&ds, Truncation::K(1)).unwrap();
        let f: Vec<f64> = fit.eigenfunctions.column(0).iter().copied().collect();
        let ip = inner_product(&f, &phi, ds.grid()).unwrap();
        let nf = inner_product(&f, &f, ds.grid()).unwrap();
        let np = inner_product(&phi, &phi, ds.grid()).unwrap();
        assert!(ip * ip / (nf * np) > 0.999);
        let m = xi.iter().sum::<f64>() / 200.0;
        let v = xi.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / 199.0;
        assert!((fit.eigenvalues[0] - v * np).abs() < 1e-8 * v);
    }

    #[test]
    fn m0_eigenvalues_match_generation_law() {
        // Independent oracle: the operator Σ λ_j φ_j ⊗ φ_j with non-orthogonal
        // φ_j has the spectrum of Λ^{1/2} G Λ^{1/2}, G the Gram matrix of φ.
        let n = 1000;
        let ds = generate(&SimulationSetting::new(SettingId::M0, 0.0, n, Design::Dense), RngStream::new(8, 0)).unwrap();
        let fit = fit_fpca(&ds, Truncation::K(4)).unwrap();
        let g = ds.grid();
        let phis: Vec<Vec<f64>> = [
            |s: f64| (PI * s).sin(),
            |s: f64| (PI * s).cos(),
            |s: f64| (2.0 * PI * s).sin(),
            |s: f64| (2.0 * PI * s).cos(),
        ]
        .iter()
        .map(|f| g.points().iter().map(|&s| f(s)).collect())
        .collect();
        let lam: Vec<f64> = (1..=4).map(|j| 8.0 / (j * j) as f64).collect();
        let a = DMatrix::from_fn(4, 4, |r, c| lam[r].sqrt() * inner_product(&phis[r], &phis[c], g).unwrap() * lam[c].sqrt());
        let (truth, _) = sym_eigen_desc(&a);
        for j in 0..4 {
            let se = truth[j] * (2.0 / (n as f64 - 1.0)).sqrt();
            assert!((fit.eigenvalues[j] - truth[j]).abs() < 3.0 * se, "{j}: {} vs {}", fit.eigenvalues[j], truth[j]);
        }
    }

    #[test]
    fn full_truncation_reconstructs() {
        let ds = generate(&SimulationSetting::new(SettingId::H1, 0.0, 40, Design::Dense), RngStream::new(1, 0)).unwrap();
        let fit = fit_fpca(&ds, Truncation::Pve(1.0)).unwrap();
        assert!((fit.reconstruct() - ds.curves()).amax() < 1e-8);
        assert!((fit.pve - 1.0).abs() < 1e-12);
    }

    #[test]
    fn errors() {
        let (ds, _, _) = rank_one(1);
        assert!(matches!(fit_fpca(&ds, Truncation::K(1)), Err(Error::InvalidArgument(_))));
        let flat = FunctionalDataset::new(
            vec![0.0; 4],
            DMatrix::from_element(4, 6, 0.1),
            make_uniform_grid(6, 0.0, 1.0).unwrap(),
        )
        .unwrap();
        assert!(matches!(fit_fpca(&flat, Truncation::K(1)), Err(Error::DegenerateCovariance(_))));
        let (ds, _, _) = rank_one(10);
        assert!(fit_fpca(&ds, Truncation::Pve(0.0)).is_err());
        assert!(fit_fpca(&ds, Truncation::K(3)).is_err());
    }

    #[test]
    fn score_variance_equals_eigenvalue() {
        let ds = generate(&SimulationSetting::new(SettingId::G1, 0.0, 80, Design::Dense), RngStream::new(2, 0)).unwrap();
        let fit = fit_fpca(&ds, Truncation::K(5)).unwrap();
        for j in 0..5 {
            let c = fit.scores.column(j);
            let m = c.sum() / 80.0;
            assert!(m.abs() < 1e-10);
            let v = c.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / 79.0;
            assert!((v - fit.eigenvalues[j]).abs() < 1e-9 * fit.eigenvalues[0]);
        }
    }

    #[test]
    fn sign_alignment() {
        let ds = generate(&SimulationSetting::new(SettingId::M0, 0.0, 60, Design::Dense), RngStream::new(3, 0)).unwrap();
        let fit = fit_fpca(&ds, Truncation::K(3)).unwrap();
        assert_eq!(align_signs(&fit, &fit.eigenfunctions).unwrap(), fit);
        let flipped = align_signs(&fit, &(-&fit.eigenfunctions)).unwrap();
        assert_eq!(flipped.eigenfunctions, -&fit.eigenfunctions);
        assert_eq!(flipped.scores, -&fit.scores);
        let twice = align_signs(&flipped, &(-&fit.eigenfunctions)).unwrap();
        assert_eq!(twice, flipped);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn orthonormal_eigenfunctions(seed in 0u64..1000, k in 1usize..6) {
            let ds = generate(&SimulationSetting::new(SettingId::G0, 0.0, 30, Design::Dense), RngStream::new(seed, 1)).unwrap();
            let fit = fit_fpca(&ds, Truncation::K(k)).unwrap();
            let w = DMatrix::from_diagonal(&DVector::from_column_slice(ds.grid().weights()));
            let gram = fit.eigenfunctions.transpose() * w * &fit.eigenfunctions;
            prop_assert!((gram - DMatrix::identity(k, k)).amax() < 1e-8);
            prop_assert!(fit.eigenvalues.windows(2).all(|p| p[0] >= p[1]));
        }
    }

    /// Mean over curves of `‖a − b‖² / ‖b‖²`.
    fn rel_error(a: &DMatrix<f64>, b: &DMatrix<f64>, g: &Grid) -> f64 {
        let mut acc = 0.0;
        for i in 0..a.nrows() {
            let ai: Vec<f64> = a.row(i).iter().copied().collect();
            let bi: Vec<f64> = b.row(i).iter().copied().collect();
            let d: Vec<f64> = ai.iter().zip(&bi).map(|(x, y)| x - y).collect();
            acc += inner_product(&d, &d, g).unwrap() / inner_product(&bi, &bi, g).unwrap();
        }
        acc / a.nrows() as f64
    }

    #[test]
    fn g1_moderate_round_trip() {
        let ds = generate(&SimulationSetting::new(SettingId::G1, 0.0, 200, Design::Dense), RngStream::new(10, 0)).unwrap();
        let sp = sparsify(&ds, SettingId::G1, Design::Moderate, RngStream::new(10, 1)).unwrap();
        let sf = fit_sparse_fpca(&sp, ds.grid(), SparseOptions::default()).unwrap();
        assert!(sf.fit.pve >= 0.99);
        let err = rel_error(&sf.fit.reconstruct(), ds.curves(), ds.grid());
        assert!(err < 0.10, "mean relative error {err}");
    }

    #[test]
    fn fully_observed_subject_is_projected() {
        let ds = generate(&SimulationSetting::new(SettingId::M1, 0.0, 100, Design::Dense), RngStream::new(11, 0)).unwrap();
        let pts = ds.grid().points();
        let obs: Vec<Vec<(f64, f64)>> =
            (0..100).map(|i| pts.iter().enumerate().map(|(j, &t)| (t, ds.curves()[(i, j)])).collect()).collect();
        let sp = SparseFunctionalDataset::new(ds.y().to_vec(), obs, (0.0, 1.0)).unwrap();
        let opts = SparseOptions { pve: 0.99, bandwidth: None, noise_var: Some(1e-12) };
        let sf = fit_sparse_fpca(&sp, ds.grid(), opts).unwrap();
        let phi = &sf.fit.eigenfunctions;
        let proj = phi * (phi.transpose() * phi).try_inverse().unwrap() * phi.transpose();
        let mean = DVector::from_column_slice(&sf.fit.mean);
        let rec = sf.fit.reconstruct();
        for i in 0..100 {
            let x = ds.curves().row(i).transpose();
            let expect = &mean + &proj * (x - &mean);
            assert!((rec.row(i).transpose() - expect).amax() < 1e-6);
        }
    }

    #[test]
    fn too_few_points_fails() {
        let obs = vec![vec![(0.0, 1.0), (0.5, 2.0)], vec![(0.0, 0.5), (1.0, 1.0)]];
        let sp = SparseFunctionalDataset::new(vec![0.0, 1.0], obs, (0.0, 1.0)).unwrap();
        let g = make_uniform_grid(11, 0.0, 1.0).unwrap();
        assert!(matches!(impute_sparse(&sp, &g, 0.99), Err(Error::ImputationFailure(_))));
    }
}
