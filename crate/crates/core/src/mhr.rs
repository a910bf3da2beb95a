//! Mixed-model likelihood ratio tests in the functional generalized additive
//! model.
//!
//! With `X` the fixed effects and `Z_c` the random-effect blocks of a
//! [`MixedDesign`], `y ~ N(Xβ, σ²V)` with `V = I + Σ λ_c Z_c Z_cᵀ`, where
//! `λ_c = σ²_c / σ²`. All likelihoods are profiled over `β` and `σ²`, leaving
//! a function of the ratios `λ`.
//!
//! Every quantity is computed in reduced coordinates. Let `P₀` project onto
//! the orthogonal complement of `X`, let `U` be an orthonormal basis of
//! `P₀[Z_1 Z_2 Z_3]` (at most `q₁ + q₂ + q₃` columns), `S_c = UᵀZ_c`,
//! `w = Uᵀy` and `r₀ = ‖P₀y‖² − ‖w‖²`. Then the generalized residual sum of
//! squares is `Q(λ) = r₀ + wᵀ(I + Σ λ_c S_c S_cᵀ)⁻¹w` and the restricted
//! likelihood needs only `log|I + Σ λ_c S_c S_cᵀ|`. Simulated null responses
//! enter only through `(w, r₀)`, which are drawn directly.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{ChiSquared, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis::{fgam_design, MixedDesign, DEFAULT_K};
use crate::error::{Error, Result};
use crate::funcdata::FunctionalDataset;
use crate::linalg::{column_basis, sym_eigen_desc};
use crate::rng::RngStream;
use crate::testing::{Diagnostics, Hypothesis, Method, TestResult};

/// Which random effects and fixed effects enter the model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Constraint {
    /// `X`, with independent ratios for `Z₁`, `Z₂`, `Z₃`.
    Full,
    /// `X`, `Z₁`, and one shared ratio for `Z₂` and `Z₃`.
    Tie23,
    /// `X` and `Z₁`: the functional linear model.
    Linear,
    /// Intercept only.
    NullModel,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Objective {
    /// Restricted likelihood.
    Reml,
    /// Full likelihood.
    Ml,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixedFit {
    pub constraint: Constraint,
    pub objective: Objective,
    /// Generalized least squares estimate of the fixed effects.
    pub beta: Vec<f64>,
    /// `σ²₁, σ²₂, σ²₃` on the scale of the design blocks; absent blocks are 0.
    pub sigma2: [f64; 3],
    pub sigma2_e: f64,
    /// Variance ratios `σ²_c/σ²_e` of the constraint's components, in the
    /// internal normalization.
    pub ratios: Vec<f64>,
    pub loglik_reml: f64,
    pub loglik_ml: f64,
    pub converged: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MhrConfig {
    pub kx: usize,
    pub kt: usize,
    pub n_null: usize,
}

impl Default for MhrConfig {
    fn default() -> Self {
        Self { kx: DEFAULT_K, kt: DEFAULT_K, n_null: 2000 }
    }
}

pub const MIN_NULL_RUNS: usize = 1000;
const MAX_FAILURE_SHARE: f64 = 0.01;
const ZERO_STAT: f64 = 1e-8;

/// Grid of variance ratios: exact zero, then 41 log-spaced values on [1e-8, 1e4].
fn ratio_grid() -> Vec<f64> {
    let mut g = vec![0.0];
    g.extend((0..41).map(|i| 10f64.powf(-8.0 + 12.0 * i as f64 / 40.0)));
    g
}

const COARSE_POINTS: usize = 7;
const GOLDEN_TOL: f64 = 1e-5;
const MAX_SWEEPS: usize = 60;

fn coarse_grid() -> Vec<f64> {
    let mut g = vec![0.0];
    g.extend((0..COARSE_POINTS).map(|i| 10f64.powf(-8.0 + 12.0 * i as f64 / (COARSE_POINTS - 1) as f64)));
    g
}

/// Golden-section maximization of `f` over `[a, b]`.
fn golden_max(f: &mut dyn FnMut(f64) -> f64, mut a: f64, mut b: f64) -> (f64, f64) {
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    while (b - a).abs() > GOLDEN_TOL {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d);
        }
    }
    if fc >= fd {
        (c, fc)
    } else {
        (d, fd)
    }
}

/// Maximizes `f(λ)` over `λ ≥ 0`: grid search, then golden-section refinement
/// in `log10 λ` between the neighbours of the best grid point.
fn line_max(f: &mut dyn FnMut(f64) -> f64) -> (f64, f64) {
    let grid = ratio_grid();
    let vals: Vec<f64> = grid.iter().map(|&l| f(l)).collect();
    let mut best = 0;
    for i in 1..grid.len() {
        if vals[i] > vals[best] {
            best = i;
        }
    }
    let lo = if best <= 1 { -8.0 } else { grid[best - 1].log10() };
    let hi = if best + 1 >= grid.len() { 4.0 } else { grid[best + 1].log10() };
    let (x, fx) = golden_max(&mut |t| f(10f64.powf(t)), lo, hi);
    if fx > vals[best] {
        (10f64.powf(x), fx)
    } else {
        (grid[best], vals[best])
    }
}

/// Maximizes over `λ ∈ [0, ∞)^m`. Multi-dimensional problems use a coarse
/// grid and coordinate ascent from the better of the best grid point and `start`.
fn maximize(m: usize, f: &mut dyn FnMut(&[f64]) -> f64, start: Option<&[f64]>) -> (Vec<f64>, f64, bool) {
    match m {
        0 => (vec![], f(&[]), true),
        1 => {
            let (x, v) = line_max(&mut |l| f(&[l]));
            (vec![x], v, true)
        }
        _ => {
            let coarse = coarse_grid();
            let mut idx = vec![0usize; m];
            let mut best = (vec![0.0; m], f64::NEG_INFINITY);
            let mut point = vec![0.0; m];
            loop {
                for (c, &i) in idx.iter().enumerate() {
                    point[c] = coarse[i];
                }
                let v = f(&point);
                if v > best.1 {
                    best = (point.clone(), v);
                }
                let mut c = 0;
                while c < m {
                    idx[c] += 1;
                    if idx[c] < coarse.len() {
                        break;
                    }
                    idx[c] = 0;
                    c += 1;
                }
                if c == m {
                    break;
                }
            }
            if let Some(st) = start {
                let v = f(st);
                if v > best.1 {
                    best = (st.to_vec(), v);
                }
            }
            coordinate_ascent(m, f, best.0, best.1)
        }
    }
}

/// Local refinement of one coordinate: golden section within a decade either
/// side of `x`, compared against `x` itself and against zero.
fn local_line_max(f: &mut dyn FnMut(f64) -> f64, x: f64, fx: f64) -> (f64, f64) {
    if x == 0.0 {
        return line_max(f);
    }
    let c = x.log10();
    let (lo, hi) = ((c - 1.0).max(-8.0), (c + 1.0).min(4.0));
    let (t, ft) = golden_max(&mut |t| f(10f64.powf(t)), lo, hi);
    let f0 = f(0.0);
    let mut best = (x, fx);
    if ft > best.1 {
        best = (10f64.powf(t), ft);
    }
    if f0 > best.1 {
        best = (0.0, f0);
    }
    best
}

/// Coordinate ascent: a full line search per coordinate on the first sweep,
/// local refinement afterwards.
fn coordinate_ascent(m: usize, f: &mut dyn FnMut(&[f64]) -> f64, mut x: Vec<f64>, mut val: f64) -> (Vec<f64>, f64, bool) {
    for sweep in 0..MAX_SWEEPS {
        let before = val;
        for c in 0..m {
            let mut trial = x.clone();
            let mut g = |l: f64| {
                trial[c] = l;
                f(&trial)
            };
            let (xc, v) = if sweep == 0 { line_max(&mut g) } else { local_line_max(&mut g, x[c], val) };
            if v > val {
                x[c] = xc;
                val = v;
            }
        }
        if val - before <= 1e-10 * (1.0 + val.abs()) {
            return (x, val, true);
        }
    }
    (x, val, false)
}

/// Precomputed structure of `I + Σ λ_c S_c S_cᵀ`.
#[derive(Debug, Clone)]
enum Structure {
    Zero,
    /// `S = E diag(√μ) Vᵀ`.
    One { e: DMatrix<f64>, mu: Vec<f64> },
    /// `S_b S_bᵀ = F diag(a) Fᵀ`, `T = Fᵀ S_a`.
    Two { f: DMatrix<f64>, a: Vec<f64>, t: DMatrix<f64> },
    General { comps: Vec<DMatrix<f64>> },
}

/// Response-dependent part of an evaluation.
#[derive(Debug, Clone)]
struct Response {
    /// `w` transformed for the structure.
    proj: DVector<f64>,
    w_norm2: f64,
    r0: f64,
}

/// One model (fixed effects plus grouped random effects) in reduced form.
#[derive(Debug, Clone)]
struct Reduced {
    n: usize,
    p: usize,
    r: usize,
    /// Columns spanning the fixed effects, orthonormal.
    qx: DMatrix<f64>,
    /// Orthonormal basis of `P₀ Z`.
    u: DMatrix<f64>,
    /// `S_c` per component, normalized.
    comps: Vec<DMatrix<f64>>,
    /// Original block = `scale_c ×` normalized block.
    scales: Vec<f64>,
    /// Normalized unprojected `Zᵀ Z` for all components stacked, for the full
    /// likelihood determinant.
    ztz: DMatrix<f64>,
    /// Column offsets of each component in `ztz`.
    offsets: Vec<usize>,
    /// Eigenvalues of the single component's `ZᵀZ` (full likelihood, one component).
    nu_one: Vec<f64>,
    structure: Structure,
}

fn components_for(design: &MixedDesign, constraint: Constraint) -> Vec<DMatrix<f64>> {
    match constraint {
        Constraint::Full => vec![design.z1.clone(), design.z2.clone(), design.z3.clone()],
        Constraint::Tie23 => {
            let mut b = DMatrix::zeros(design.n(), design.z2.ncols() + design.z3.ncols());
            b.columns_mut(0, design.z2.ncols()).copy_from(&design.z2);
            b.columns_mut(design.z2.ncols(), design.z3.ncols()).copy_from(&design.z3);
            vec![design.z1.clone(), b]
        }
        Constraint::Linear => vec![design.z1.clone()],
        Constraint::NullModel => vec![],
    }
}

fn fixed_for(design: &MixedDesign, constraint: Constraint) -> DMatrix<f64> {
    match constraint {
        Constraint::NullModel => design.x.columns(0, 1).into_owned(),
        _ => design.x.clone(),
    }
}

impl Reduced {
    /// `span` lists the blocks whose projected span defines `U`; using the
    /// same `U` for nested models keeps `(w, r₀)` shared between them.
    fn new(x: &DMatrix<f64>, comps_raw: Vec<DMatrix<f64>>, span: &[&DMatrix<f64>], general: bool) -> Result<Self> {
        let n = x.nrows();
        let p = x.ncols();
        let qx = column_basis(x);
        if qx.ncols() < p {
            return Err(Error::SingularDesign(format!("fixed effects have rank {} of {p}", qx.ncols())));
        }
        if n <= p {
            return Err(Error::InsufficientSample { needed: p, available: n });
        }
        let total: usize = span.iter().map(|b| b.ncols()).sum();
        let mut zall = DMatrix::zeros(n, total);
        let mut c = 0;
        for b in span {
            zall.columns_mut(c, b.ncols()).copy_from(b);
            c += b.ncols();
        }
        let pz = &zall - &qx * (qx.transpose() * &zall);
        let u = column_basis(&pz);
        let r = u.ncols();
        if r >= n - p {
            return Err(Error::InsufficientSample { needed: p + r, available: n });
        }

        let mut comps = Vec::new();
        let mut scales = Vec::new();
        let mut raw_scaled = Vec::new();
        for z in comps_raw {
            let s = u.transpose() * &z;
            let tr = s.norm_squared() / s.ncols().max(1) as f64;
            let scale = if tr > 0.0 { tr.sqrt() } else { 1.0 };
            comps.push(s / scale);
            raw_scaled.push(z / scale);
            scales.push(scale);
        }
        let qtot: usize = raw_scaled.iter().map(|z| z.ncols()).sum();
        let mut zcat = DMatrix::zeros(n, qtot);
        let mut offsets = Vec::new();
        let mut c = 0;
        for z in &raw_scaled {
            offsets.push(c);
            zcat.columns_mut(c, z.ncols()).copy_from(z);
            c += z.ncols();
        }
        offsets.push(c);
        let ztz = zcat.transpose() * &zcat;
        let nu_one = if comps.len() == 1 {
            sym_eigen_desc(&ztz).0.iter().map(|v| v.max(0.0)).collect()
        } else {
            vec![]
        };

        let structure = if general {
            Structure::General { comps: comps.clone() }
        } else {
            match comps.len() {
                0 => Structure::Zero,
                1 => {
                    let svd = comps[0].clone().svd(true, false);
                    let uu = svd.u.expect("requested U");
                    let smax = svd.singular_values.max();
                    let keep: Vec<usize> =
                        (0..svd.singular_values.len()).filter(|&i| svd.singular_values[i] > 1e-12 * smax.max(1e-300)).collect();
                    let mut e = DMatrix::zeros(r, keep.len());
                    let mut mu = Vec::new();
                    for (dst, &src) in keep.iter().enumerate() {
                        e.set_column(dst, &uu.column(src));
                        mu.push(svd.singular_values[src].powi(2));
                    }
                    Structure::One { e, mu }
                }
                2 => {
                    let sb = &comps[1];
                    let (a, f) = sym_eigen_desc(&(sb * sb.transpose()));
                    let t = f.transpose() * &comps[0];
                    Structure::Two { f, a: a.iter().map(|v| v.max(0.0)).collect(), t }
                }
                _ => Structure::General { comps: comps.clone() },
            }
        };
        Ok(Self { n, p, r, qx, u, comps, scales, ztz, offsets, nu_one, structure })
    }

    fn response_from_w(&self, w: DVector<f64>, r0: f64) -> Response {
        let w_norm2 = w.norm_squared();
        let proj = match &self.structure {
            Structure::Zero | Structure::General { .. } => w,
            Structure::One { e, .. } => e.transpose() * w,
            Structure::Two { f, .. } => f.transpose() * w,
        };
        Response { proj, w_norm2, r0: r0.max(0.0) }
    }

    fn response(&self, y: &DVector<f64>) -> Response {
        let p0y = y - &self.qx * (self.qx.transpose() * y);
        let w = self.u.transpose() * &p0y;
        let r0 = p0y.norm_squared() - w.norm_squared();
        self.response_from_w(w, r0)
    }

    /// `(log|I + Σ λ_c S_c S_cᵀ|, Q(λ))`.
    fn eval(&self, lam: &[f64], resp: &Response) -> (f64, f64) {
        match &self.structure {
            Structure::Zero => (0.0, resp.r0 + resp.w_norm2),
            Structure::One { mu, .. } => {
                let l = lam[0];
                let mut logdet = 0.0;
                let mut q = resp.r0 + resp.w_norm2;
                for (j, &m) in mu.iter().enumerate() {
                    let d = 1.0 + l * m;
                    logdet += d.ln();
                    q -= resp.proj[j] * resp.proj[j] * (l * m / d);
                }
                (logdet, q)
            }
            Structure::Two { a, t, .. } => {
                let (la, lb) = (lam[0], lam[1]);
                let mut logdet = 0.0;
                let mut q = resp.r0;
                let dinv: Vec<f64> = a
                    .iter()
                    .map(|&aj| {
                        let d = 1.0 + lb * aj;
                        logdet += d.ln();
                        1.0 / d
                    })
                    .collect();
                for j in 0..a.len() {
                    q += resp.proj[j] * resp.proj[j] * dinv[j];
                }
                if la > 0.0 {
                    let k = t.ncols();
                    let mut nmat = DMatrix::<f64>::identity(k, k);
                    let mut g = DVector::<f64>::zeros(k);
                    for j in 0..a.len() {
                        let row = t.row(j);
                        let dj = dinv[j];
                        for c1 in 0..k {
                            let v = row[c1] * dj;
                            g[c1] += v * resp.proj[j];
                            for c2 in c1..k {
                                nmat[(c1, c2)] += la * v * row[c2];
                            }
                        }
                    }
                    for c1 in 0..k {
                        for c2 in 0..c1 {
                            nmat[(c1, c2)] = nmat[(c2, c1)];
                        }
                    }
                    match nmat.cholesky() {
                        Some(ch) => {
                            logdet += 2.0 * ch.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
                            let sol = ch.solve(&g);
                            q -= la * g.dot(&sol);
                        }
                        None => return (f64::NAN, f64::NAN),
                    }
                }
                (logdet, q)
            }
            Structure::General { comps } => {
                let mut v = DMatrix::<f64>::identity(self.r, self.r);
                for (c, s) in comps.iter().enumerate() {
                    if lam[c] > 0.0 {
                        v += s * s.transpose() * lam[c];
                    }
                }
                match v.cholesky() {
                    Some(ch) => {
                        let logdet = 2.0 * ch.l().diagonal().iter().map(|x| x.ln()).sum::<f64>();
                        let z = ch.l().solve_lower_triangular(&resp.proj).expect("nonsingular factor");
                        (logdet, resp.r0 + z.norm_squared())
                    }
                    None => (f64::NAN, f64::NAN),
                }
            }
        }
    }

    /// `log|I_n + Σ λ_c Z_c Z_cᵀ|`.
    fn full_logdet(&self, lam: &[f64]) -> f64 {
        if lam.is_empty() {
            return 0.0;
        }
        if self.comps.len() == 1 {
            return self.nu_one.iter().map(|&v| (1.0 + lam[0] * v).ln()).sum();
        }
        let q = self.ztz.nrows();
        let mut sq = vec![0.0; q];
        for c in 0..lam.len() {
            for j in self.offsets[c]..self.offsets[c + 1] {
                sq[j] = lam[c].sqrt();
            }
        }
        let m = DMatrix::from_fn(q, q, |i, j| if i == j { 1.0 } else { 0.0 } + sq[i] * self.ztz[(i, j)] * sq[j]);
        match m.cholesky() {
            Some(ch) => 2.0 * ch.l().diagonal().iter().map(|x| x.ln()).sum::<f64>(),
            None => f64::NAN,
        }
    }

    fn reml(&self, lam: &[f64], resp: &Response) -> f64 {
        let (logdet, q) = self.eval(lam, resp);
        let k = (self.n - self.p) as f64;
        if !(q > 0.0) || !logdet.is_finite() {
            return f64::NEG_INFINITY;
        }
        -0.5 * (k * (2.0 * std::f64::consts::PI * q / k).ln() + k + logdet)
    }

    fn ml(&self, lam: &[f64], resp: &Response) -> f64 {
        let (_, q) = self.eval(lam, resp);
        let n = self.n as f64;
        let logdet = self.full_logdet(lam);
        if !(q > 0.0) || !logdet.is_finite() {
            return f64::NEG_INFINITY;
        }
        -0.5 * (n * (2.0 * std::f64::consts::PI * q / n).ln() + n + logdet)
    }

    fn objective(&self, obj: Objective, lam: &[f64], resp: &Response) -> f64 {
        match obj {
            Objective::Reml => self.reml(lam, resp),
            Objective::Ml => self.ml(lam, resp),
        }
    }

    fn maximize(&self, obj: Objective, resp: &Response, start: Option<&[f64]>) -> (Vec<f64>, f64, bool) {
        let m = self.comps.len();
        maximize(m, &mut |lam| self.objective(obj, lam, resp), start)
    }
}

/// Fits the model selected by `constraint` by maximizing the restricted
/// likelihood over the variance ratios.
pub fn fit_mixed(design: &MixedDesign, y: &[f64], constraint: Constraint) -> Result<MixedFit> {
    fit_mixed_with(design, y, constraint, Objective::Reml)
}

/// As [`fit_mixed`], maximizing the chosen likelihood.
pub fn fit_mixed_with(design: &MixedDesign, y: &[f64], constraint: Constraint, objective: Objective) -> Result<MixedFit> {
    let red = reduced_for(design, y, constraint, false)?;
    let yv = DVector::from_column_slice(y);
    let resp = red.response(&yv);
    let (lam, _, converged) = red.maximize(objective, &resp, None);
    finish_fit(design, &red, &yv, &resp, constraint, objective, lam, converged)
}

fn reduced_for(design: &MixedDesign, y: &[f64], constraint: Constraint, general: bool) -> Result<Reduced> {
    if design.n() != y.len() {
        return Err(Error::invalid(format!("design has {} rows, response has {}", design.n(), y.len())));
    }
    let comps = components_for(design, constraint);
    let span: Vec<&DMatrix<f64>> = match constraint {
        Constraint::Full | Constraint::Tie23 => vec![&design.z1, &design.z2, &design.z3],
        Constraint::Linear => vec![&design.z1],
        Constraint::NullModel => vec![],
    };
    Reduced::new(&fixed_for(design, constraint), comps, &span, general)
}

#[allow(clippy::too_many_arguments)]
fn finish_fit(
    design: &MixedDesign,
    red: &Reduced,
    y: &DVector<f64>,
    resp: &Response,
    constraint: Constraint,
    objective: Objective,
    lam: Vec<f64>,
    converged: bool,
) -> Result<MixedFit> {
    let (_, q) = red.eval(&lam, resp);
    let denom = match objective {
        Objective::Reml => (red.n - red.p) as f64,
        Objective::Ml => red.n as f64,
    };
    let sigma2_e = q / denom;
    // GLS via Woodbury: V⁻¹ = I − Z(Λ⁻¹ + ZᵀZ)⁻¹Zᵀ over components with λ > 0.
    let x = fixed_for(design, constraint);
    let raw = components_for(design, constraint);
    let active: Vec<(DMatrix<f64>, f64)> = raw
        .into_iter()
        .zip(&red.scales)
        .zip(&lam)
        .filter(|(_, &l)| l > 0.0)
        .map(|((z, &s), &l)| (z / s, l))
        .collect();
    let vinv_apply = |m: &DMatrix<f64>| -> DMatrix<f64> {
        if active.is_empty() {
            return m.clone();
        }
        let q: usize = active.iter().map(|(z, _)| z.ncols()).sum();
        let mut z = DMatrix::zeros(red.n, q);
        let mut inner = DMatrix::zeros(q, q);
        let mut c = 0;
        for (zc, l) in &active {
            z.columns_mut(c, zc.ncols()).copy_from(zc);
            for j in c..c + zc.ncols() {
                inner[(j, j)] = 1.0 / l;
            }
            c += zc.ncols();
        }
        inner += z.transpose() * &z;
        let sol = inner.lu().solve(&(z.transpose() * m)).unwrap_or_else(|| DMatrix::zeros(q, m.ncols()));
        m - z * sol
    };
    let vx = vinv_apply(&x);
    let vy = vinv_apply(&DMatrix::from_column_slice(y.len(), 1, y.as_slice()));
    let beta = (x.transpose() * &vx)
        .lu()
        .solve(&(x.transpose() * vy))
        .ok_or_else(|| Error::SingularDesign("GLS system is singular".into()))?;

    let mut sigma2 = [0.0; 3];
    let comp_blocks: Vec<Vec<usize>> = match constraint {
        Constraint::Full => vec![vec![0], vec![1], vec![2]],
        Constraint::Tie23 => vec![vec![0], vec![1, 2]],
        Constraint::Linear => vec![vec![0]],
        Constraint::NullModel => vec![],
    };
    for (c, blocks) in comp_blocks.iter().enumerate() {
        for &b in blocks {
            sigma2[b] = lam[c] * sigma2_e / (red.scales[c] * red.scales[c]);
        }
    }
    Ok(MixedFit {
        constraint,
        objective,
        beta: beta.iter().copied().collect(),
        sigma2,
        sigma2_e,
        ratios: lam.clone(),
        loglik_reml: red.reml(&lam, resp),
        loglik_ml: red.ml(&lam, resp),
        converged,
    })
}

/// Profile objective at given ratios, for grid-search checks.
pub fn profile_objective(
    design: &MixedDesign,
    y: &[f64],
    constraint: Constraint,
    objective: Objective,
    ratios: &[f64],
) -> Result<f64> {
    let red = reduced_for(design, y, constraint, false)?;
    if ratios.len() != red.comps.len() {
        return Err(Error::invalid(format!("{} ratios for {} components", ratios.len(), red.comps.len())));
    }
    let resp = red.response(&DVector::from_column_slice(y));
    Ok(red.objective(objective, ratios, &resp))
}

/// As [`profile_objective`] but through a dense Cholesky of the reduced
/// covariance. Used to cross-check the specialised evaluators.
pub fn profile_objective_dense(
    design: &MixedDesign,
    y: &[f64],
    constraint: Constraint,
    objective: Objective,
    ratios: &[f64],
) -> Result<f64> {
    let red = reduced_for(design, y, constraint, true)?;
    let resp = red.response(&DVector::from_column_slice(y));
    Ok(red.objective(objective, ratios, &resp))
}

fn check_null_runs(n_null: usize) -> Result<()> {
    if n_null < MIN_NULL_RUNS {
        return Err(Error::invalid(format!("need at least {MIN_NULL_RUNS} null runs, got {n_null}")));
    }
    Ok(())
}

fn chi2(rng: &mut ChaCha8Rng, df: usize) -> f64 {
    if df == 0 {
        return 0.0;
    }
    rng.sample(ChiSquared::new(df as f64).expect("positive df"))
}

fn normal_vec(rng: &mut ChaCha8Rng, k: usize) -> DVector<f64> {
    DVector::from_fn(k, |_, _| rng.sample(StandardNormal))
}

/// Summary of a simulated null distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct NullDistribution {
    pub sorted: Vec<f64>,
    pub zero_mass: f64,
}

impl NullDistribution {
    fn new(mut values: Vec<f64>) -> Self {
        values.sort_by(|a, b| a.total_cmp(b));
        let zero = values.iter().filter(|&&v| v <= ZERO_STAT).count();
        let zero_mass = zero as f64 / values.len().max(1) as f64;
        Self { sorted: values, zero_mass }
    }

    pub fn len(&self) -> usize {
        self.sorted.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sorted.is_empty()
    }

    /// `(1 + #{T* ≥ t}) / (len + 1)`.
    pub fn p_value(&self, t: f64) -> f64 {
        let below = self.sorted.partition_point(|&v| v < t);
        (1 + self.sorted.len() - below) as f64 / (self.sorted.len() + 1) as f64
    }
}

fn collect_null(values: Vec<Option<f64>>) -> Result<NullDistribution> {
    let total = values.len();
    let ok: Vec<f64> = values.into_iter().flatten().collect();
    let failed = total - ok.len();
    if failed as f64 > MAX_FAILURE_SHARE * total as f64 {
        return Err(Error::NullSimulationUnstable { failed, total });
    }
    Ok(NullDistribution::new(ok))
}

/// Restricted likelihood ratio of the tied model against the linear model.
struct LinearityProblem {
    h1: Reduced,
    h0: Reduced,
}

impl LinearityProblem {
    fn new(design: &MixedDesign) -> Result<Self> {
        let span = [&design.z1, &design.z2, &design.z3];
        let h1 = Reduced::new(&design.x, components_for(design, Constraint::Tie23), &span, false)?;
        let h0 = Reduced::new(&design.x, components_for(design, Constraint::Linear), &span, false)?;
        Ok(Self { h1, h0 })
    }

    /// `(statistic, H0 ratios)` for reduced data `(w, r₀)`.
    fn statistic(&self, w: &DVector<f64>, r0: f64) -> (f64, Vec<f64>) {
        let resp0 = self.h0.response_from_w(w.clone(), r0);
        let resp1 = self.h1.response_from_w(w.clone(), r0);
        let (lam0, l0, _) = self.h0.maximize(Objective::Reml, &resp0, None);
        let start = [lam0[0], 0.0];
        let (_, l1, _) = self.h1.maximize(Objective::Reml, &resp1, Some(&start));
        ((2.0 * (l1 - l0)).max(0.0), lam0)
    }
}

/// Restricted likelihood ratio test of linearity: the tied `Z₂, Z₃` variance
/// is zero. The null distribution is simulated from the fitted linear model.
pub fn mhr_linearity(ds: &FunctionalDataset, config: &MhrConfig, stream: RngStream) -> Result<TestResult> {
    check_null_runs(config.n_null)?;
    let design = fgam_design(ds, config.kx, config.kt)?;
    let prob = LinearityProblem::new(&design)?;
    let y = DVector::from_column_slice(ds.y());
    let resp = prob.h1.response(&y);
    let w = resp_w(&prob.h1, &y);
    let (stat, lam0) = prob.statistic(&w, resp.r0);

    // RLRT is scale invariant, so simulate with unit error variance.
    let s1 = prob.h0.comps[0].clone();
    let sd_b = lam0[0].sqrt();
    let r = prob.h1.r;
    let rest = prob.h1.n - prob.h1.p - r;
    let sims: Vec<Option<f64>> = (0..config.n_null)
        .into_par_iter()
        .map(|run| {
            let mut rng = stream.substream(run as u64).rng();
            let b = normal_vec(&mut rng, s1.ncols()) * sd_b;
            let ws = &s1 * b + normal_vec(&mut rng, r);
            let r0 = chi2(&mut rng, rest);
            let (t, _) = prob.statistic(&ws, r0);
            t.is_finite().then_some(t)
        })
        .collect();
    let null = collect_null(sims)?;
    let fit0 = finish_fit(&design, &prob.h0, &y, &prob.h0.response(&y), Constraint::Linear, Objective::Reml, lam0, true)?;
    Ok(TestResult {
        method: Method::Mhr,
        hypothesis: Hypothesis::Linearity,
        statistic: stat,
        p_value: null.p_value(stat),
        diagnostics: Diagnostics {
            resamples: Some(null.len()),
            variance_components: vec![fit0.sigma2[0], fit0.sigma2_e],
            null_zero_mass: Some(null.zero_mass),
            ..Diagnostics::default()
        },
    })
}

fn resp_w(red: &Reduced, y: &DVector<f64>) -> DVector<f64> {
    let p0y = y - &red.qx * (red.qx.transpose() * y);
    red.u.transpose() * p0y
}

/// Likelihood ratio of the functional linear model against intercept only.
struct NullityProblem {
    h1: Reduced,
}

impl NullityProblem {
    fn new(design: &MixedDesign) -> Result<Self> {
        let h1 = Reduced::new(&design.x, components_for(design, Constraint::Linear), &[&design.z1], false)?;
        Ok(Self { h1 })
    }

    /// LRT from `Q₀ = Σ(y − ȳ)²` and reduced data `(w, r₀)` of the alternative.
    fn statistic(&self, q0: f64, w: DVector<f64>, r0: f64) -> f64 {
        let resp = self.h1.response_from_w(w, r0);
        let (_, l1, _) = self.h1.maximize(Objective::Ml, &resp, None);
        let n = self.h1.n as f64;
        let l0 = -0.5 * (n * (2.0 * std::f64::consts::PI * q0 / n).ln() + n);
        (2.0 * (l1 - l0)).max(0.0)
    }
}

/// Likelihood ratio test of no effect. The statistic is pivotal under the
/// intercept-only model, so null draws use standard normal reduced data.
pub fn mhr_nullity(ds: &FunctionalDataset, config: &MhrConfig, stream: RngStream) -> Result<TestResult> {
    check_null_runs(config.n_null)?;
    let design = fgam_design(ds, config.kx, config.kt)?;
    let prob = NullityProblem::new(&design)?;
    let y = DVector::from_column_slice(ds.y());
    let ybar = y.mean();
    let q0 = y.iter().map(|v| (v - ybar).powi(2)).sum::<f64>();
    if q0 == 0.0 {
        return Err(Error::invalid("response is constant"));
    }
    let resp = prob.h1.response(&y);
    let stat = prob.statistic(q0, resp_w(&prob.h1, &y), resp.r0);

    let r = prob.h1.r;
    let p = prob.h1.p;
    let rest = prob.h1.n - p - r;
    let sims: Vec<Option<f64>> = (0..config.n_null)
        .into_par_iter()
        .map(|run| {
            let mut rng = stream.substream(run as u64).rng();
            let fixed = chi2(&mut rng, p - 1);
            let w = normal_vec(&mut rng, r);
            let r0 = chi2(&mut rng, rest);
            let q0s = fixed + w.norm_squared() + r0;
            let t = prob.statistic(q0s, w, r0);
            t.is_finite().then_some(t)
        })
        .collect();
    let null = collect_null(sims)?;
    Ok(TestResult {
        method: Method::Mhr,
        hypothesis: Hypothesis::Nullity,
        statistic: stat,
        p_value: null.p_value(stat),
        diagnostics: Diagnostics {
            resamples: Some(null.len()),
            null_zero_mass: Some(null.zero_mass),
            ..Diagnostics::default()
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{generate, Design, SettingId, SimulationSetting};

    fn data(id: SettingId, delta: f64, n: usize, seed: u64) -> FunctionalDataset {
        generate(&SimulationSetting::new(id, delta, n, Design::Dense), RngStream::new(seed, 0)).unwrap()
    }

    #[test]
    fn null_model_reml_variance_is_sample_variance() {
        let ds = data(SettingId::G0, 0.0, 200, 1);
        let d = fgam_design(&ds, 7, 7).unwrap();
        let f = fit_mixed(&d, ds.y(), Constraint::NullModel).unwrap();
        let m = ds.y().iter().sum::<f64>() / 200.0;
        let v = ds.y().iter().map(|x| (x - m).powi(2)).sum::<f64>() / 199.0;
        assert!((f.sigma2_e - v).abs() < 1e-10 * v);
        assert!((f.beta[0] - m).abs() < 1e-12);
    }

    #[test]
    fn evaluators_agree_with_dense_cholesky() {
        let ds = data(SettingId::M1, 0.3, 80, 2);
        let d = fgam_design(&ds, 7, 7).unwrap();
        for (c, m) in [(Constraint::Linear, 1), (Constraint::Tie23, 2), (Constraint::Full, 3)] {
            for obj in [Objective::Reml, Objective::Ml] {
                for lam in [[0.0, 0.0, 0.0], [0.3, 0.0, 2.0], [1e-5, 10.0, 0.1], [50.0, 1e-3, 1e3]] {
                    let a = profile_objective(&d, ds.y(), c, obj, &lam[..m]).unwrap();
                    let b = profile_objective_dense(&d, ds.y(), c, obj, &lam[..m]).unwrap();
                    assert!((a - b).abs() < 1e-8 * (1.0 + a.abs()), "{c:?} {obj:?} {lam:?}: {a} vs {b}");
                }
            }
        }
    }

    #[test]
    fn reduced_reml_matches_textbook_formula() {
        // Direct n×n evaluation of the restricted likelihood, up to the
        // constant ½ log|XᵀX| that the reduced form omits.
        let ds = data(SettingId::G1, 0.1, 40, 3);
        let d = fgam_design(&ds, 5, 5).unwrap();
        let y = DVector::from_column_slice(ds.y());
        let (l1, l23) = (0.7, 0.05);
        let red = reduced_for(&d, ds.y(), Constraint::Tie23, false).unwrap();
        let z1 = &d.z1 / red.scales[0];
        let z23 = {
            let c = components_for(&d, Constraint::Tie23);
            &c[1] / red.scales[1]
        };
        let n = 40;
        let v = DMatrix::<f64>::identity(n, n) + &z1 * z1.transpose() * l1 + &z23 * z23.transpose() * l23;
        let vinv = v.clone().try_inverse().unwrap();
        let x = &d.x;
        let xtvx = x.transpose() * &vinv * x;
        let pmat = &vinv - &vinv * x * xtvx.clone().try_inverse().unwrap() * x.transpose() * &vinv;
        let q = (y.transpose() * &pmat * &y)[(0, 0)];
        let k = (n - 3) as f64;
        let direct = -0.5
            * (k * (2.0 * std::f64::consts::PI * q / k).ln() + k + v.determinant().ln() + xtvx.determinant().ln()
                - (x.transpose() * x).determinant().ln());
        let ours = profile_objective(&d, ds.y(), Constraint::Tie23, Objective::Reml, &[l1, l23]).unwrap();
        assert!((direct - ours).abs() < 1e-7 * direct.abs(), "{direct} vs {ours}");

        let direct_ml = -0.5 * (n as f64 * (2.0 * std::f64::consts::PI * q / n as f64).ln() + n as f64 + v.determinant().ln());
        let ours_ml = profile_objective(&d, ds.y(), Constraint::Tie23, Objective::Ml, &[l1, l23]).unwrap();
        assert!((direct_ml - ours_ml).abs() < 1e-7 * direct_ml.abs());
    }

    #[test]
    fn optimizer_beats_grid() {
        for seed in 0..20 {
            let ds = data(SettingId::M1, 0.2, 60, 100 + seed);
            let d = fgam_design(&ds, 7, 7).unwrap();
            let f = fit_mixed(&d, ds.y(), Constraint::Linear).unwrap();
            for i in 0..50 {
                let l = 10f64.powf(-8.0 + 12.0 * i as f64 / 49.0);
                let g = profile_objective(&d, ds.y(), Constraint::Linear, Objective::Reml, &[l]).unwrap();
                assert!(f.loglik_reml >= g - 1e-6, "seed {seed}: {} < {g}", f.loglik_reml);
            }
        }
    }

    #[test]
    fn tied_optimizer_beats_grid() {
        for seed in 0..5 {
            let ds = data(SettingId::M1, 0.4, 60, 200 + seed);
            let d = fgam_design(&ds, 7, 7).unwrap();
            let f = fit_mixed(&d, ds.y(), Constraint::Tie23).unwrap();
            for i in 0..20 {
                for j in 0..20 {
                    let a = 10f64.powf(-8.0 + 12.0 * i as f64 / 19.0);
                    let b = 10f64.powf(-8.0 + 12.0 * j as f64 / 19.0);
                    let g = profile_objective(&d, ds.y(), Constraint::Tie23, Objective::Reml, &[a, b]).unwrap();
                    assert!(f.loglik_reml >= g - 1e-6);
                }
            }
        }
    }

    #[test]
    fn boundary_estimates_occur_under_linearity() {
        let mut zeros = 0;
        for seed in 0..30 {
            let ds = data(SettingId::M1, 0.0, 60, 300 + seed);
            let d = fgam_design(&ds, 7, 7).unwrap();
            let f = fit_mixed(&d, ds.y(), Constraint::Tie23).unwrap();
            assert!(f.sigma2.iter().all(|&s| s >= 0.0));
            if f.ratios[1] == 0.0 {
                zeros += 1;
            }
        }
        assert!(zeros > 0);
    }

    #[test]
    fn statistics_nonnegative_and_shift_invariant() {
        let cfg = MhrConfig { n_null: 1000, ..MhrConfig::default() };
        let ds = data(SettingId::M1, 0.2, 60, 4);
        let shifted = ds.with_response(ds.y().iter().map(|v| v + 17.0).collect()).unwrap();
        let a = mhr_linearity(&ds, &cfg, RngStream::new(1, 1)).unwrap();
        let b = mhr_linearity(&shifted, &cfg, RngStream::new(1, 1)).unwrap();
        assert!(a.statistic >= 0.0);
        assert!((a.statistic - b.statistic).abs() < 1e-6 * (1.0 + a.statistic));
        assert!(a.diagnostics.null_zero_mass.unwrap() > 0.3);
        let c = mhr_nullity(&ds, &cfg, RngStream::new(1, 2)).unwrap();
        let e = mhr_nullity(&shifted, &cfg, RngStream::new(1, 2)).unwrap();
        assert!(c.statistic >= 0.0);
        assert!((c.statistic - e.statistic).abs() < 1e-6 * (1.0 + c.statistic));
        assert!(mhr_nullity(&ds, &MhrConfig { n_null: 10, ..cfg }, RngStream::new(1, 2)).is_err());
    }

    #[test]
    fn null_distribution_p_values() {
        let nd = NullDistribution::new(vec![0.0, 0.0, 1.0, 2.0, 3.0]);
        assert_eq!(nd.zero_mass, 0.4);
        assert_eq!(nd.p_value(2.0), 3.0 / 6.0);
        assert_eq!(nd.p_value(10.0), 1.0 / 6.0);
        assert_eq!(nd.p_value(0.0), 1.0);
    }
}
