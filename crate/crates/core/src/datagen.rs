//! Synthetic settings G0, M0 (nullity) and G1, G2, M1, H1, Y1 (linearity),
//! plus the moderate/sparse subsampling designs.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::funcdata::{make_uniform_grid, FunctionalDataset, Grid, SparseFunctionalDataset};
use crate::rng::RngStream;
use crate::testing::Hypothesis;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SettingId {
    G0,
    M0,
    G1,
    G2,
    M1,
    H1,
    Y1,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Design {
    Dense,
    Moderate,
    Sparse,
    /// M1 only: counts from {9, ..., 12}.
    SparsePlus,
}

impl SettingId {
    pub const ALL: [SettingId; 7] =
        [SettingId::G0, SettingId::M0, SettingId::G1, SettingId::G2, SettingId::M1, SettingId::H1, SettingId::Y1];

    pub fn as_str(self) -> &'static str {
        match self {
            SettingId::G0 => "G0",
            SettingId::M0 => "M0",
            SettingId::G1 => "G1",
            SettingId::G2 => "G2",
            SettingId::M1 => "M1",
            SettingId::H1 => "H1",
            SettingId::Y1 => "Y1",
        }
    }

    /// The hypothesis that holds at `delta = 0`.
    pub fn hypothesis(self) -> Hypothesis {
        match self {
            SettingId::G0 | SettingId::M0 => Hypothesis::Nullity,
            _ => Hypothesis::Linearity,
        }
    }

    pub fn default_grid_len(self) -> usize {
        match self {
            SettingId::G0 | SettingId::G1 | SettingId::G2 => 201,
            SettingId::M0 | SettingId::M1 => 30,
            SettingId::H1 => 100,
            SettingId::Y1 => 101,
        }
    }

    pub fn default_sigma(self) -> f64 {
        match self {
            SettingId::G0 | SettingId::G1 | SettingId::G2 => 0.1,
            SettingId::M0 | SettingId::M1 | SettingId::H1 => 1.0,
            SettingId::Y1 => 0.1f64.sqrt(),
        }
    }

    pub fn domain(self) -> (f64, f64) {
        match self {
            SettingId::Y1 => (0.0, 10.0),
            _ => (0.0, 1.0),
        }
    }

    /// Range of departure indices studied for this setting.
    pub fn delta_range(self) -> (f64, f64) {
        match self {
            SettingId::G0 => (0.02, 0.9),
            SettingId::M0 => (0.005, 0.04),
            SettingId::G1 | SettingId::G2 => (0.01, 0.2),
            SettingId::M1 => (0.05, 0.4),
            SettingId::H1 => (0.1, 1.8),
            SettingId::Y1 => (0.005, 0.14),
        }
    }

    /// Inclusive bounds on per-subject observation counts.
    pub fn count_bounds(self, design: Design) -> Result<(usize, usize)> {
        use SettingId::*;
        match (self, design) {
            (_, Design::Dense) => Err(Error::invalid("dense data is never subsampled")),
            (M0 | M1 | Y1, Design::Moderate) => Ok((15, 20)),
            (M0 | M1 | Y1, Design::Sparse) => Ok((5, 10)),
            (M1, Design::SparsePlus) => Ok((9, 12)),
            (G0 | G1 | G2, Design::Moderate) => Ok((100, 120)),
            (G0 | G1 | G2, Design::Sparse) => Ok((25, 30)),
            (H1, Design::Moderate) => Ok((50, 60)),
            (H1, Design::Sparse) => Ok((15, 20)),
            (s, Design::SparsePlus) => Err(Error::invalid(format!("sparse_plus is defined for M1 only, not {s}"))),
        }
    }
}

/// `k` equispaced values covering [`SettingId::delta_range`].
pub fn default_delta_grid(id: SettingId, k: usize) -> Vec<f64> {
    let (lo, hi) = id.delta_range();
    match k {
        0 => vec![],
        1 => vec![hi],
        _ => (0..k).map(|i| lo + (hi - lo) * i as f64 / (k - 1) as f64).collect(),
    }
}

impl fmt::Display for SettingId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SettingId {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        SettingId::ALL
            .into_iter()
            .find(|id| id.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::invalid(format!("unknown setting {s:?}")))
    }
}

impl Design {
    pub fn as_str(self) -> &'static str {
        match self {
            Design::Dense => "dense",
            Design::Moderate => "moderate",
            Design::Sparse => "sparse",
            Design::SparsePlus => "sparse_plus",
        }
    }
}

impl fmt::Display for Design {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Design {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "dense" => Ok(Design::Dense),
            "moderate" => Ok(Design::Moderate),
            "sparse" => Ok(Design::Sparse),
            "sparse_plus" | "sparse-plus" => Ok(Design::SparsePlus),
            other => Err(Error::invalid(format!("unknown design {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationSetting {
    pub id: SettingId,
    pub delta: f64,
    pub n: usize,
    pub design: Design,
    /// Overrides the setting's default grid length.
    pub grid_len: Option<usize>,
    /// Overrides the setting's default error standard deviation.
    pub sigma: Option<f64>,
}

impl SimulationSetting {
    pub fn new(id: SettingId, delta: f64, n: usize, design: Design) -> Self {
        Self { id, delta, n, design, grid_len: None, sigma: None }
    }

    pub fn grid_len(&self) -> usize {
        self.grid_len.unwrap_or_else(|| self.id.default_grid_len())
    }

    pub fn sigma(&self) -> f64 {
        self.sigma.unwrap_or_else(|| self.id.default_sigma())
    }

    pub fn grid(&self) -> Result<Grid> {
        let (a, b) = self.id.domain();
        make_uniform_grid(self.grid_len(), a, b)
    }

    fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::invalid("n must be positive"));
        }
        if !(self.delta >= 0.0) || !self.delta.is_finite() {
            return Err(Error::invalid(format!("delta must be finite and >= 0, got {}", self.delta)));
        }
        if !(self.sigma() >= 0.0) || !self.sigma().is_finite() {
            return Err(Error::invalid("error sd must be finite and >= 0"));
        }
        if self.grid_len() < 2 {
            return Err(Error::invalid("grid length must be >= 2"));
        }
        Ok(())
    }
}

/// Covariance of the Ornstein-Uhlenbeck process started at zero.
pub fn ou_covariance(s: f64, t: f64, theta: f64, sigma: f64) -> Result<f64> {
    if !(theta > 0.0) {
        return Err(Error::invalid(format!("theta must be > 0, got {theta}")));
    }
    if s < 0.0 || t < 0.0 {
        return Err(Error::invalid("times must be nonnegative"));
    }
    Ok(ou_cov_unchecked(s, t, theta, sigma))
}

fn ou_cov_unchecked(s: f64, t: f64, theta: f64, sigma: f64) -> f64 {
    let m = s.min(t);
    sigma * sigma / (2.0 * theta) * (-theta * (s + t)).exp() * (2.0 * theta * m).exp_m1()
}

const OU_THETA: f64 = 1.0 / 3.0;
const OU_SIGMA: f64 = 1.0;
const CHOLESKY_JITTER: f64 = 1e-10;

/// Lower Cholesky factor of the OU covariance on `points`.
fn ou_factor(points: &[f64]) -> Result<DMatrix<f64>> {
    let m = points.len();
    let cov = DMatrix::from_fn(m, m, |i, j| ou_cov_unchecked(points[i], points[j], OU_THETA, OU_SIGMA));
    if let Some(ch) = cov.clone().cholesky() {
        return Ok(ch.l());
    }
    let jittered = cov + DMatrix::identity(m, m) * CHOLESKY_JITTER;
    jittered
        .cholesky()
        .map(|c| c.l())
        .ok_or_else(|| Error::NumericalFailure("OU covariance is not positive definite".into()))
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

fn normals(rng: &mut ChaCha8Rng, k: usize) -> Vec<f64> {
    (0..k).map(|_| normal(rng)).collect()
}

/// Draws one dense dataset. Curves are drawn before errors, from one stream.
pub fn generate(setting: &SimulationSetting, stream: RngStream) -> Result<FunctionalDataset> {
    setting.validate()?;
    let grid = setting.grid()?;
    let n = setting.n;
    let m = grid.len();
    let t = grid.points().to_vec();
    let w = grid.weights().to_vec();
    let delta = setting.delta;
    let mut rng = stream.rng();
    let integ = |row: &[f64], f: &dyn Fn(usize, f64) -> f64| -> f64 {
        row.iter().enumerate().map(|(j, &x)| w[j] * f(j, x)).sum()
    };

    let mut curves = DMatrix::zeros(n, m);
    let mut signal = vec![0.0; n];
    match setting.id {
        SettingId::G0 | SettingId::G1 | SettingId::G2 => {
            let l = ou_factor(&t)?;
            let beta: Vec<f64> = t
                .iter()
                .map(|&s| match setting.id {
                    SettingId::G2 => s - (s - 0.75) * (s - 0.75),
                    _ => (2.0 * PI * s).sin() - (2.0 * PI * s).cos(),
                })
                .collect();
            for i in 0..n {
                let z = DVector::from_vec(normals(&mut rng, m));
                let x = &l * z;
                curves.set_row(i, &x.transpose());
                let row: Vec<f64> = x.iter().copied().collect();
                let lin = integ(&row, &|j, x| x * beta[j]);
                signal[i] = match setting.id {
                    SettingId::G0 => delta * lin,
                    _ => lin + delta * integ(&row, &|_, x| x * x),
                };
            }
        }
        SettingId::M0 | SettingId::M1 => {
            let phi: [fn(f64) -> f64; 4] = [
                |s| (PI * s).sin(),
                |s| (PI * s).cos(),
                |s| (2.0 * PI * s).sin(),
                |s| (2.0 * PI * s).cos(),
            ];
            for i in 0..n {
                let xi: Vec<f64> =
                    (1..=4).map(|j| normal(&mut rng) * (8.0 / (j * j) as f64).sqrt()).collect();
                let row: Vec<f64> =
                    t.iter().map(|&s| (0..4).map(|j| xi[j] * phi[j](s)).sum()).collect();
                let f1 = integ(&row, &|j, x| 2.0 * x * (PI * t[j]).sin());
                signal[i] = match setting.id {
                    SettingId::M0 => 1.0 + delta * f1,
                    _ => {
                        let f2 = integ(&row, &|j, x| 10.0 * (-0.125 * x + 0.25 * t[j] - 5.0).cos());
                        (1.0 - delta) * f1 + delta * f2
                    }
                };
                curves.set_row(i, &DVector::from_vec(row).transpose());
            }
        }
        SettingId::H1 => {
            for i in 0..n {
                let mut row = vec![0.0; m];
                for j in 1..m {
                    let dt = t[j] - t[j - 1];
                    row[j] = row[j - 1] + dt.sqrt() * normal(&mut rng);
                }
                let s = integ(&row, &|_, x| x);
                signal[i] = 4.0 + s + delta * s * s;
                curves.set_row(i, &DVector::from_vec(row).transpose());
            }
        }
        SettingId::Y1 => {
            let root5 = 5f64.sqrt();
            for i in 0..n {
                let xi1 = 2.0 * normal(&mut rng);
                let xi2 = normal(&mut rng);
                let row: Vec<f64> = t
                    .iter()
                    .map(|&s| {
                        let p1 = -(PI * s / 10.0).cos() / root5;
                        let p2 = (PI * s / 10.0).sin() / root5;
                        s + s.sin() + xi1 * p1 + xi2 * p2 + 0.5 * normal(&mut rng)
                    })
                    .collect();
                signal[i] = xi1 + xi2 + delta * (xi1 * xi1 + xi2 * xi2 + xi1 * xi2);
                curves.set_row(i, &DVector::from_vec(row).transpose());
            }
        }
    }
    let sigma = setting.sigma();
    let y: Vec<f64> = signal.iter().map(|s| s + sigma * normal(&mut rng)).collect();
    FunctionalDataset::new(y, curves, grid)
}

/// Keeps a random subset of grid points per subject, with counts drawn
/// uniformly from the setting's bounds for `design`.
pub fn sparsify(
    ds: &FunctionalDataset,
    id: SettingId,
    design: Design,
    stream: RngStream,
) -> Result<SparseFunctionalDataset> {
    let (lo, hi) = id.count_bounds(design)?;
    let m = ds.grid().len();
    if m < hi {
        return Err(Error::invalid(format!("grid has {m} points but design needs up to {hi}")));
    }
    let mut rng = stream.rng();
    let points = ds.grid().points();
    let mut obs = Vec::with_capacity(ds.n());
    for i in 0..ds.n() {
        let mi = rng.random_range(lo..=hi);
        let mut idx = rand::seq::index::sample(&mut rng, m, mi).into_vec();
        idx.sort_unstable();
        obs.push(idx.into_iter().map(|j| (points[j], ds.curves()[(i, j)])).collect());
    }
    SparseFunctionalDataset::new(ds.y().to_vec(), obs, (ds.grid().start(), ds.grid().end()))
}
