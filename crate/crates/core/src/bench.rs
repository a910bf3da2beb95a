//! Monte Carlo size and power studies.
//!
//! Replicate `r` of delta `d` draws everything from
//! `RngStream::new(seed, d).substream(r)`, so results do not depend on the
//! number of worker threads.

use std::fmt::Write as _;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datagen::{generate, sparsify, Design, SettingId, SimulationSetting};
use crate::error::{Error, Result};
use crate::flm::DEFAULT_P_M;
use crate::fpca::{fit_sparse_fpca, impute_sparse, SparseOptions};
use crate::ksm::{ksm_from_fit, KsmCalibration};
use crate::rng::RngStream;
use crate::testing::{run_test, Method, TestConfig};

pub const MIN_REPLICATES: usize = 100;
/// Share of failed replicates above which a row is unreliable.
pub const MAX_FAILURE_SHARE: f64 = 0.02;
pub const IMPUTE_PVE: f64 = 0.99;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StudyKind {
    Size,
    Power,
}

impl FromStr for StudyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "size" => Ok(StudyKind::Size),
            "power" => Ok(StudyKind::Power),
            other => Err(Error::invalid(format!("unknown study kind `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudySpec {
    pub kind: StudyKind,
    pub setting: SettingId,
    pub design: Design,
    pub n: usize,
    pub methods: Vec<Method>,
    pub alphas: Vec<f64>,
    pub deltas: Vec<f64>,
    pub replicates: usize,
    pub seed: u64,
    /// Per-test settings. `config.ggf.p` is replaced by [`DEFAULT_P_M`] for
    /// the M settings unless `ggf_p_override` is set.
    pub config: TestConfig,
    pub ggf_p_override: bool,
    /// Run KSM on the conditional scores of the sparse FPCA instead of on the
    /// imputed curves.
    pub ksm_sparse_scores: bool,
}

impl StudySpec {
    /// Size study with desk-scale defaults.
    pub fn size(setting: SettingId, design: Design, n: usize, methods: Vec<Method>, replicates: usize, seed: u64) -> Self {
        Self {
            kind: StudyKind::Size,
            setting,
            design,
            n,
            methods,
            alphas: vec![0.05],
            deltas: vec![0.0],
            replicates,
            seed,
            config: TestConfig::default(),
            ggf_p_override: false,
            ksm_sparse_scores: false,
        }
    }

    /// Power study over `deltas`.
    pub fn power(
        setting: SettingId,
        design: Design,
        n: usize,
        methods: Vec<Method>,
        deltas: Vec<f64>,
        replicates: usize,
        seed: u64,
    ) -> Self {
        Self { kind: StudyKind::Power, deltas, ..Self::size(setting, design, n, methods, replicates, seed) }
    }

    pub fn validate(&self) -> Result<()> {
        if self.replicates < MIN_REPLICATES {
            return Err(Error::invalid(format!("need at least {MIN_REPLICATES} replicates, got {}", self.replicates)));
        }
        if self.alphas.is_empty() || self.alphas.iter().any(|&a| !(a > 0.0 && a < 1.0)) {
            return Err(Error::invalid("alpha levels must be nonempty and inside (0, 1)"));
        }
        if self.deltas.is_empty() || self.deltas.iter().any(|d| !d.is_finite()) {
            return Err(Error::invalid("delta grid must be nonempty and finite"));
        }
        if self.kind == StudyKind::Size && self.deltas.iter().any(|&d| d != 0.0) {
            return Err(Error::invalid("size studies use delta = 0 only"));
        }
        if self.methods.is_empty() {
            return Err(Error::invalid("no methods selected"));
        }
        let h = self.setting.hypothesis();
        for m in &self.methods {
            if !m.supports(h) {
                return Err(Error::invalid(format!("{m} does not test {h} (setting {})", self.setting)));
            }
        }
        if self.n < 10 {
            return Err(Error::invalid(format!("n = {} is too small", self.n)));
        }
        if self.design != Design::Dense {
            self.setting.count_bounds(self.design)?;
        }
        Ok(())
    }

    fn effective_config(&self) -> TestConfig {
        let mut cfg = self.config.clone();
        if !self.ggf_p_override && matches!(self.setting, SettingId::M0 | SettingId::M1) {
            cfg.ggf.p = DEFAULT_P_M;
        }
        cfg
    }

    /// Parses `key = value` lines. Blank lines and `#` comments are ignored.
    ///
    /// Keys: `kind`, `setting`, `design`, `n`, `methods`, `alpha`, `delta`,
    /// `replicates`, `seed`, `ggf.bootstrap`, `ggf.p`, `ggf.n_proj`,
    /// `mhr.n_null`, `mhr.kx`, `mhr.kt`, `hr.components`, `ksm.pve`,
    /// `ksm.calibration` (`chi2` or `f`), `ksm.sparse_scores`. Lists are
    /// comma separated.
    pub fn parse(text: &str) -> Result<Self> {
        let mut kind = None;
        let mut setting = None;
        let mut design = Design::Dense;
        let mut n = None;
        let mut methods = None;
        let mut alphas = vec![0.05];
        let mut deltas = None;
        let mut replicates = None;
        let mut seed = 0u64;
        let mut config = TestConfig::default();
        let mut ggf_p_override = false;
        let mut ksm_sparse_scores = false;

        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::invalid(format!("line {}: expected key = value", lineno + 1)))?;
            let (key, value) = (key.trim(), value.trim());
            let bad = |what: &str| Error::invalid(format!("line {}: invalid {what} `{value}`", lineno + 1));
            let num = |what: &str| value.parse::<usize>().map_err(|_| bad(what));
            let list = |what: &str| -> Result<Vec<f64>> {
                value.split(',').map(|v| v.trim().parse::<f64>().map_err(|_| bad(what))).collect()
            };
            match key {
                "kind" => kind = Some(value.parse()?),
                "setting" => setting = Some(value.parse()?),
                "design" => design = value.parse()?,
                "n" => n = Some(num("n")?),
                "methods" => methods = Some(value.split(',').map(|m| m.trim().parse()).collect::<Result<Vec<Method>>>()?),
                "alpha" => alphas = list("alpha")?,
                "delta" => deltas = Some(list("delta")?),
                "replicates" => replicates = Some(num("replicates")?),
                "seed" => seed = value.parse().map_err(|_| bad("seed"))?,
                "ggf.bootstrap" => config.ggf.bootstrap = num("ggf.bootstrap")?,
                "ggf.p" => {
                    config.ggf.p = num("ggf.p")?;
                    ggf_p_override = true;
                }
                "ggf.n_proj" => config.ggf.n_proj = num("ggf.n_proj")?,
                "mhr.n_null" => config.mhr.n_null = num("mhr.n_null")?,
                "mhr.kx" => config.mhr.kx = num("mhr.kx")?,
                "mhr.kt" => config.mhr.kt = num("mhr.kt")?,
                "hr.components" => config.hr_components = num("hr.components")?,
                "ksm.pve" => config.ksm.pve = value.parse().map_err(|_| bad("ksm.pve"))?,
                "ksm.calibration" => {
                    config.ksm.calibration = match value.to_ascii_lowercase().as_str() {
                        "chi2" | "chisquare" => KsmCalibration::ChiSquare,
                        "f" => KsmCalibration::F,
                        _ => return Err(bad("ksm.calibration")),
                    }
                }
                "ksm.sparse_scores" => ksm_sparse_scores = value.parse().map_err(|_| bad("ksm.sparse_scores"))?,
                other => return Err(Error::invalid(format!("line {}: unknown key `{other}`", lineno + 1))),
            }
        }
        let kind = kind.ok_or_else(|| Error::invalid("missing key `kind`"))?;
        let missing = |k: &str| Error::invalid(format!("missing key `{k}`"));
        let deltas = match (kind, deltas) {
            (_, Some(d)) => d,
            (StudyKind::Size, None) => vec![0.0],
            (StudyKind::Power, None) => return Err(missing("delta")),
        };
        let spec = Self {
            kind,
            setting: setting.ok_or_else(|| missing("setting"))?,
            design,
            n: n.ok_or_else(|| missing("n"))?,
            methods: methods.ok_or_else(|| missing("methods"))?,
            alphas,
            deltas,
            replicates: replicates.ok_or_else(|| missing("replicates"))?,
            seed,
            config,
            ggf_p_override,
            ksm_sparse_scores,
        };
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub setting: SettingId,
    pub design: Design,
    pub method: Method,
    pub n: usize,
    pub alpha: f64,
    pub delta: f64,
    pub rate: f64,
    pub se: f64,
    /// Replicates with a p-value.
    pub replicates: usize,
    pub failures: usize,
    pub unreliable: bool,
}

/// `sqrt(rate (1 − rate) / r)`.
pub fn binomial_se(rate: f64, r: usize) -> f64 {
    if r == 0 {
        return f64::NAN;
    }
    (rate * (1.0 - rate) / r as f64).sqrt()
}

/// p-values of one replicate, one entry per method.
fn replicate(spec: &StudySpec, cfg: &TestConfig, delta: f64, stream: RngStream) -> Vec<std::result::Result<f64, String>> {
    let setting = SimulationSetting::new(spec.setting, delta, spec.n, Design::Dense);
    let prepared = generate(&setting, stream.substream(0)).and_then(|ds| {
        if spec.design == Design::Dense {
            return Ok((ds, None));
        }
        let sp = sparsify(&ds, spec.setting, spec.design, stream.substream(1))?;
        let imputed = impute_sparse(&sp, ds.grid(), IMPUTE_PVE)?;
        let scores = if spec.ksm_sparse_scores {
            let sf = fit_sparse_fpca(&sp, ds.grid(), SparseOptions::default())?;
            Some(sf.fit)
        } else {
            None
        };
        Ok((imputed, scores))
    });
    let (ds, sparse_fit) = match prepared {
        Ok(v) => v,
        Err(e) => return spec.methods.iter().map(|_| Err(e.to_string())).collect(),
    };
    let h = spec.setting.hypothesis();
    spec.methods
        .iter()
        .enumerate()
        .map(|(k, &m)| {
            let s = stream.substream(2 + k as u64);
            let res = match (&sparse_fit, m) {
                (Some(fit), Method::Ksm) => ksm_from_fit(fit, ds.y(), &cfg.ksm),
                _ => run_test(&ds, m, h, cfg, s),
            };
            res.map(|r| r.p_value).map_err(|e| e.to_string())
        })
        .collect()
}

/// Runs every replicate and aggregates rejection rates. Rows are ordered by
/// delta, then method, then alpha.
pub fn run_study(spec: &StudySpec) -> Result<Vec<ResultRow>> {
    spec.validate()?;
    let cfg = spec.effective_config();
    let mut rows = Vec::new();
    for (di, &delta) in spec.deltas.iter().enumerate() {
        let base = RngStream::new(spec.seed, di as u64);
        let outcomes: Vec<Vec<std::result::Result<f64, String>>> = (0..spec.replicates)
            .into_par_iter()
            .map(|r| replicate(spec, &cfg, delta, base.substream(r as u64)))
            .collect();
        for (k, &m) in spec.methods.iter().enumerate() {
            let ps: Vec<f64> = outcomes.iter().filter_map(|o| o[k].as_ref().ok().copied()).collect();
            let failures = spec.replicates - ps.len();
            for &alpha in &spec.alphas {
                let used = ps.len();
                let rejections = ps.iter().filter(|&&p| p <= alpha).count();
                let rate = if used == 0 { f64::NAN } else { rejections as f64 / used as f64 };
                rows.push(ResultRow {
                    setting: spec.setting,
                    design: spec.design,
                    method: m,
                    n: spec.n,
                    alpha,
                    delta,
                    rate,
                    se: binomial_se(rate, used),
                    replicates: used,
                    failures,
                    unreliable: failures as f64 > MAX_FAILURE_SHARE * spec.replicates as f64,
                });
            }
        }
    }
    Ok(rows)
}

/// Power study: one row per (method, delta, alpha), ordered by delta.
pub fn power_curve(spec: &StudySpec) -> Result<Vec<ResultRow>> {
    if spec.kind != StudyKind::Power {
        return Err(Error::invalid("power_curve needs a power study"));
    }
    let mut rows = run_study(spec)?;
    rows.sort_by(|a, b| a.delta.total_cmp(&b.delta));
    Ok(rows)
}

pub const CSV_HEADER: &str = "setting,design,method,n,alpha,delta,rate,se,R,failures";

/// CSV text with LF line endings.
pub fn rows_to_csv(rows: &[ResultRow]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            r.setting, r.design, r.method, r.n, r.alpha, r.delta, r.rate, r.se, r.replicates, r.failures
        );
    }
    out
}

#[derive(Debug, Serialize)]
struct Sidecar<'a> {
    spec: &'a StudySpec,
    wall_clock_seconds: f64,
    unreliable_rows: Vec<usize>,
    rows: &'a [ResultRow],
}

/// Writes `<stem>.csv` and `<stem>.json` into `dir`.
pub fn write_study(dir: &Path, stem: &str, spec: &StudySpec, rows: &[ResultRow], wall_clock_seconds: f64) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join(format!("{stem}.csv")), rows_to_csv(rows))?;
    let side = Sidecar {
        spec,
        wall_clock_seconds,
        unreliable_rows: rows.iter().enumerate().filter(|(_, r)| r.unreliable).map(|(i, _)| i).collect(),
        rows,
    };
    let mut f = std::fs::File::create(dir.join(format!("{stem}.json")))?;
    serde_json::to_writer_pretty(&mut f, &side).map_err(|e| Error::invalid(e.to_string()))?;
    f.write_all(b"\n")?;
    Ok(())
}
