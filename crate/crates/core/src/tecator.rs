//! Tecator meat spectra: ingestion and the nullity/linearity analysis of fat,
//! water and protein content against the absorbance curves.
//!
//! Input is CSV with a header row, 100 absorbance columns followed by `fat`,
//! `water`, `protein`, and one row per sample. `docs/tecator.md` describes how
//! to produce it from the public distributions.

use std::io::Read;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::funcdata::{center_curves, make_uniform_grid, FunctionalDataset, Grid};
use crate::rng::RngStream;
use crate::testing::{run_test, Hypothesis, Method, TestConfig};

pub const N_SAMPLES: usize = 215;
pub const N_CHANNELS: usize = 100;
pub const WAVELENGTH_START: f64 = 850.0;
pub const WAVELENGTH_END: f64 = 1050.0;
/// 0.05 split over the three tests run per response and hypothesis.
pub const BONFERRONI_ALPHA: f64 = 0.05 / 3.0;

pub const RESPONSES: [&str; 3] = ["fat", "water", "protein"];

#[derive(Debug, Clone, PartialEq)]
pub struct TecatorDataset {
    /// 215 × 100 absorbances.
    pub absorbance: DMatrix<f64>,
    pub fat: Vec<f64>,
    pub water: Vec<f64>,
    pub protein: Vec<f64>,
    /// Channel wavelengths in nm.
    pub wavelengths: Grid,
}

impl TecatorDataset {
    pub fn n(&self) -> usize {
        self.absorbance.nrows()
    }

    pub fn response(&self, name: &str) -> Option<&[f64]> {
        match name {
            "fat" => Some(&self.fat),
            "water" => Some(&self.water),
            "protein" => Some(&self.protein),
            _ => None,
        }
    }
}

pub fn parse_tecator(path: &Path) -> Result<TecatorDataset> {
    parse_tecator_reader(std::fs::File::open(path)?)
}

pub fn parse_tecator_reader<R: Read>(reader: R) -> Result<TecatorDataset> {
    let width = N_CHANNELS + 3;
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).flexible(true).from_reader(reader);
    let header = rdr.headers().map_err(|e| Error::Parse { row: 0, col: 0, msg: e.to_string() })?.clone();
    if header.len() != width {
        return Err(Error::Shape(format!(
            "expected {N_CHANNELS} absorbance channels plus fat, water, protein ({width} columns), found {} columns",
            header.len()
        )));
    }
    let tail: Vec<String> = header.iter().skip(N_CHANNELS).map(|s| s.trim().to_ascii_lowercase()).collect();
    if tail != RESPONSES {
        return Err(Error::Parse {
            row: 0,
            col: N_CHANNELS,
            msg: format!("last three columns must be fat, water, protein, found {tail:?}"),
        });
    }
    let mut values = Vec::with_capacity(N_SAMPLES * N_CHANNELS);
    let mut resp = [Vec::new(), Vec::new(), Vec::new()];
    let mut rows = 0;
    for (r, record) in rdr.records().enumerate() {
        let row = r + 1;
        let record = record.map_err(|e| Error::Parse { row, col: 0, msg: e.to_string() })?;
        if record.len() != width {
            return Err(Error::Parse {
                row,
                col: record.len().min(width),
                msg: format!("expected {width} fields, found {}", record.len()),
            });
        }
        for (c, field) in record.iter().enumerate() {
            let v: f64 = field
                .trim()
                .parse()
                .ok()
                .filter(|v: &f64| v.is_finite())
                .ok_or_else(|| Error::Parse { row, col: c, msg: format!("{field:?} is not a finite number") })?;
            if c < N_CHANNELS {
                values.push(v);
            } else {
                resp[c - N_CHANNELS].push(v);
            }
        }
        rows += 1;
    }
    if rows != N_SAMPLES {
        return Err(Error::Shape(format!("expected {N_SAMPLES} samples, found {rows}")));
    }
    let [fat, water, protein] = resp;
    Ok(TecatorDataset {
        absorbance: DMatrix::from_row_slice(rows, N_CHANNELS, &values),
        fat,
        water,
        protein,
        wavelengths: make_uniform_grid(N_CHANNELS, WAVELENGTH_START, WAVELENGTH_END)?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TecatorCell {
    pub response: String,
    pub hypothesis: Hypothesis,
    pub method: Method,
    pub statistic: Option<f64>,
    pub p_value: Option<f64>,
    pub significant: Option<bool>,
    pub error: Option<String>,
}

/// The nine nullity and nine linearity tests. Curves are centered and the
/// wavelength axis is mapped to [0, 1]; every statistic is invariant to that
/// affine change of argument. Cell `k` uses `RngStream::new(seed, k)`.
pub fn analyze_tecator(ds: &TecatorDataset, seed: u64, config: &TestConfig) -> Result<Vec<TecatorCell>> {
    let grid = make_uniform_grid(ds.absorbance.ncols(), 0.0, 1.0)?;
    let mut cells = Vec::new();
    let mut k = 0u64;
    for name in RESPONSES {
        let y = ds.response(name).expect("known response").to_vec();
        let (centered, _) = center_curves(&FunctionalDataset::new(y, ds.absorbance.clone(), grid.clone())?);
        for (hyp, methods) in [
            (Hypothesis::Nullity, [Method::Ggf, Method::Mhr, Method::Ksm]),
            (Hypothesis::Linearity, [Method::Ggf, Method::Mhr, Method::Hr]),
        ] {
            for m in methods {
                let res = run_test(&centered, m, hyp, config, RngStream::new(seed, k));
                k += 1;
                cells.push(match res {
                    Ok(r) => TecatorCell {
                        response: name.to_string(),
                        hypothesis: hyp,
                        method: m,
                        statistic: Some(r.statistic),
                        p_value: Some(r.p_value),
                        significant: Some(r.p_value < BONFERRONI_ALPHA),
                        error: None,
                    },
                    Err(e) => TecatorCell {
                        response: name.to_string(),
                        hypothesis: hyp,
                        method: m,
                        statistic: None,
                        p_value: None,
                        significant: None,
                        error: Some(e.to_string()),
                    },
                });
            }
        }
    }
    Ok(cells)
}

pub const TECATOR_CSV_HEADER: &str = "response,hypothesis,method,statistic,p_value,significant,error";

/// CSV with LF line endings; failed cells leave the numeric fields empty.
pub fn tecator_csv(cells: &[TecatorCell]) -> String {
    let mut out = String::from(TECATOR_CSV_HEADER);
    out.push('\n');
    for c in cells {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        let err = c.error.as_deref().unwrap_or("").replace(['"', ',', '\n'], " ");
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            c.response,
            c.hypothesis,
            c.method,
            opt(c.statistic),
            opt(c.p_value),
            c.significant.map(|b| b.to_string()).unwrap_or_default(),
            err
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn synthetic_csv(rows: usize, channels: usize) -> String {
        let mut s: Vec<String> = (1..=channels).map(|j| format!("a{j:03}")).collect();
        s.extend(RESPONSES.iter().map(|r| r.to_string()));
        let mut out = s.join(",") + "\n";
        for i in 0..rows {
            let mut row: Vec<String> = (0..channels).map(|j| format!("{}", 2.0 + 0.01 * ((i * 7 + j) % 13) as f64)).collect();
            row.extend([format!("{}", i % 40), format!("{}", 60 - i % 30), format!("{}", 15 + i % 5)]);
            out += &(row.join(",") + "\n");
        }
        out
    }

    #[test]
    fn parses_valid_file() {
        let ds = parse_tecator_reader(synthetic_csv(215, 100).as_bytes()).unwrap();
        assert_eq!(ds.n(), 215);
        assert_eq!(ds.absorbance.ncols(), 100);
        assert_eq!(ds.fat[41], 1.0);
        assert_eq!(ds.wavelengths.start(), 850.0);
        assert_eq!(ds.wavelengths.end(), 1050.0);
    }

    #[test]
    fn shape_errors() {
        match parse_tecator_reader(synthetic_csv(215, 99).as_bytes()) {
            Err(Error::Shape(msg)) => assert!(msg.contains("100"), "{msg}"),
            other => panic!("{other:?}"),
        }
        assert!(matches!(parse_tecator_reader(synthetic_csv(214, 100).as_bytes()), Err(Error::Shape(_))));
    }

    #[test]
    fn na_cell_is_located() {
        let text = synthetic_csv(215, 100);
        let mut lines: Vec<String> = text.lines().map(str::to_string).collect();
        let mut fields: Vec<String> = lines[3].split(',').map(str::to_string).collect();
        fields[17] = "NA".into();
        lines[3] = fields.join(",");
        match parse_tecator_reader(lines.join("\n").as_bytes()) {
            Err(Error::Parse { row, col, .. }) => assert_eq!((row, col), (3, 17)),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn short_row_is_located() {
        let text = synthetic_csv(215, 100);
        let mut lines: Vec<String> = text.lines().map(str::to_string).collect();
        lines[5] = lines[5].rsplit_once(',').unwrap().0.to_string();
        assert!(matches!(parse_tecator_reader(lines.join("\n").as_bytes()), Err(Error::Parse { row: 5, .. })));
    }

    #[test]
    fn csv_layout() {
        let cells = vec![
            TecatorCell {
                response: "fat".into(),
                hypothesis: Hypothesis::Linearity,
                method: Method::Hr,
                statistic: Some(3.5),
                p_value: Some(0.001),
                significant: Some(true),
                error: None,
            },
            TecatorCell {
                response: "fat".into(),
                hypothesis: Hypothesis::Nullity,
                method: Method::Ggf,
                statistic: None,
                p_value: None,
                significant: None,
                error: Some("singular design: x, y".into()),
            },
        ];
        let csv = tecator_csv(&cells);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], TECATOR_CSV_HEADER);
        assert_eq!(lines[1], "fat,linear,hr,3.5,0.001,true,");
        assert_eq!(lines[2].split(',').count(), 7);
    }
}
