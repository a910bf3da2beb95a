//! Curve containers, grids and trapezoid quadrature.

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Ordered evaluation points with trapezoid quadrature weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    points: Vec<f64>,
    weights: Vec<f64>,
}

impl Grid {
    /// Builds a grid on arbitrary strictly increasing points, attaching
    /// trapezoid weights.
    pub fn from_points(points: Vec<f64>) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::invalid("a grid needs at least two points"));
        }
        if points.iter().any(|p| !p.is_finite()) {
            return Err(Error::invalid("grid points must be finite"));
        }
        if points.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::invalid("grid points must be strictly increasing"));
        }
        let m = points.len();
        let mut weights = vec![0.0; m];
        for j in 0..m - 1 {
            let h = points[j + 1] - points[j];
            weights[j] += 0.5 * h;
            weights[j + 1] += 0.5 * h;
        }
        Ok(Self { points, weights })
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn start(&self) -> f64 {
        self.points[0]
    }

    pub fn end(&self) -> f64 {
        self.points[self.points.len() - 1]
    }

    pub fn domain_length(&self) -> f64 {
        self.end() - self.start()
    }

    /// Index of the grid point nearest to `x`.
    pub fn nearest_index(&self, x: f64) -> usize {
        match self.points.binary_search_by(|p| p.total_cmp(&x)) {
            Ok(i) => i,
            Err(0) => 0,
            Err(i) if i == self.points.len() => i - 1,
            Err(i) => {
                if x - self.points[i - 1] <= self.points[i] - x {
                    i - 1
                } else {
                    i
                }
            }
        }
    }
}

/// `n_points` equispaced points on `[a, b]` with trapezoid weights.
pub fn make_uniform_grid(n_points: usize, a: f64, b: f64) -> Result<Grid> {
    if n_points < 2 {
        return Err(Error::invalid(format!("n_points must be >= 2, got {n_points}")));
    }
    if !(a < b) {
        return Err(Error::invalid(format!("need a < b, got [{a}, {b}]")));
    }
    let step = (b - a) / (n_points - 1) as f64;
    let mut points: Vec<f64> = (0..n_points).map(|j| a + step * j as f64).collect();
    points[n_points - 1] = b;
    Grid::from_points(points)
}

/// Quadrature approximation of `∫ f g`.
pub fn inner_product(f: &[f64], g: &[f64], grid: &Grid) -> Result<f64> {
    if f.len() != grid.len() || g.len() != grid.len() {
        return Err(Error::invalid(format!(
            "length mismatch: f={}, g={}, grid={}",
            f.len(),
            g.len(),
            grid.len()
        )));
    }
    Ok(weighted_dot(f, g, grid.weights()))
}

pub(crate) fn weighted_dot(f: &[f64], g: &[f64], w: &[f64]) -> f64 {
    f.iter().zip(g).zip(w).map(|((a, b), w)| a * b * w).sum()
}

/// Densely observed curves on a shared grid, each paired with a scalar response.
#[derive(Debug, Clone, PartialEq)]
pub struct FunctionalDataset {
    y: Vec<f64>,
    curves: DMatrix<f64>,
    grid: Grid,
}

impl FunctionalDataset {
    pub fn new(y: Vec<f64>, curves: DMatrix<f64>, grid: Grid) -> Result<Self> {
        if y.is_empty() {
            return Err(Error::invalid("dataset needs at least one subject"));
        }
        if curves.nrows() != y.len() {
            return Err(Error::invalid(format!(
                "{} responses but {} curves",
                y.len(),
                curves.nrows()
            )));
        }
        if curves.ncols() != grid.len() {
            return Err(Error::invalid(format!(
                "curves have {} columns but grid has {} points",
                curves.ncols(),
                grid.len()
            )));
        }
        if y.iter().any(|v| !v.is_finite()) || curves.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("dataset contains non-finite values"));
        }
        Ok(Self { y, curves, grid })
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn curves(&self) -> &DMatrix<f64> {
        &self.curves
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn curve(&self, i: usize) -> Vec<f64> {
        self.curves.row(i).iter().copied().collect()
    }

    /// Same curves, different response.
    pub fn with_response(&self, y: Vec<f64>) -> Result<Self> {
        Self::new(y, self.curves.clone(), self.grid.clone())
    }

    /// `∫ X_i(t) g(t) dt` for every subject.
    pub fn integrate_against(&self, g: &[f64]) -> Result<DVector<f64>> {
        if g.len() != self.grid.len() {
            return Err(Error::invalid("weight function length differs from grid"));
        }
        let wg = DVector::from_iterator(g.len(), g.iter().zip(self.grid.weights()).map(|(a, w)| a * w));
        Ok(&self.curves * wg)
    }

    /// Reads the CSV layout written by [`FunctionalDataset::write_csv`].
    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::from_csv_reader(file)
    }

    pub fn from_csv_reader<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
        let header = rdr
            .headers()
            .map_err(|e| Error::Parse { row: 0, col: 0, msg: e.to_string() })?
            .clone();
        if header.len() < 3 {
            return Err(Error::Shape(format!(
                "expected a y column and at least two grid columns, found {} columns",
                header.len()
            )));
        }
        let points = header
            .iter()
            .enumerate()
            .skip(1)
            .map(|(c, s)| {
                s.trim().parse::<f64>().map_err(|_| Error::Parse {
                    row: 0,
                    col: c,
                    msg: format!("grid point {s:?} is not a number"),
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        let grid = Grid::from_points(points)?;
        let width = header.len();
        let mut y = Vec::new();
        let mut values = Vec::new();
        for (r, record) in rdr.records().enumerate() {
            let row = r + 1;
            let record = record.map_err(|e| Error::Parse { row, col: 0, msg: e.to_string() })?;
            if record.len() != width {
                return Err(Error::Parse {
                    row,
                    col: record.len(),
                    msg: format!("expected {width} fields, found {}", record.len()),
                });
            }
            for (c, field) in record.iter().enumerate() {
                let v: f64 = field.trim().parse().map_err(|_| Error::Parse {
                    row,
                    col: c,
                    msg: format!("{field:?} is not a number"),
                })?;
                if c == 0 {
                    y.push(v);
                } else {
                    values.push(v);
                }
            }
        }
        let n = y.len();
        let curves = DMatrix::from_row_slice(n, width - 1, &values);
        Self::new(y, curves, grid)
    }

    /// Header row `y,t_1,...,t_J`, then one row per subject.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(writer);
        let mut header = vec!["y".to_string()];
        header.extend(self.grid.points().iter().map(|p| format!("{p:?}")));
        wtr.write_record(&header).map_err(csv_io)?;
        for i in 0..self.n() {
            let mut row = vec![format!("{:?}", self.y[i])];
            row.extend(self.curves.row(i).iter().map(|v| format!("{v:?}")));
            wtr.write_record(&row).map_err(csv_io)?;
        }
        wtr.flush()?;
        Ok(())
    }
}

fn csv_io(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

/// Subtracts the pointwise mean curve. Returns the centered dataset and the mean.
pub fn center_curves(ds: &FunctionalDataset) -> (FunctionalDataset, Vec<f64>) {
    let n = ds.n() as f64;
    let mean: Vec<f64> = ds.curves.column_iter().map(|c| c.sum() / n).collect();
    let mut curves = ds.curves.clone();
    for (j, mut col) in curves.column_iter_mut().enumerate() {
        col.add_scalar_mut(-mean[j]);
    }
    let centered = FunctionalDataset { y: ds.y.clone(), curves, grid: ds.grid.clone() };
    (centered, mean)
}

/// Irregularly observed curves: per subject, strictly increasing `(t, x)` pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseFunctionalDataset {
    y: Vec<f64>,
    obs: Vec<Vec<(f64, f64)>>,
    domain: (f64, f64),
}

impl SparseFunctionalDataset {
    pub fn new(y: Vec<f64>, obs: Vec<Vec<(f64, f64)>>, domain: (f64, f64)) -> Result<Self> {
        if y.len() != obs.len() {
            return Err(Error::invalid(format!("{} responses but {} subjects", y.len(), obs.len())));
        }
        if y.is_empty() {
            return Err(Error::invalid("dataset needs at least one subject"));
        }
        if !(domain.0 < domain.1) {
            return Err(Error::invalid("empty domain"));
        }
        for (i, subject) in obs.iter().enumerate() {
            if subject.len() < 2 {
                return Err(Error::invalid(format!("subject {i} has fewer than two observations")));
            }
            if subject.iter().any(|&(t, x)| !t.is_finite() || !x.is_finite()) {
                return Err(Error::invalid(format!("subject {i} has non-finite observations")));
            }
            if subject.iter().any(|&(t, _)| t < domain.0 || t > domain.1) {
                return Err(Error::invalid(format!("subject {i} has points outside the domain")));
            }
            if subject.windows(2).any(|w| w[1].0 <= w[0].0) {
                return Err(Error::invalid(format!("subject {i} points are not strictly increasing")));
            }
        }
        Ok(Self { y, obs, domain })
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn obs(&self) -> &[Vec<(f64, f64)>] {
        &self.obs
    }

    pub fn domain(&self) -> (f64, f64) {
        self.domain
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn counts(&self) -> Vec<usize> {
        self.obs.iter().map(Vec::len).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    #[test]
    fn three_point_grid() {
        let g = make_uniform_grid(3, 0.0, 1.0).unwrap();
        assert_eq!(g.points(), &[0.0, 0.5, 1.0]);
        assert_eq!(g.weights(), &[0.25, 0.5, 0.25]);
    }

    #[test]
    fn weights_sum_to_domain_length() {
        let g = make_uniform_grid(201, 0.0, 1.0).unwrap();
        assert_eq!(g.len(), 201);
        assert!((g.weights().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let g = make_uniform_grid(2, 0.0, 10.0).unwrap();
        assert_eq!(g.weights(), &[5.0, 5.0]);
    }

    #[test]
    fn bad_grid_arguments() {
        assert!(matches!(make_uniform_grid(1, 0.0, 1.0), Err(Error::InvalidArgument(_))));
        assert!(matches!(make_uniform_grid(5, 1.0, 1.0), Err(Error::InvalidArgument(_))));
        assert!(matches!(make_uniform_grid(5, 2.0, 1.0), Err(Error::InvalidArgument(_))));
        assert!(Grid::from_points(vec![0.0, 0.5, 0.5]).is_err());
    }

    #[test]
    fn trig_inner_products() {
        let g = make_uniform_grid(201, 0.0, 1.0).unwrap();
        let s: Vec<f64> = g.points().iter().map(|t| (2.0 * PI * t).sin()).collect();
        let c: Vec<f64> = g.points().iter().map(|t| (2.0 * PI * t).cos()).collect();
        let zero = vec![0.0; 201];
        assert!((inner_product(&s, &s, &g).unwrap() - 0.5).abs() < 1e-3);
        assert!(inner_product(&s, &c, &g).unwrap().abs() < 1e-3);
        assert_eq!(inner_product(&zero, &c, &g).unwrap(), 0.0);
        assert!(inner_product(&s[..10], &c, &g).is_err());
    }

    #[test]
    fn exact_for_piecewise_linear() {
        // f(t) = 2t + 1 on a non-uniform grid, g = 1: trapezoid is exact.
        let g = Grid::from_points(vec![0.0, 0.1, 0.35, 0.5, 0.9, 1.0]).unwrap();
        let f: Vec<f64> = g.points().iter().map(|t| 2.0 * t + 1.0).collect();
        let one = vec![1.0; g.len()];
        assert!((inner_product(&f, &one, &g).unwrap() - 2.0).abs() < 1e-14);
        // piecewise-linear interpolant of |t - 0.35| times 1
        let h: Vec<f64> = g.points().iter().map(|t| (t - 0.35f64).abs()).collect();
        let exact = 0.5 * 0.35 * 0.35 + 0.5 * 0.65 * 0.65;
        assert!((inner_product(&h, &one, &g).unwrap() - exact).abs() < 1e-14);
    }

    fn toy(n: usize, m: usize, seed: u64) -> FunctionalDataset {
        use rand::Rng;
        let mut rng = crate::RngStream::new(seed, 0).rng();
        let curves = DMatrix::from_fn(n, m, |_, _| rng.random_range(-3.0..3.0));
        let y = (0..n).map(|i| i as f64).collect();
        FunctionalDataset::new(y, curves, make_uniform_grid(m, 0.0, 1.0).unwrap()).unwrap()
    }

    #[test]
    fn centering() {
        let ds = toy(5, 10, 1);
        let (c, mean) = center_curves(&ds);
        for col in c.curves().column_iter() {
            assert!(col.sum().abs() / 5.0 < 1e-12);
        }
        for j in 0..10 {
            let direct: f64 = ds.curves().column(j).sum() / 5.0;
            assert!((direct - mean[j]).abs() < 1e-15);
        }
        let (cc, _) = center_curves(&c);
        assert!((cc.curves() - c.curves()).abs().max() < 1e-14);

        let same = FunctionalDataset::new(
            vec![0.0; 3],
            DMatrix::from_fn(3, 4, |_, j| j as f64),
            make_uniform_grid(4, 0.0, 1.0).unwrap(),
        )
        .unwrap();
        assert!(center_curves(&same).0.curves().abs().max() < 1e-15);

        let sym = FunctionalDataset::new(
            vec![0.0; 2],
            DMatrix::from_fn(2, 4, |i, j| if i == 0 { j as f64 } else { -(j as f64) }),
            make_uniform_grid(4, 0.0, 1.0).unwrap(),
        )
        .unwrap();
        assert_eq!(center_curves(&sym).0.curves(), sym.curves());
    }

    #[test]
    fn csv_round_trip() {
        let ds = toy(4, 6, 2);
        let mut buf = Vec::new();
        ds.write_csv(&mut buf).unwrap();
        let back = FunctionalDataset::from_csv_reader(buf.as_slice()).unwrap();
        assert_eq!(back, ds);
    }

    #[test]
    fn csv_reports_bad_cell() {
        let text = "y,0,0.5,1\n1,2,3,4\n2,3,NA,5\n";
        match FunctionalDataset::from_csv_reader(text.as_bytes()) {
            Err(Error::Parse { row, col, .. }) => assert_eq!((row, col), (2, 2)),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn sparse_invariants() {
        let ok = SparseFunctionalDataset::new(vec![1.0], vec![vec![(0.0, 1.0), (0.5, 2.0)]], (0.0, 1.0));
        assert!(ok.is_ok());
        let short = SparseFunctionalDataset::new(vec![1.0], vec![vec![(0.0, 1.0)]], (0.0, 1.0));
        assert!(short.is_err());
        let unsorted = SparseFunctionalDataset::new(vec![1.0], vec![vec![(0.5, 1.0), (0.2, 2.0)]], (0.0, 1.0));
        assert!(unsorted.is_err());
        let outside = SparseFunctionalDataset::new(vec![1.0], vec![vec![(0.5, 1.0), (1.2, 2.0)]], (0.0, 1.0));
        assert!(outside.is_err());
    }

    proptest! {
        #[test]
        fn self_inner_product_nonnegative(v in proptest::collection::vec(-1e3f64..1e3, 7)) {
            let g = make_uniform_grid(7, -1.0, 2.0).unwrap();
            prop_assert!(inner_product(&v, &v, &g).unwrap() >= 0.0);
        }

        #[test]
        fn inner_product_symmetric_bilinear(
            f in proptest::collection::vec(-10f64..10.0, 9),
            g in proptest::collection::vec(-10f64..10.0, 9),
            a in -5f64..5.0,
        ) {
            let grid = make_uniform_grid(9, 0.0, 1.0).unwrap();
            let fg = inner_product(&f, &g, &grid).unwrap();
            let gf = inner_product(&g, &f, &grid).unwrap();
            prop_assert!((fg - gf).abs() < 1e-12);
            let af: Vec<f64> = f.iter().map(|x| a * x).collect();
            prop_assert!((inner_product(&af, &g, &grid).unwrap() - a * fg).abs() < 1e-9);
        }
    }
}
