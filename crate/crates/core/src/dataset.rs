//! Synthetic data for the two benchmark systems, z-score normalization and
//! CSV persistence.
//!
//! A [`Dataset`] stores variables as rows and samples as columns. On disk the
//! orientation is flipped: one CSV row per sample, one column per variable,
//! with a header of variable names.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{Matrix, Rng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub means: Vec<f64>,
    pub scales: Vec<f64>,
}

impl NormStats {
    pub fn normalize_value(&self, var: usize, raw: f64) -> f64 {
        (raw - self.means[var]) / self.scales[var]
    }

    pub fn denormalize_value(&self, var: usize, z: f64) -> f64 {
        z * self.scales[var] + self.means[var]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    /// `n` variables by `N` samples.
    pub x: Matrix,
    pub names: Vec<String>,
    /// Present when `x` holds normalized values.
    pub norm: Option<NormStats>,
}

impl Dataset {
    pub fn new(x: Matrix, names: Vec<String>) -> Result<Self> {
        if names.len() != x.rows() {
            return Err(Error::DimensionMismatch(format!(
                "{} names for {} variables",
                names.len(),
                x.rows()
            )));
        }
        if !x.is_finite() {
            return Err(Error::Contract("dataset contains non-finite values".into()));
        }
        Ok(Dataset {
            x,
            names,
            norm: None,
        })
    }

    pub fn n_vars(&self) -> usize {
        self.x.rows()
    }

    pub fn n_samples(&self) -> usize {
        self.x.cols()
    }

    pub fn is_normalized(&self) -> bool {
        self.norm.is_some()
    }

    pub fn var(&self, i: usize) -> &[f64] {
        self.x.row(i)
    }

    /// Column `j` as a vector of variable values.
    pub fn sample(&self, j: usize) -> Vec<f64> {
        self.x.col(j)
    }
}

fn default_names(n: usize) -> Vec<String> {
    (1..=n).map(|i| format!("x{i}")).collect()
}

/// `x1` uniform on `[-half_range, half_range]`, `x2 = tanh(3 x1)` exactly.
pub fn gen_two_var(n_samples: usize, rng: &mut Rng, half_range: f64) -> Result<Dataset> {
    if n_samples < 2 {
        return Err(Error::Contract("need at least two samples".into()));
    }
    let mut x = Matrix::zeros(2, n_samples);
    for j in 0..n_samples {
        let x1 = rng.uniform(-half_range, half_range);
        x[(0, j)] = x1;
        x[(1, j)] = (3.0 * x1).tanh();
    }
    Dataset::new(x, default_names(2))
}

/// Five variables: `x1..x3` uniform, `x4 = sin(3 x1) + e4`,
/// `x5 = x2 - tan(0.5 x3) + e5` with Gaussian noise of variance `noise_var`.
pub fn gen_five_var(
    n_samples: usize,
    rng: &mut Rng,
    half_range: f64,
    noise_var: f64,
) -> Result<Dataset> {
    if n_samples < 2 {
        return Err(Error::Contract("need at least two samples".into()));
    }
    if !(noise_var >= 0.0) {
        return Err(Error::Contract("noise variance must be nonnegative".into()));
    }
    let std_dev = noise_var.sqrt();
    let mut x = Matrix::zeros(5, n_samples);
    for j in 0..n_samples {
        for i in 0..3 {
            x[(i, j)] = rng.uniform(-half_range, half_range);
        }
    }
    for j in 0..n_samples {
        let (x1, x2, x3) = (x[(0, j)], x[(1, j)], x[(2, j)]);
        x[(3, j)] = (3.0 * x1).sin() + rng.normal(0.0, std_dev);
        x[(4, j)] = x2 - (0.5 * x3).tan() + rng.normal(0.0, std_dev);
    }
    Dataset::new(x, default_names(5))
}

/// Per-variable z-score: mean 0, sample variance 1.
pub fn normalize(d: &Dataset) -> Result<Dataset> {
    let means = d.x.row_means();
    let scales: Vec<f64> = d.x.row_variances().into_iter().map(f64::sqrt).collect();
    for (row, s) in scales.iter().enumerate() {
        if !(*s > 0.0) {
            return Err(Error::DegenerateVariable {
                row,
                name: d.names[row].clone(),
            });
        }
    }
    let stats = NormStats { means, scales };
    Ok(apply_norm(d, stats))
}

/// Normalizes `d` with statistics computed elsewhere (e.g. on training data).
pub fn apply_norm(d: &Dataset, stats: NormStats) -> Dataset {
    let x = Matrix::from_fn(d.n_vars(), d.n_samples(), |i, j| {
        stats.normalize_value(i, d.x[(i, j)])
    });
    Dataset {
        x,
        names: d.names.clone(),
        norm: Some(stats),
    }
}

/// Inverse of [`normalize`]. A dataset without statistics is returned as is.
pub fn denormalize(d: &Dataset) -> Dataset {
    match &d.norm {
        None => d.clone(),
        Some(stats) => Dataset {
            x: Matrix::from_fn(d.n_vars(), d.n_samples(), |i, j| {
                stats.denormalize_value(i, d.x[(i, j)])
            }),
            names: d.names.clone(),
            norm: None,
        },
    }
}

/// Writes one row per sample. Values use the shortest decimal form that
/// parses back to the identical `f64`.
pub fn save_csv(d: &Dataset, path: &Path) -> Result<()> {
    let file = File::create(path)?;
    write_csv(d, BufWriter::new(file))
}

pub fn write_csv<W: Write>(d: &Dataset, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(&d.names).map_err(csv_io)?;
    let mut record = Vec::with_capacity(d.n_vars());
    for j in 0..d.n_samples() {
        record.clear();
        record.extend((0..d.n_vars()).map(|i| format!("{}", d.x[(i, j)])));
        w.write_record(&record).map_err(csv_io)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_io(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Parse {
            line: 0,
            message: format!("{other:?}"),
        },
    }
}

pub fn load_csv(path: &Path) -> Result<Dataset> {
    read_csv(BufReader::new(File::open(path)?))
}

pub fn read_csv<R: Read>(input: R) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(input);
    let parse_err = |e: csv::Error| {
        let line = e.position().map_or(0, |p| p.line());
        match e.into_kind() {
            csv::ErrorKind::UnequalLengths {
                expected_len, len, ..
            } => Error::Parse {
                line,
                message: format!("expected {expected_len} fields, found {len}"),
            },
            csv::ErrorKind::Io(io) => Error::Io(io),
            other => Error::Parse {
                line,
                message: format!("{other:?}"),
            },
        }
    };
    let names: Vec<String> = reader
        .headers()
        .map_err(parse_err)?
        .iter()
        .map(str::to_owned)
        .collect();
    if names.is_empty() || names.iter().all(String::is_empty) {
        return Err(Error::Parse {
            line: 1,
            message: "missing header row".into(),
        });
    }

    let n = names.len();
    let mut columns: Vec<Vec<f64>> = vec![Vec::new(); n];
    for record in reader.records() {
        let record = record.map_err(parse_err)?;
        let line = record.position().map_or(0, |p| p.line());
        for (i, cell) in record.iter().enumerate() {
            let v: f64 = cell.parse().map_err(|_| Error::Parse {
                line,
                message: format!("non-numeric value {cell:?} in column `{}`", names[i]),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    line,
                    message: format!("non-finite value in column `{}`", names[i]),
                });
            }
            columns[i].push(v);
        }
    }
    let n_samples = columns[0].len();
    if n_samples == 0 {
        return Err(Error::Parse {
            line: 2,
            message: "no data rows".into(),
        });
    }
    let data = columns.into_iter().flatten().collect();
    Dataset::new(Matrix::from_vec(n, n_samples, data)?, names)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_var_satisfies_generator_exactly() {
        let d = gen_two_var(500, &mut Rng::new(11), 1.0).unwrap();
        for j in 0..d.n_samples() {
            assert_eq!(d.x[(1, j)] - (3.0 * d.x[(0, j)]).tanh(), 0.0);
            assert!(d.x[(0, j)].abs() <= 1.0);
        }
    }

    #[test]
    fn tanh_at_two_tenths() {
        // x1 = 0.2 maps to tanh(0.6)
        let e = 1.2f64.exp();
        let reference = (e - 1.0) / (e + 1.0);
        assert!(((3.0f64 * 0.2).tanh() - reference).abs() < 1e-15);
        assert!((reference - 0.537050).abs() < 1e-6);
    }

    #[test]
    fn two_var_mean_near_zero() {
        let d = gen_two_var(100_000, &mut Rng::new(5), 2.0).unwrap();
        let mean = d.x.row_means()[0];
        assert!(mean.abs() <= 0.01 * 2.0);
    }

    #[test]
    fn five_var_noise_free_satisfies_both_relations() {
        let d = gen_five_var(200, &mut Rng::new(3), 1.0, 0.0).unwrap();
        for j in 0..d.n_samples() {
            let s = d.sample(j);
            assert_eq!(s[3] - (3.0 * s[0]).sin(), 0.0);
            // x5 = x2 - t then x5 - x2 + t, exact up to one rounding each
            assert!((s[4] - s[1] + (0.5 * s[2]).tan()).abs() <= 4.0 * f64::EPSILON);
        }
    }

    #[test]
    fn five_var_noise_variance_band() {
        let d = gen_five_var(300, &mut Rng::new(9), 1.0, 0.1).unwrap();
        let resid = Matrix::from_fn(1, 300, |_, j| d.x[(3, j)] - (3.0 * d.x[(0, j)]).sin());
        let v = resid.row_variances()[0];
        assert!((0.05..=0.18).contains(&v), "sample variance {v}");
    }

    #[test]
    fn generators_are_seed_deterministic() {
        let a = gen_five_var(50, &mut Rng::new(1), 1.0, 0.1).unwrap();
        let b = gen_five_var(50, &mut Rng::new(1), 1.0, 0.1).unwrap();
        assert_eq!(a, b);
        assert!(gen_two_var(1, &mut Rng::new(1), 1.0).is_err());
    }

    #[test]
    fn normalize_standardizes_rows() {
        let d = Dataset::new(Matrix::from_rows(&[[1.0, 2.0, 3.0]]), vec!["a".into()]).unwrap();
        let z = normalize(&d).unwrap();
        assert!(z.x.row_means()[0].abs() <= 1e-12);
        assert!((z.x.row_variances()[0] - 1.0).abs() <= 1e-10);
        assert_eq!(z.norm.as_ref().unwrap().means, vec![2.0]);
    }

    #[test]
    fn normalize_is_fixed_point_on_standard_rows() {
        let d = Dataset::new(
            Matrix::from_rows(&[[-1.0, 0.0, 1.0], [1.0, 0.0, -1.0]]),
            default_names(2),
        )
        .unwrap();
        let z = normalize(&d).unwrap();
        assert!(z.x.sub(&d.x).unwrap().max_abs() <= 1e-12);
    }

    #[test]
    fn zero_variance_names_the_row() {
        let d = Dataset::new(
            Matrix::from_rows(&[[1.0, 2.0], [4.0, 4.0]]),
            vec!["a".into(), "flat".into()],
        )
        .unwrap();
        match normalize(&d) {
            Err(Error::DegenerateVariable { row, name }) => {
                assert_eq!(row, 1);
                assert_eq!(name, "flat");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn csv_round_trip() {
        let d = Dataset::new(
            Matrix::from_rows(&[[0.1, -2.5e-17, 3.0], [1.0 / 3.0, 1e300, -0.0]]),
            vec!["u".into(), "v".into()],
        )
        .unwrap();
        let mut buf = Vec::new();
        write_csv(&d, &mut buf).unwrap();
        let back = read_csv(buf.as_slice()).unwrap();
        assert_eq!(back, d);
    }

    #[test]
    fn csv_text_cell_reports_line() {
        let text = "a,b\n1,2\n3,4\nfoo,6\n";
        match read_csv(text.as_bytes()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 4),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn csv_ragged_row_reports_line() {
        let text = "a,b\n1,2\n3\n";
        match read_csv(text.as_bytes()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn csv_empty_is_error() {
        assert!(matches!(read_csv("".as_bytes()), Err(Error::Parse { .. })));
        assert!(matches!(
            read_csv("a,b\n".as_bytes()),
            Err(Error::Parse { .. })
        ));
    }
}
