//! Dataset container and CSV ingestion.
//!
//! A [`Dataset`] holds an outcome vector `y`, a -1/+1 treatment vector `t`,
//! and an `n x p` covariate matrix together with a per-column kind tag.
//! Continuous covariates are mapped to the unit interval by [`standardize`]
//! before any spline work; binary covariates pass through untouched.

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

/// How a covariate column enters the model.
///
/// `Continuous` columns get a B-spline expansion; `Binary` columns enter as a
/// single linear term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColKind {
    Continuous,
    Binary,
}

impl fmt::Display for ColKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ColKind::Continuous => write!(f, "continuous"),
            ColKind::Binary => write!(f, "binary"),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("length mismatch: y has {y}, t has {t}, x has {x} rows")]
    LengthMismatch { y: usize, t: usize, x: usize },
    #[error("col_kind has {got} entries but x has {expected} columns")]
    KindMismatch { got: usize, expected: usize },
    #[error("dataset must contain at least one covariate column")]
    NoCovariates,
    #[error("non-finite value in column `{col}` at row {row}")]
    NonFinite { col: String, row: usize },
    #[error("treatment at row {row} is {value}; expected -1 or 1 (or 0/1 in CSV input)")]
    BadTreatment { row: usize, value: f64 },
    #[error("all subjects are in one treatment arm; both arms are required")]
    SingleArm,
    #[error("column `{col}` is tagged binary but takes {count} distinct values")]
    NotBinary { col: String, count: usize },
    #[error("continuous column `{col}` is constant; cannot standardize")]
    ConstantColumn { col: String },
    #[error("csv file `{path}`: {source}")]
    Csv {
        path: String,
        #[source]
        source: csv::Error,
    },
    #[error("column `{col}` not found in csv header of `{path}`")]
    MissingColumn { col: String, path: String },
    #[error("cannot parse `{value}` in column `{col}` at row {row} as a number")]
    Parse {
        col: String,
        row: usize,
        value: String,
    },
    #[error("io error on `{path}`: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Outcome, treatment, and covariates for one sample of subjects.
#[derive(Debug, Clone)]
pub struct Dataset {
    y: Vec<f64>,
    t: Vec<i8>,
    x: Array2<f64>,
    col_kind: Vec<ColKind>,
    col_names: Vec<String>,
}

impl Dataset {
    /// Validates shapes and values and assembles a dataset.
    ///
    /// Treatment entries must be -1 or +1 and both arms must be present.
    /// Binary columns may take at most two distinct values.
    pub fn new(
        y: Vec<f64>,
        t: Vec<i8>,
        x: Array2<f64>,
        col_kind: Vec<ColKind>,
        col_names: Vec<String>,
    ) -> Result<Self, DatasetError> {
        let n = y.len();
        if t.len() != n || x.nrows() != n {
            return Err(DatasetError::LengthMismatch {
                y: n,
                t: t.len(),
                x: x.nrows(),
            });
        }
        let p = x.ncols();
        if p == 0 {
            return Err(DatasetError::NoCovariates);
        }
        if col_kind.len() != p {
            return Err(DatasetError::KindMismatch {
                got: col_kind.len(),
                expected: p,
            });
        }
        let col_names = if col_names.is_empty() {
            (0..p).map(|j| format!("x{}", j + 1)).collect()
        } else if col_names.len() != p {
            return Err(DatasetError::KindMismatch {
                got: col_names.len(),
                expected: p,
            });
        } else {
            col_names
        };
        for (i, v) in y.iter().enumerate() {
            if !v.is_finite() {
                return Err(DatasetError::NonFinite {
                    col: "y".into(),
                    row: i,
                });
            }
        }
        for (i, &ti) in t.iter().enumerate() {
            if ti != -1 && ti != 1 {
                return Err(DatasetError::BadTreatment {
                    row: i,
                    value: ti as f64,
                });
            }
        }
        if n > 0 {
            let treated = t.iter().filter(|&&ti| ti == 1).count();
            if treated == 0 || treated == n {
                return Err(DatasetError::SingleArm);
            }
        }
        for j in 0..p {
            for i in 0..n {
                if !x[(i, j)].is_finite() {
                    return Err(DatasetError::NonFinite {
                        col: col_names[j].clone(),
                        row: i,
                    });
                }
            }
        }
        for j in 0..p {
            if col_kind[j] == ColKind::Binary {
                let count = distinct_count(x.column(j).iter().copied(), 3);
                if count > 2 {
                    return Err(DatasetError::NotBinary {
                        col: col_names[j].clone(),
                        count,
                    });
                }
            }
        }
        Ok(Dataset {
            y,
            t,
            x,
            col_kind,
            col_names,
        })
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn t(&self) -> &[i8] {
        &self.t
    }

    pub fn x(&self) -> &Array2<f64> {
        &self.x
    }

    pub fn col_kind(&self) -> &[ColKind] {
        &self.col_kind
    }

    pub fn col_names(&self) -> &[String] {
        &self.col_names
    }

    /// Counts of (treated, control) subjects.
    pub fn arm_counts(&self) -> (usize, usize) {
        let treated = self.t.iter().filter(|&&ti| ti == 1).count();
        (treated, self.n() - treated)
    }

    /// Builds a new dataset keeping the given covariate columns, in order.
    pub fn select_columns(&self, keep: &[usize]) -> Result<Self, DatasetError> {
        let x = Array2::from_shape_fn((self.n(), keep.len()), |(i, k)| self.x[(i, keep[k])]);
        Dataset::new(
            self.y.clone(),
            self.t.clone(),
            x,
            keep.iter().map(|&j| self.col_kind[j]).collect(),
            keep.iter().map(|&j| self.col_names[j].clone()).collect(),
        )
    }

    /// Builds a new dataset from the given row indices (repeats allowed).
    pub fn select_rows(&self, rows: &[usize]) -> Result<Self, DatasetError> {
        let x = Array2::from_shape_fn((rows.len(), self.p()), |(i, j)| self.x[(rows[i], j)]);
        Dataset::new(
            rows.iter().map(|&i| self.y[i]).collect(),
            rows.iter().map(|&i| self.t[i]).collect(),
            x,
            self.col_kind.clone(),
            self.col_names.clone(),
        )
    }
}

fn distinct_count<I: Iterator<Item = f64>>(values: I, stop_at: usize) -> usize {
    let mut seen: Vec<f64> = Vec::new();
    for v in values {
        if !seen.iter().any(|&s| s == v) {
            seen.push(v);
            if seen.len() >= stop_at {
                break;
            }
        }
    }
    seen.len()
}

/// Maps which CSV columns hold the outcome, treatment, and covariates.
///
/// With `covariates` unset, every remaining column is used in header order.
/// Column kinds are inferred (two or fewer distinct values means binary)
/// unless overridden through `kinds`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CsvSchema {
    pub outcome: String,
    pub treatment: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub covariates: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub kinds: BTreeMap<String, ColKind>,
}

impl CsvSchema {
    pub fn new(outcome: impl Into<String>, treatment: impl Into<String>) -> Self {
        CsvSchema {
            outcome: outcome.into(),
            treatment: treatment.into(),
            covariates: None,
            kinds: BTreeMap::new(),
        }
    }
}

/// Reads an RFC-4180 CSV file (header row required) into a [`Dataset`].
///
/// Lines starting with `#` are treated as comments and skipped, so files
/// written by the command-line tools (which embed their run configuration as
/// a leading comment) round-trip. Treatment values may be coded 0/1 or -1/+1.
pub fn load_dataset(path: impl AsRef<Path>, schema: &CsvSchema) -> Result<Dataset, DatasetError> {
    let path = path.as_ref();
    let path_str = path.display().to_string();
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|source| DatasetError::Csv {
            path: path_str.clone(),
            source,
        })?;
    let headers = reader
        .headers()
        .map_err(|source| DatasetError::Csv {
            path: path_str.clone(),
            source,
        })?
        .clone();
    let find = |col: &str| -> Result<usize, DatasetError> {
        headers
            .iter()
            .position(|h| h == col)
            .ok_or_else(|| DatasetError::MissingColumn {
                col: col.to_string(),
                path: path_str.clone(),
            })
    };
    let y_idx = find(&schema.outcome)?;
    let t_idx = find(&schema.treatment)?;
    let cov_names: Vec<String> = match &schema.covariates {
        Some(names) => {
            for name in names {
                find(name)?;
            }
            names.clone()
        }
        None => headers
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != y_idx && *i != t_idx)
            .map(|(_, h)| h.to_string())
            .collect(),
    };
    let cov_idx: Vec<usize> = cov_names.iter().map(|n| find(n).unwrap()).collect();

    let mut y = Vec::new();
    let mut t = Vec::new();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (row_no, record) in reader.records().enumerate() {
        let record = record.map_err(|source| DatasetError::Csv {
            path: path_str.clone(),
            source,
        })?;
        let parse = |idx: usize, col: &str| -> Result<f64, DatasetError> {
            let raw = record.get(idx).unwrap_or("");
            raw.parse::<f64>().map_err(|_| DatasetError::Parse {
                col: col.to_string(),
                row: row_no,
                value: raw.to_string(),
            })
        };
        y.push(parse(y_idx, &schema.outcome)?);
        let t_raw = parse(t_idx, &schema.treatment)?;
        let t_val = match t_raw {
            v if v == 1.0 => 1i8,
            v if v == -1.0 => -1i8,
            v if v == 0.0 => -1i8,
            v => {
                return Err(DatasetError::BadTreatment {
                    row: row_no,
                    value: v,
                })
            }
        };
        t.push(t_val);
        let mut row = Vec::with_capacity(cov_idx.len());
        for (k, &idx) in cov_idx.iter().enumerate() {
            row.push(parse(idx, &cov_names[k])?);
        }
        rows.push(row);
    }

    let n = rows.len();
    let p = cov_names.len();
    let mut x = Array2::zeros((n, p));
    for (i, row) in rows.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            x[(i, j)] = v;
        }
    }
    let col_kind: Vec<ColKind> = cov_names
        .iter()
        .enumerate()
        .map(|(j, name)| {
            schema.kinds.get(name).copied().unwrap_or_else(|| {
                if distinct_count(x.column(j).iter().copied(), 3) <= 2 {
                    ColKind::Binary
                } else {
                    ColKind::Continuous
                }
            })
        })
        .collect();
    Dataset::new(y, t, x, col_kind, cov_names)
}

/// Writes a dataset as CSV with columns `y,t,<covariates>`.
///
/// `header_comment`, when given, is emitted first as `#`-prefixed lines;
/// [`load_dataset`] skips such lines on the way back in.
pub fn write_dataset_csv(
    d: &Dataset,
    path: impl AsRef<Path>,
    header_comment: Option<&str>,
) -> Result<(), DatasetError> {
    let path = path.as_ref();
    let path_str = path.display().to_string();
    let mut out = String::new();
    if let Some(comment) = header_comment {
        for line in comment.lines() {
            out.push_str("# ");
            out.push_str(line);
            out.push('\n');
        }
    }
    out.push_str("y,t");
    for name in d.col_names() {
        out.push(',');
        out.push_str(name);
    }
    out.push('\n');
    for i in 0..d.n() {
        out.push_str(&format!("{}", d.y()[i]));
        out.push_str(&format!(",{}", d.t()[i]));
        for j in 0..d.p() {
            out.push_str(&format!(",{}", d.x()[(i, j)]));
        }
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|source| DatasetError::Io {
        path: path_str,
        source,
    })
}

/// Per-column affine maps taking continuous covariates to the unit interval.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Standardizer {
    scales: Vec<ColScale>,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
enum ColScale {
    MinMax { min: f64, range: f64 },
    Identity,
}

impl Standardizer {
    /// Applies the fitted maps to new covariates, clamping continuous values
    /// to [0, 1]. Returns the mapped matrix and how many entries got clamped.
    pub fn transform(&self, x: &Array2<f64>) -> (Array2<f64>, usize) {
        let mut out = x.clone();
        let mut clamped = 0usize;
        for (j, scale) in self.scales.iter().enumerate() {
            if let ColScale::MinMax { min, range } = scale {
                for i in 0..x.nrows() {
                    let z = (x[(i, j)] - min) / range;
                    let zc = z.clamp(0.0, 1.0);
                    if z != zc {
                        clamped += 1;
                    }
                    out[(i, j)] = zc;
                }
            }
        }
        (out, clamped)
    }

    pub fn n_cols(&self) -> usize {
        self.scales.len()
    }
}

/// Maps each continuous covariate to [0, 1] by its sample min and range.
///
/// Applying the returned [`Standardizer`] to data already standardized by it
/// is the identity, because the mapped columns attain both 0 and 1.
pub fn standardize(d: &Dataset) -> Result<(Dataset, Standardizer), DatasetError> {
    let mut scales = Vec::with_capacity(d.p());
    for j in 0..d.p() {
        match d.col_kind()[j] {
            ColKind::Binary => scales.push(ColScale::Identity),
            ColKind::Continuous => {
                let col = d.x().column(j);
                let min = col.iter().copied().fold(f64::INFINITY, f64::min);
                let max = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let range = max - min;
                if range <= 0.0 {
                    return Err(DatasetError::ConstantColumn {
                        col: d.col_names()[j].clone(),
                    });
                }
                scales.push(ColScale::MinMax { min, range });
            }
        }
    }
    let standardizer = Standardizer { scales };
    let (x, _) = standardizer.transform(d.x());
    let standardized = Dataset::new(
        d.y().to_vec(),
        d.t().to_vec(),
        x,
        d.col_kind().to_vec(),
        d.col_names().to_vec(),
    )?;
    Ok((standardized, standardizer))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn toy() -> Dataset {
        let x = array![[0.0, 1.0], [2.0, 0.0], [4.0, 1.0], [6.0, 0.0]];
        Dataset::new(
            vec![1.0, 2.0, 3.0, 4.0],
            vec![1, -1, 1, -1],
            x,
            vec![ColKind::Continuous, ColKind::Binary],
            vec!["age".into(), "flag".into()],
        )
        .unwrap()
    }

    #[test]
    fn rejects_length_mismatch() {
        let x = array![[0.0], [1.0]];
        let err = Dataset::new(
            vec![1.0],
            vec![1, -1],
            x,
            vec![ColKind::Continuous],
            vec![],
        )
        .unwrap_err();
        assert!(matches!(err, DatasetError::LengthMismatch { .. }));
    }

    #[test]
    fn rejects_bad_treatment_and_single_arm() {
        let x = array![[0.0], [1.0]];
        let err = Dataset::new(
            vec![1.0, 2.0],
            vec![1, 2],
            x.clone(),
            vec![ColKind::Continuous],
            vec![],
        )
        .unwrap_err();
        assert!(matches!(err, DatasetError::BadTreatment { row: 1, .. }));

        let err = Dataset::new(
            vec![1.0, 2.0],
            vec![1, 1],
            x,
            vec![ColKind::Continuous],
            vec![],
        )
        .unwrap_err();
        assert!(matches!(err, DatasetError::SingleArm));
    }

    #[test]
    fn rejects_non_finite_and_fake_binary() {
        let x = array![[0.0], [f64::NAN]];
        let err = Dataset::new(
            vec![1.0, 2.0],
            vec![1, -1],
            x,
            vec![ColKind::Continuous],
            vec![],
        )
        .unwrap_err();
        assert!(matches!(err, DatasetError::NonFinite { row: 1, .. }));

        let x = array![[0.0], [1.0], [2.0]];
        let err = Dataset::new(
            vec![1.0, 2.0, 3.0],
            vec![1, -1, 1],
            x,
            vec![ColKind::Binary],
            vec!["b".into()],
        )
        .unwrap_err();
        assert!(matches!(err, DatasetError::NotBinary { count: 3, .. }));
    }

    #[test]
    fn standardize_maps_to_unit_interval_and_is_idempotent() {
        let d = toy();
        let (s1, std1) = standardize(&d).unwrap();
        let col: Vec<f64> = s1.x().column(0).to_vec();
        assert_eq!(col, vec![0.0, 2.0 / 6.0, 4.0 / 6.0, 1.0]);
        // binary column untouched
        assert_eq!(s1.x().column(1).to_vec(), vec![1.0, 0.0, 1.0, 0.0]);

        let (s2, std2) = standardize(&s1).unwrap();
        assert_eq!(s1.x(), s2.x());
        let (reapplied, clamps) = std2.transform(s1.x());
        assert_eq!(clamps, 0);
        assert_eq!(reapplied, *s1.x());
        let _ = std1;
    }

    #[test]
    fn transform_clamps_out_of_range_inputs() {
        let d = toy();
        let (_, std) = standardize(&d).unwrap();
        let x_new = array![[-3.0, 1.0], [9.0, 0.0], [3.0, 1.0]];
        let (mapped, clamped) = std.transform(&x_new);
        assert_eq!(clamped, 2);
        assert_eq!(mapped[(0, 0)], 0.0);
        assert_eq!(mapped[(1, 0)], 1.0);
        assert!((mapped[(2, 0)] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn standardize_rejects_constant_column() {
        let x = array![[2.0], [2.0]];
        let d = Dataset::new(
            vec![1.0, 2.0],
            vec![1, -1],
            x,
            vec![ColKind::Continuous],
            vec!["c".into()],
        )
        .unwrap();
        let err = standardize(&d).unwrap_err();
        assert!(matches!(err, DatasetError::ConstantColumn { .. }));
    }

    #[test]
    fn csv_round_trip_preserves_values() {
        let d = toy();
        let dir = std::env::temp_dir().join("catelab_data_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("toy.csv");
        write_dataset_csv(&d, &path, Some("written by unit test")).unwrap();
        let schema = CsvSchema::new("y", "t");
        let back = load_dataset(&path, &schema).unwrap();
        assert_eq!(back.y(), d.y());
        assert_eq!(back.t(), d.t());
        assert_eq!(back.x(), d.x());
        assert_eq!(back.col_kind(), d.col_kind());
        assert_eq!(back.col_names(), d.col_names());
    }

    #[test]
    fn csv_loader_accepts_zero_one_treatment_and_infers_kinds() {
        let dir = std::env::temp_dir().join("catelab_data_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("zero_one.csv");
        std::fs::write(&path, "resp,arm,a,b\n1.5,0,0.1,1\n2.5,1,0.7,0\n0.5,0,0.4,1\n").unwrap();
        let schema = CsvSchema::new("resp", "arm");
        let d = load_dataset(&path, &schema).unwrap();
        assert_eq!(d.t(), &[-1, 1, -1]);
        assert_eq!(d.col_kind(), &[ColKind::Continuous, ColKind::Binary]);
    }

    #[test]
    fn csv_loader_names_missing_column() {
        let dir = std::env::temp_dir().join("catelab_data_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("missing.csv");
        std::fs::write(&path, "y,t,a\n1,1,0.5\n2,-1,0.6\n").unwrap();
        let schema = CsvSchema::new("outcome", "t");
        let err = load_dataset(&path, &schema).unwrap_err();
        match err {
            DatasetError::MissingColumn { col, .. } => assert_eq!(col, "outcome"),
            other => panic!("unexpected error: {other}"),
        }
    }

    #[test]
    fn row_and_column_selection() {
        let d = toy();
        let sub = d.select_rows(&[0, 2, 2, 1]).unwrap();
        assert_eq!(sub.y(), &[1.0, 3.0, 3.0, 2.0]);
        assert_eq!(sub.t(), &[1, 1, 1, -1]);
        let cols = d.select_columns(&[1]).unwrap();
        assert_eq!(cols.p(), 1);
        assert_eq!(cols.col_names(), &["flag".to_string()]);
    }
}
