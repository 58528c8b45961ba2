//! Paired covariate/response samples, CSV ingestion, standardization and
//! fold splitting.

use std::collections::HashMap;
use std::path::Path;

use log::warn;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::model::{ColumnStats, ResponseTransform};
use crate::rng;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColumnKind {
    #[default]
    Continuous,
    Discrete,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnMeta {
    pub name: String,
    pub kind: ColumnKind,
}

/// `n` paired samples `(x_i, y_i)`. When `y_transform` is not the identity,
/// `y` already holds the transformed responses.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub x: Matrix,
    pub y: Matrix,
    pub x_columns: Vec<ColumnMeta>,
    pub y_columns: Vec<ColumnMeta>,
    pub y_transform: ResponseTransform,
}

fn default_columns(prefix: &str, n: usize) -> Vec<ColumnMeta> {
    (0..n)
        .map(|i| ColumnMeta {
            name: if n == 1 { prefix.to_string() } else { format!("{prefix}{}", i + 1) },
            kind: ColumnKind::Continuous,
        })
        .collect()
}

impl Dataset {
    pub fn new(x: Matrix, y: Matrix) -> Result<Self> {
        if x.rows() != y.rows() {
            return Err(Error::SizeMismatch {
                left: x.rows(),
                right: y.rows(),
            });
        }
        if !x.all_finite() || !y.all_finite() {
            return Err(Error::InvalidConfig("dataset contains non-finite values".into()));
        }
        let (d, q) = (x.cols(), y.cols());
        Ok(Dataset {
            x,
            y,
            x_columns: default_columns("x", d),
            y_columns: default_columns("y", q),
            y_transform: ResponseTransform::Identity,
        })
    }

    pub fn n(&self) -> usize {
        self.x.rows()
    }

    pub fn d(&self) -> usize {
        self.x.cols()
    }

    pub fn q(&self) -> usize {
        self.y.cols()
    }

    pub fn is_empty(&self) -> bool {
        self.n() == 0
    }

    pub fn subset(&self, idx: &[usize]) -> Dataset {
        Dataset {
            x: self.x.select_rows(idx),
            y: self.y.select_rows(idx),
            x_columns: self.x_columns.clone(),
            y_columns: self.y_columns.clone(),
            y_transform: self.y_transform,
        }
    }

    /// Applies `transform` to raw responses and records it.
    pub fn with_response_transform(mut self, transform: ResponseTransform) -> Result<Self> {
        if self.y_transform != ResponseTransform::Identity {
            return Err(Error::InvalidConfig("response is already transformed".into()));
        }
        let y = self.y.map(|v| transform.forward(v));
        if !y.all_finite() {
            return Err(Error::InvalidConfig(format!("{transform:?} produced non-finite responses")));
        }
        self.y = y;
        self.y_transform = transform;
        Ok(self)
    }

    /// Responses in the original (untransformed) scale.
    pub fn raw_y(&self) -> Matrix {
        self.y.map(|v| self.y_transform.inverse(v))
    }

    /// One-hot expands the covariate columns tagged discrete.
    pub fn one_hot_discrete(&self) -> Dataset {
        let mut cols: Vec<(ColumnMeta, Vec<f64>)> = Vec::new();
        for (c, meta) in self.x_columns.iter().enumerate() {
            let col = self.x.column(c);
            if meta.kind == ColumnKind::Discrete {
                let mut levels: Vec<f64> = col.clone();
                levels.sort_by(f64::total_cmp);
                levels.dedup();
                for level in levels {
                    cols.push((
                        ColumnMeta {
                            name: format!("{}={level}", meta.name),
                            kind: ColumnKind::Discrete,
                        },
                        col.iter().map(|v| if *v == level { 1.0 } else { 0.0 }).collect(),
                    ));
                }
            } else {
                cols.push((meta.clone(), col));
            }
        }
        let n = self.n();
        let mut x = Matrix::zeros(n, cols.len());
        for (c, (_, values)) in cols.iter().enumerate() {
            for (r, v) in values.iter().enumerate() {
                x.set(r, c, *v);
            }
        }
        Dataset {
            x,
            y: self.y.clone(),
            x_columns: cols.into_iter().map(|(m, _)| m).collect(),
            y_columns: self.y_columns.clone(),
            y_transform: self.y_transform,
        }
    }
}

/// Sample mean and (n-1)-denominator std of each column. Constant columns
/// get `std = 1` and a warning.
pub fn column_stats(m: &Matrix, names: &[ColumnMeta]) -> Result<Vec<ColumnStats>> {
    let n = m.rows();
    if n < 2 {
        return Err(Error::InvalidConfig(format!("standardization needs at least 2 rows, got {n}")));
    }
    let mut out = Vec::with_capacity(m.cols());
    for c in 0..m.cols() {
        let col = m.column(c);
        let mean = col.iter().sum::<f64>() / n as f64;
        let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let mut std = var.sqrt();
        if !(std > 0.0) || !std.is_finite() {
            let name = names.get(c).map_or("?", |m| m.name.as_str());
            warn!("column `{name}` is constant; clamping its std to 1");
            std = 1.0;
        }
        out.push(ColumnStats { mean, std });
    }
    Ok(out)
}

/// Per-column z-score statistics of covariates and responses.
pub fn standardize_fit(data: &Dataset) -> Result<(Vec<ColumnStats>, Vec<ColumnStats>)> {
    Ok((column_stats(&data.x, &data.x_columns)?, column_stats(&data.y, &data.y_columns)?))
}

pub fn apply_stats(m: &Matrix, stats: &[ColumnStats]) -> Matrix {
    let mut out = m.clone();
    for r in 0..out.rows() {
        for (v, s) in out.row_mut(r).iter_mut().zip(stats) {
            *v = s.standardize(*v);
        }
    }
    out
}

/// Column selection and typing for [`ingest_csv`].
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CsvSpec {
    pub x_columns: Vec<String>,
    pub y_columns: Vec<String>,
    #[serde(default)]
    pub discrete_columns: Vec<String>,
    #[serde(default)]
    pub y_transform: ResponseTransform,
}

fn is_missing(s: &str) -> bool {
    matches!(s.trim(), "" | "NA" | "na" | "NaN" | "nan" | "?" | "null")
}

/// Reads a comma-delimited, headed UTF-8 CSV. Rows with missing values in
/// the selected columns are dropped (with a count warning); any other
/// non-numeric cell is a [`Error::Parse`] naming the 1-based data row and the
/// column.
pub fn ingest_csv(path: &Path, spec: &CsvSpec) -> Result<Dataset> {
    let file = std::fs::File::open(path)?;
    ingest_csv_reader(file, spec)
}

pub fn ingest_csv_reader<R: std::io::Read>(reader: R, spec: &CsvSpec) -> Result<Dataset> {
    if spec.x_columns.is_empty() || spec.y_columns.is_empty() {
        return Err(Error::InvalidConfig("at least one covariate and one response column are required".into()));
    }
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let index: HashMap<&str, usize> = headers.iter().enumerate().map(|(i, h)| (h, i)).collect();
    let lookup = |names: &[String]| -> Result<Vec<usize>> {
        names
            .iter()
            .map(|n| {
                index
                    .get(n.as_str())
                    .copied()
                    .ok_or_else(|| Error::InvalidConfig(format!("column `{n}` not found in CSV header")))
            })
            .collect()
    };
    let xi = lookup(&spec.x_columns)?;
    let yi = lookup(&spec.y_columns)?;

    let (mut xs, mut ys) = (Vec::new(), Vec::new());
    let mut dropped = 0usize;
    let mut rows = 0usize;
    for (r, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = r + 1;
        let cells: Vec<(&String, usize)> = spec
            .x_columns
            .iter()
            .zip(&xi)
            .chain(spec.y_columns.iter().zip(&yi))
            .map(|(n, &i)| (n, i))
            .collect();
        if cells.iter().any(|(_, i)| rec.get(*i).map_or(true, is_missing)) {
            dropped += 1;
            continue;
        }
        let mut vals = Vec::with_capacity(cells.len());
        for (name, i) in cells {
            let s = rec.get(i).unwrap_or("");
            let v: f64 = s.parse().map_err(|_| Error::Parse {
                row,
                column: name.clone(),
                message: format!("`{s}` is not a number"),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    row,
                    column: name.clone(),
                    message: format!("`{s}` is not finite"),
                });
            }
            vals.push(v);
        }
        xs.extend_from_slice(&vals[..xi.len()]);
        ys.extend_from_slice(&vals[xi.len()..]);
        rows += 1;
    }
    if dropped > 0 {
        warn!("dropped {dropped} rows with missing values");
    }
    if rows == 0 {
        return Err(Error::EmptyDataset);
    }
    let meta = |names: &[String]| -> Vec<ColumnMeta> {
        names
            .iter()
            .map(|n| ColumnMeta {
                name: n.clone(),
                kind: if spec.discrete_columns.contains(n) {
                    ColumnKind::Discrete
                } else {
                    ColumnKind::Continuous
                },
            })
            .collect()
    };
    let data = Dataset {
        x: Matrix::from_vec(rows, xi.len(), xs),
        y: Matrix::from_vec(rows, yi.len(), ys),
        x_columns: meta(&spec.x_columns),
        y_columns: meta(&spec.y_columns),
        y_transform: ResponseTransform::Identity,
    };
    data.with_response_transform(spec.y_transform)
}

/// Writes `x..., y...` columns with a header row (raw response scale).
pub fn write_csv<W: std::io::Write>(data: &Dataset, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let header: Vec<&str> = data.x_columns.iter().chain(&data.y_columns).map(|c| c.name.as_str()).collect();
    w.write_record(&header)?;
    let raw_y = data.raw_y();
    for r in 0..data.n() {
        let rec: Vec<String> = data.x.row(r).iter().chain(raw_y.row(r)).map(|v| format!("{v}")).collect();
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// `k` folds over a seeded permutation of row indices.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FoldSplit {
    pub folds: Vec<Vec<usize>>,
}

impl FoldSplit {
    /// Fold sizes differ by at most one.
    pub fn new(n: usize, k: usize, seed: u64) -> Result<Self> {
        if k < 2 || n < k {
            return Err(Error::InvalidConfig(format!("k-fold needs 2 <= k <= n (k={k}, n={n})")));
        }
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut rng::labeled(seed, "folds", 0));
        let (base, extra) = (n / k, n % k);
        let mut folds = Vec::with_capacity(k);
        let mut start = 0;
        for f in 0..k {
            let len = base + usize::from(f < extra);
            let mut fold = perm[start..start + len].to_vec();
            fold.sort_unstable();
            folds.push(fold);
            start += len;
        }
        Ok(FoldSplit { folds })
    }

    pub fn k(&self) -> usize {
        self.folds.len()
    }

    /// `(train, test)` row indices for fold `f`.
    pub fn split(&self, f: usize) -> (Vec<usize>, Vec<usize>) {
        let test = self.folds[f].clone();
        let mut train: Vec<usize> = self
            .folds
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != f)
            .flat_map(|(_, v)| v.iter().copied())
            .collect();
        train.sort_unstable();
        (train, test)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn two_point_column() {
        let m = Matrix::from_rows(&[[0.0], [2.0]]);
        let s = column_stats(&m, &[]).unwrap();
        assert_eq!(s[0].mean, 1.0);
        assert!((s[0].std - 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn constant_column_is_clamped() {
        let m = Matrix::from_rows(&[[5.0], [5.0], [5.0]]);
        let s = column_stats(&m, &[]).unwrap();
        assert_eq!(s[0], ColumnStats { mean: 5.0, std: 1.0 });
        assert!(column_stats(&Matrix::from_rows(&[[1.0]]), &[]).is_err());
    }

    #[test]
    fn standard_normal_sample_has_unit_stats() {
        let mut r = rng::seeded(1);
        let v: Vec<f64> = (0..10_000).map(|_| StandardNormal.sample(&mut r)).collect();
        let s = column_stats(&Matrix::from_vec(10_000, 1, v), &[]).unwrap();
        assert!(s[0].mean.abs() < 0.05 && (s[0].std - 1.0).abs() < 0.05);
    }

    fn spec(tf: ResponseTransform) -> CsvSpec {
        CsvSpec {
            x_columns: vec!["x".into()],
            y_columns: vec!["y".into()],
            discrete_columns: vec![],
            y_transform: tf,
        }
    }

    #[test]
    fn ingest_well_formed_and_log1p() {
        let csv = "x,y\n1,0\n2,1.718281828459045\n3,4\n";
        let d = ingest_csv_reader(csv.as_bytes(), &spec(ResponseTransform::Identity)).unwrap();
        assert_eq!(d.n(), 3);
        let d = ingest_csv_reader(csv.as_bytes(), &spec(ResponseTransform::Log1p)).unwrap();
        assert_eq!(d.y.get(0, 0), 0.0);
        assert!((d.y.get(1, 0) - 1.0).abs() < 1e-15);
        assert_eq!(d.y_transform, ResponseTransform::Log1p);
        assert!((d.raw_y().get(2, 0) - 4.0).abs() < 1e-14);
    }

    #[test]
    fn parse_error_names_row_and_column() {
        let csv = "x,y\n1,0\n2,abc\n";
        match ingest_csv_reader(csv.as_bytes(), &spec(ResponseTransform::Identity)) {
            Err(Error::Parse { row, column, .. }) => {
                assert_eq!(row, 2);
                assert_eq!(column, "y");
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn missing_rows_dropped_and_empty_rejected() {
        let csv = "x,y,z\n1,,9\n2,3,9\nNA,1,9\n";
        let d = ingest_csv_reader(csv.as_bytes(), &spec(ResponseTransform::Identity)).unwrap();
        assert_eq!(d.n(), 1);
        let csv = "x,y\n1,\n";
        assert!(matches!(
            ingest_csv_reader(csv.as_bytes(), &spec(ResponseTransform::Identity)),
            Err(Error::EmptyDataset)
        ));
        let mut bad = spec(ResponseTransform::Identity);
        bad.x_columns = vec!["w".into()];
        assert!(ingest_csv_reader("x,y\n1,2\n".as_bytes(), &bad).is_err());
    }

    #[test]
    fn one_hot_expands_discrete_columns() {
        let csv = "a,b,y\n1,0.5,0\n2,0.7,1\n1,0.1,2\n";
        let s = CsvSpec {
            x_columns: vec!["a".into(), "b".into()],
            y_columns: vec!["y".into()],
            discrete_columns: vec!["a".into()],
            y_transform: ResponseTransform::Identity,
        };
        let d = ingest_csv_reader(csv.as_bytes(), &s).unwrap().one_hot_discrete();
        assert_eq!(d.d(), 3);
        assert_eq!(d.x.row(1), &[0.0, 1.0, 0.7]);
    }

    #[test]
    fn folds_partition_rows() {
        let f = FoldSplit::new(100, 5, 3).unwrap();
        let mut all: Vec<usize> = f.folds.iter().flatten().copied().collect();
        assert!(f.folds.iter().all(|x| x.len() == 20));
        all.sort_unstable();
        assert_eq!(all, (0..100).collect::<Vec<_>>());
        assert_eq!(f, FoldSplit::new(100, 5, 3).unwrap());
        let f = FoldSplit::new(11, 3, 3).unwrap();
        let sizes: Vec<usize> = f.folds.iter().map(Vec::len).collect();
        assert_eq!(sizes, vec![4, 4, 3]);
        let (train, test) = f.split(1);
        assert_eq!(train.len() + test.len(), 11);
        assert!(FoldSplit::new(3, 5, 0).is_err());
        assert!(FoldSplit::new(10, 1, 0).is_err());
    }
}
