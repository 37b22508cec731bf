//! Datasets, standardization and the CSV exchange format.
//!
//! CSV schema: header row with covariate columns `x1..xd`, outcome column
//! `y`, and an optional 1-based integer column `group`. Missing values are
//! rejected.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// One observation: covariates, outcome, optional group index (1-based).
#[derive(Debug, Clone, PartialEq)]
pub struct Datum {
    pub x: Vec<f64>,
    pub y: f64,
    pub group: Option<usize>,
}

impl Datum {
    pub fn new(x: Vec<f64>, y: f64) -> Self {
        Datum { x, y, group: None }
    }

    pub fn grouped(x: Vec<f64>, y: f64, group: usize) -> Self {
        Datum { x, y, group: Some(group) }
    }
}

/// Per-column centering/scaling record. Scales use the population standard
/// deviation (divide by n); constant columns keep scale 1 so the transform
/// stays invertible.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardization {
    pub x_means: Vec<f64>,
    pub x_scales: Vec<f64>,
    pub y_mean: f64,
    pub y_scale: f64,
    /// Whether the response itself was transformed (never for classification).
    pub y_transformed: bool,
}

/// An ordered collection of observations with a shared covariate dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    data: Vec<Datum>,
    standardization: Option<Standardization>,
}

fn population_sd(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt()
}

fn scale_or_one(sd: f64) -> f64 {
    if sd > 1e-12 {
        sd
    } else {
        1.0
    }
}

impl Dataset {
    /// Build a dataset, checking that dimensions agree and grouping is
    /// all-or-nothing.
    pub fn new(data: Vec<Datum>) -> Result<Self> {
        if let Some(first) = data.first() {
            let d = first.x.len();
            let has_group = first.group.is_some();
            for (i, datum) in data.iter().enumerate() {
                if datum.x.len() != d {
                    return Err(Error::DataFormat(format!(
                        "row {}: covariate dimension {} differs from {}",
                        i + 1,
                        datum.x.len(),
                        d
                    )));
                }
                if datum.group.is_some() != has_group {
                    return Err(Error::DataFormat(format!(
                        "row {}: group must be present on every datum or on none",
                        i + 1
                    )));
                }
                if let Some(0) = datum.group {
                    return Err(Error::DataFormat(format!("row {}: group indices are 1-based", i + 1)));
                }
            }
        }
        Ok(Dataset { data, standardization: None })
    }

    pub fn empty() -> Self {
        Dataset { data: Vec::new(), standardization: None }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.data.first().map_or(0, |d| d.x.len())
    }

    pub fn data(&self) -> &[Datum] {
        &self.data
    }

    pub fn get(&self, i: usize) -> &Datum {
        &self.data[i]
    }

    pub fn has_groups(&self) -> bool {
        self.data.first().is_some_and(|d| d.group.is_some())
    }

    pub fn outcomes(&self) -> impl Iterator<Item = f64> + '_ {
        self.data.iter().map(|d| d.y)
    }

    pub fn standardization(&self) -> Option<&Standardization> {
        self.standardization.as_ref()
    }

    /// True when every outcome is exactly 0 or 1.
    pub fn looks_binary(&self) -> bool {
        !self.is_empty() && self.data.iter().all(|d| d.y == 0.0 || d.y == 1.0)
    }

    /// Scale of the response in the dataset's own units: 1 when the response
    /// has been standardized, otherwise its population standard deviation
    /// (constant responses fall back to 1).
    pub fn response_scale(&self) -> f64 {
        if self.standardization.as_ref().is_some_and(|s| s.y_transformed) {
            return 1.0;
        }
        let ys: Vec<f64> = self.outcomes().collect();
        scale_or_one(population_sd(&ys))
    }

    /// Center and scale every covariate column (and the response when
    /// `transform_response` is set) to mean 0 and population sd 1. Constant
    /// columns pass through with scale 1.
    pub fn standardize(&self, transform_response: bool) -> Result<Dataset> {
        if self.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let d = self.dim();
        let n = self.len();
        let mut x_means = vec![0.0; d];
        let mut x_scales = vec![1.0; d];
        for k in 0..d {
            let col: Vec<f64> = self.data.iter().map(|dat| dat.x[k]).collect();
            x_means[k] = col.iter().sum::<f64>() / n as f64;
            x_scales[k] = scale_or_one(population_sd(&col));
        }
        let ys: Vec<f64> = self.outcomes().collect();
        let (y_mean, y_scale) = if transform_response {
            (ys.iter().sum::<f64>() / n as f64, scale_or_one(population_sd(&ys)))
        } else {
            (0.0, 1.0)
        };
        let data = self
            .data
            .iter()
            .map(|dat| Datum {
                x: dat
                    .x
                    .iter()
                    .enumerate()
                    .map(|(k, v)| (v - x_means[k]) / x_scales[k])
                    .collect(),
                y: if transform_response { (dat.y - y_mean) / y_scale } else { dat.y },
                group: dat.group,
            })
            .collect();
        Ok(Dataset {
            data,
            standardization: Some(Standardization {
                x_means,
                x_scales,
                y_mean,
                y_scale,
                y_transformed: transform_response,
            }),
        })
    }

    /// Apply this dataset's standardization record to a raw covariate vector.
    pub fn transform_covariates(&self, raw: &[f64]) -> Vec<f64> {
        match &self.standardization {
            Some(s) => raw
                .iter()
                .enumerate()
                .map(|(k, v)| (v - s.x_means[k]) / s.x_scales[k])
                .collect(),
            None => raw.to_vec(),
        }
    }
}

/// Parse a dataset from CSV (see the module docs for the schema). Rows with
/// `y` absent are rejected; see [`read_test_points`] for covariate-only files.
pub fn read_dataset<R: Read>(reader: R) -> Result<Dataset> {
    let (data, _) = read_rows(reader, false)?;
    Dataset::new(data)
}

pub fn read_dataset_path(path: &Path) -> Result<Dataset> {
    let file = std::fs::File::open(path)
        .map_err(|e| Error::DataFormat(format!("{}: {e}", path.display())))?;
    read_dataset(file)
}

/// Parse test points: same schema, `y` column optional. Returns the rows and
/// whether outcomes were present (evaluation mode).
pub fn read_test_points<R: Read>(reader: R) -> Result<(Vec<Datum>, bool)> {
    read_rows(reader, true)
}

pub fn read_test_points_path(path: &Path) -> Result<(Vec<Datum>, bool)> {
    let file = std::fs::File::open(path)
        .map_err(|e| Error::DataFormat(format!("{}: {e}", path.display())))?;
    read_test_points(file)
}

fn read_rows<R: Read>(reader: R, allow_missing_y: bool) -> Result<(Vec<Datum>, bool)> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .comment(Some(b'#'))
        .from_reader(reader);
    let headers = rdr.headers()?.clone();

    let mut x_cols: Vec<(usize, usize)> = Vec::new(); // (covariate index, column)
    let mut y_col = None;
    let mut group_col = None;
    for (c, name) in headers.iter().enumerate() {
        let name = name.trim();
        if name == "y" {
            y_col = Some(c);
        } else if name == "group" {
            group_col = Some(c);
        } else if let Some(rest) = name.strip_prefix('x') {
            match rest.parse::<usize>() {
                Ok(k) if k >= 1 => x_cols.push((k, c)),
                _ => return Err(Error::DataFormat(format!("unrecognized column `{name}`"))),
            }
        } else {
            return Err(Error::DataFormat(format!("unrecognized column `{name}`")));
        }
    }
    x_cols.sort_unstable();
    for (expect, (k, _)) in x_cols.iter().enumerate() {
        if *k != expect + 1 {
            return Err(Error::DataFormat(format!(
                "covariate columns must be x1..xd with no gaps; found x{k}"
            )));
        }
    }
    if y_col.is_none() && !allow_missing_y {
        return Err(Error::DataFormat("missing outcome column `y`".into()));
    }

    let mut data = Vec::new();
    for (i, record) in rdr.records().enumerate() {
        let record = record?;
        let row = i + 2; // 1-based, after header
        let parse = |c: usize| -> Result<f64> {
            let raw = record.get(c).unwrap_or("").trim();
            if raw.is_empty() {
                return Err(Error::DataFormat(format!("row {row}: missing value")));
            }
            let v: f64 = raw
                .parse()
                .map_err(|_| Error::DataFormat(format!("row {row}: cannot parse `{raw}` as a number")))?;
            if !v.is_finite() {
                return Err(Error::DataFormat(format!("row {row}: non-finite value {raw}")));
            }
            Ok(v)
        };
        let x: Vec<f64> = x_cols.iter().map(|&(_, c)| parse(c)).collect::<Result<_>>()?;
        let y = match y_col {
            Some(c) => parse(c)?,
            None => f64::NAN, // covariate-only test file
        };
        let group = match group_col {
            Some(c) => {
                let v = parse(c)?;
                if v.fract() != 0.0 || v < 1.0 {
                    return Err(Error::DataFormat(format!(
                        "row {row}: group must be a positive integer, got {v}"
                    )));
                }
                Some(v as usize)
            }
            None => None,
        };
        data.push(Datum { x, y, group });
    }
    Ok((data, y_col.is_some()))
}

/// Write a dataset in the exchange schema at full precision.
pub fn write_dataset<W: Write>(writer: W, data: &Dataset) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    let d = data.dim();
    let mut header: Vec<String> = (1..=d).map(|k| format!("x{k}")).collect();
    header.push("y".into());
    if data.has_groups() {
        header.push("group".into());
    }
    wtr.write_record(&header)?;
    for datum in data.data() {
        let mut rec: Vec<String> = datum.x.iter().map(|v| format!("{v:.16e}")).collect();
        rec.push(format!("{:.16e}", datum.y));
        if let Some(g) = datum.group {
            rec.push(g.to_string());
        }
        wtr.write_record(&rec)?;
    }
    wtr.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn standardize_hand_computed_column() {
        // mean 2, population sd √(2/3): (1−2)/0.816497 = −1.224745
        let ds = Dataset::new(vec![
            Datum::new(vec![1.0], 0.0),
            Datum::new(vec![2.0], 1.0),
            Datum::new(vec![3.0], 2.0),
        ])
        .unwrap();
        let std = ds.standardize(true).unwrap();
        let expected = 1.224_744_871_391_589;
        assert_relative_eq!(std.get(0).x[0], -expected, max_relative = 1e-12);
        assert_relative_eq!(std.get(1).x[0], 0.0, epsilon = 1e-12);
        assert_relative_eq!(std.get(2).x[0], expected, max_relative = 1e-12);
        // y column gets the same treatment
        assert_relative_eq!(std.get(0).y, -expected, max_relative = 1e-12);
        let rec = std.standardization().unwrap();
        assert_relative_eq!(rec.x_means[0], 2.0, max_relative = 1e-15);
        assert!(rec.y_transformed);
    }

    #[test]
    fn standardize_is_idempotent() {
        let ds = Dataset::new(vec![
            Datum::new(vec![-1.2], -0.3),
            Datum::new(vec![0.4], 1.1),
            Datum::new(vec![0.8], -0.8),
        ])
        .unwrap();
        let once = ds.standardize(true).unwrap();
        let twice = once.standardize(true).unwrap();
        for (a, b) in once.data().iter().zip(twice.data()) {
            assert_relative_eq!(a.x[0], b.x[0], epsilon = 1e-12);
            assert_relative_eq!(a.y, b.y, epsilon = 1e-12);
        }
    }

    #[test]
    fn constant_column_passes_through_with_unit_scale() {
        let ds = Dataset::new(vec![
            Datum::new(vec![5.0], 1.0),
            Datum::new(vec![5.0], 2.0),
            Datum::new(vec![5.0], 3.0),
        ])
        .unwrap();
        let std = ds.standardize(false).unwrap();
        for datum in std.data() {
            assert_eq!(datum.x[0], 0.0);
        }
        assert_eq!(std.standardization().unwrap().x_scales[0], 1.0);
    }

    #[test]
    fn standardize_checks_moments_within_1e9() {
        let ds = Dataset::new(
            (0..50)
                .map(|i| Datum::new(vec![(i as f64).sin() * 3.0 + 1.0, i as f64], i as f64 * 0.5))
                .collect(),
        )
        .unwrap();
        let std = ds.standardize(true).unwrap();
        for k in 0..2 {
            let col: Vec<f64> = std.data().iter().map(|d| d.x[k]).collect();
            let mean = col.iter().sum::<f64>() / col.len() as f64;
            let sd = population_sd(&col);
            assert!(mean.abs() < 1e-9);
            assert!((sd - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn classification_outcomes_survive_standardization() {
        let ds = Dataset::new(vec![Datum::new(vec![1.0], 0.0), Datum::new(vec![3.0], 1.0)]).unwrap();
        let std = ds.standardize(false).unwrap();
        assert_eq!(std.get(0).y, 0.0);
        assert_eq!(std.get(1).y, 1.0);
        assert!(!std.standardization().unwrap().y_transformed);
    }

    #[test]
    fn csv_round_trip() {
        let ds = Dataset::new(vec![
            Datum::grouped(vec![0.25, -1.5], 2.0 / 3.0, 1),
            Datum::grouped(vec![1e-17, 4.2], -0.1, 2),
        ])
        .unwrap();
        let mut buf = Vec::new();
        write_dataset(&mut buf, &ds).unwrap();
        let back = read_dataset(buf.as_slice()).unwrap();
        assert_eq!(ds.data(), back.data());
    }

    #[test]
    fn csv_rejects_missing_values_and_bad_groups() {
        let err = read_dataset("x1,y\n1.0,\n".as_bytes()).unwrap_err();
        assert!(matches!(err, Error::DataFormat(_)), "{err}");
        let err = read_dataset("x1,y,group\n1.0,2.0,0\n".as_bytes()).unwrap_err();
        assert!(err.to_string().contains("group"));
        let err = read_dataset("x1,x3,y\n1.0,2.0,3.0\n".as_bytes()).unwrap_err();
        assert!(err.to_string().contains("x1..xd"));
    }

    #[test]
    fn test_points_allow_missing_outcomes() {
        let (points, has_y) = read_test_points("x1,x2\n0.1,0.2\n0.3,0.4\n".as_bytes()).unwrap();
        assert!(!has_y);
        assert_eq!(points.len(), 2);
        assert!(points[0].y.is_nan());
    }

    #[test]
    fn mixed_grouping_is_rejected() {
        let err = Dataset::new(vec![
            Datum::grouped(vec![1.0], 0.0, 1),
            Datum::new(vec![2.0], 1.0),
        ])
        .unwrap_err();
        assert!(err.to_string().contains("group"));
    }
}
