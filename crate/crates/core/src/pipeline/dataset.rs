use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::estimators::{CensoredSample, TimeScale};

/// Per-column standardization and time transform applied to a dataset.
#[derive(Clone, Debug, PartialEq)]
pub struct TransformRecord {
    pub means: Vec<f64>,
    pub sds: Vec<f64>,
    /// Columns left untouched (dummy indicators) carry mean 0 and sd 1.
    pub standardized: Vec<bool>,
    /// Whether times were raw before the transform and have been logged.
    pub logged_time: bool,
}

/// Covariates, observed times and event indicators.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    /// `n x d`.
    pub x: Array2<f64>,
    pub y: Vec<f64>,
    pub delta: Vec<u8>,
    pub columns: Vec<String>,
    pub time_scale: TimeScale,
    /// Raw columns produced by dummy encoding, which standardization skips.
    pub indicator_columns: Vec<bool>,
    pub transform: Option<TransformRecord>,
}

impl Dataset {
    /// Log-scale dataset without a transform record.
    pub fn new(x: Array2<f64>, y: Vec<f64>, delta: Vec<u8>, columns: Vec<String>) -> Result<Self> {
        let d = x.ncols();
        let ds = Dataset {
            x,
            y,
            delta,
            columns,
            time_scale: TimeScale::Log,
            indicator_columns: vec![false; d],
            transform: None,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.x.nrows();
        if self.y.len() != n || self.delta.len() != n {
            return Err(Error::Shape(format!(
                "dataset has {n} covariate rows, {} times, {} indicators",
                self.y.len(),
                self.delta.len()
            )));
        }
        if self.columns.len() != self.x.ncols() || self.indicator_columns.len() != self.x.ncols() {
            return Err(Error::Shape("column names do not match covariate width".into()));
        }
        if self.delta.iter().any(|&v| v > 1) {
            return Err(Error::Data("censoring indicator must be 0 or 1".into()));
        }
        if self.x.iter().chain(&self.y).any(|v| !v.is_finite()) {
            return Err(Error::Data("dataset contains non-finite values".into()));
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn d(&self) -> usize {
        self.x.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.n() == 0
    }

    pub fn censored_fraction(&self) -> f64 {
        self.delta.iter().filter(|&&v| v == 0).count() as f64 / self.n() as f64
    }

    pub fn as_sample(&self) -> Result<CensoredSample> {
        CensoredSample::new(self.y.clone(), self.delta.clone(), self.time_scale)
    }

    pub fn select_rows(&self, rows: &[usize]) -> Dataset {
        Dataset {
            x: self.x.select(Axis(0), rows),
            y: rows.iter().map(|&i| self.y[i]).collect(),
            delta: rows.iter().map(|&i| self.delta[i]).collect(),
            ..self.clone()
        }
    }

    /// Hex SHA-256 over the covariates, times and indicators.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.n() as u64).to_le_bytes());
        h.update((self.d() as u64).to_le_bytes());
        for v in self.x.iter().chain(&self.y) {
            h.update(v.to_bits().to_le_bytes());
        }
        h.update(&self.delta);
        hex::encode(h.finalize())
    }

    /// Column statistics (mean, sample sd) over the rows.
    fn column_stats(&self) -> Result<(Vec<f64>, Vec<f64>)> {
        let n = self.n();
        if n < 2 {
            return Err(Error::Data("standardization needs at least two rows".into()));
        }
        let mut means = Vec::with_capacity(self.d());
        let mut sds = Vec::with_capacity(self.d());
        for (j, col) in self.x.axis_iter(Axis(1)).enumerate() {
            if self.indicator_columns[j] {
                means.push(0.0);
                sds.push(1.0);
                continue;
            }
            let mean = col.sum() / n as f64;
            let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
            let sd = var.sqrt();
            if !(sd > 0.0) {
                return Err(Error::Data(format!(
                    "column '{}' has zero variance",
                    self.columns[j]
                )));
            }
            means.push(mean);
            sds.push(sd);
        }
        Ok((means, sds))
    }

    /// Applies `record` to a dataset in original units.
    pub fn apply_transform(&self, record: &TransformRecord) -> Dataset {
        let mut out = self.clone();
        for (j, mut col) in out.x.axis_iter_mut(Axis(1)).enumerate() {
            if record.standardized[j] {
                let (m, s) = (record.means[j], record.sds[j]);
                col.mapv_inplace(|v| (v - m) / s);
            }
        }
        if record.logged_time && self.time_scale == TimeScale::Raw {
            out.y.iter_mut().for_each(|t| *t = t.ln());
            out.time_scale = TimeScale::Log;
        }
        out.transform = Some(record.clone());
        out
    }

    /// Undoes the recorded transform. Without a record, returns a copy.
    pub fn invert(&self) -> Dataset {
        let Some(record) = &self.transform else {
            return self.clone();
        };
        let mut out = self.clone();
        for (j, mut col) in out.x.axis_iter_mut(Axis(1)).enumerate() {
            if record.standardized[j] {
                let (m, s) = (record.means[j], record.sds[j]);
                col.mapv_inplace(|v| v * s + m);
            }
        }
        if record.logged_time {
            out.y.iter_mut().for_each(|t| *t = t.exp());
            out.time_scale = TimeScale::Raw;
        }
        out.transform = None;
        out
    }

    /// Standardizes non-indicator covariates to mean 0 and sample sd 1
    /// and moves raw times to the log scale.
    pub fn standardize(&self) -> Result<Dataset> {
        let base = self.invert();
        let (means, sds) = base.column_stats()?;
        let record = TransformRecord {
            standardized: base.indicator_columns.iter().map(|&b| !b).collect(),
            means,
            sds,
            logged_time: base.time_scale == TimeScale::Raw,
        };
        Ok(base.apply_transform(&record))
    }

    /// Transforms covariates given in original units with this dataset's record.
    pub fn transform_covariates(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.d() {
            return Err(Error::Shape(format!(
                "expected {} covariates, got {}",
                self.d(),
                x.len()
            )));
        }
        Ok(match &self.transform {
            None => x.to_vec(),
            Some(r) => x
                .iter()
                .enumerate()
                .map(|(j, &v)| {
                    if r.standardized[j] {
                        (v - r.means[j]) / r.sds[j]
                    } else {
                        v
                    }
                })
                .collect(),
        })
    }
}

pub fn standardize(dataset: &Dataset) -> Result<Dataset> {
    dataset.standardize()
}

/// Seeded shuffle, then the first `round(n * test_fraction)` rows form the
/// test part. Both parts are transformed with statistics of the training
/// part only.
pub fn split(dataset: &Dataset, test_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "test fraction must lie in (0,1), got {test_fraction}"
        )));
    }
    let n = dataset.n();
    let n_test = (n as f64 * test_fraction).round() as usize;
    if n_test == 0 || n_test >= n {
        return Err(Error::InvalidParameter(format!(
            "test fraction {test_fraction} of {n} rows leaves an empty part"
        )));
    }
    let mut rows: Vec<usize> = (0..n).collect();
    rows.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (test_rows, train_rows) = rows.split_at(n_test);
    let base = dataset.invert();
    let train_raw = base.select_rows(train_rows);
    let test_raw = base.select_rows(test_rows);
    let train = train_raw.standardize()?;
    let record = train.transform.clone().expect("standardize sets a record");
    let test = test_raw.apply_transform(&record);
    Ok((train, test))
}
