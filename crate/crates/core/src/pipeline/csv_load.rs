use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use ndarray::Array2;
use serde::Deserialize;

use crate::error::{Error, Result};
use crate::estimators::TimeScale;

use super::dataset::Dataset;

/// Explicit column mapping for a survival CSV.
#[derive(Clone, Debug, Default, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct Schema {
    pub time_col: String,
    pub status_col: String,
    #[serde(default)]
    pub covariates: Vec<String>,
    /// Subset of `covariates` expanded into 0/1 dummies (first level dropped).
    #[serde(default)]
    pub categorical: Vec<String>,
    /// Status value to indicator. Empty means the column already holds 0/1.
    #[serde(default)]
    pub status_map: BTreeMap<String, u8>,
    #[serde(default = "default_missing")]
    pub missing_values: Vec<String>,
}

fn default_missing() -> Vec<String> {
    ["", "NA", "NaN", "nan", "."].iter().map(|s| s.to_string()).collect()
}

impl Schema {
    pub fn from_toml(text: &str) -> Result<Schema> {
        let schema: Schema = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        if let Some(c) = schema
            .categorical
            .iter()
            .find(|c| !schema.covariates.contains(c))
        {
            return Err(Error::Parse(format!(
                "categorical column '{c}' is not listed in covariates"
            )));
        }
        if schema.status_map.values().any(|&v| v > 1) {
            return Err(Error::Parse("status_map values must be 0 or 1".into()));
        }
        Ok(schema)
    }

    pub fn load(path: &Path) -> Result<Schema> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    fn parse_status(&self, raw: &str, line: usize) -> Result<u8> {
        let key = raw.trim();
        if self.status_map.is_empty() {
            return match key {
                "0" => Ok(0),
                "1" => Ok(1),
                _ => Err(Error::Data(format!(
                    "line {line}: status '{raw}' is not 0/1 and no status_map is given"
                ))),
            };
        }
        self.status_map
            .get(key)
            .copied()
            .ok_or_else(|| Error::Data(format!("line {line}: unmapped status value '{raw}'")))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LoadReport {
    pub dataset: Dataset,
    pub dropped_rows: usize,
}

fn parse_number(raw: &str, column: &str, line: usize) -> Result<f64> {
    let v: f64 = raw.trim().parse().map_err(|_| {
        Error::Data(format!("line {line}: column '{column}' value '{raw}' is not a number"))
    })?;
    if !v.is_finite() {
        return Err(Error::Data(format!(
            "line {line}: column '{column}' value '{raw}' is not finite"
        )));
    }
    Ok(v)
}

/// Reads raw-scale survival data. Rows with a missing value in any used
/// column are dropped and counted.
pub fn load_csv_from_reader<R: std::io::Read>(reader: R, schema: &Schema) -> Result<LoadReport> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| Error::Data(format!("cannot read header: {e}")))?
        .clone();
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| Error::Data(format!("unknown column '{name}'")))
    };
    let time_idx = find(&schema.time_col)?;
    let status_idx = find(&schema.status_col)?;
    let cov_idx = schema
        .covariates
        .iter()
        .map(|c| find(c))
        .collect::<Result<Vec<_>>>()?;
    let is_categorical: Vec<bool> = schema
        .covariates
        .iter()
        .map(|c| schema.categorical.contains(c))
        .collect();

    let mut times = Vec::new();
    let mut status = Vec::new();
    let mut values: Vec<Vec<String>> = Vec::new();
    let mut dropped = 0usize;
    for (row_no, record) in rdr.records().enumerate() {
        let line = row_no + 2;
        let record = record.map_err(|e| Error::Data(format!("line {line}: {e}")))?;
        let field = |i: usize| record.get(i).unwrap_or("");
        let used = std::iter::once(time_idx)
            .chain(std::iter::once(status_idx))
            .chain(cov_idx.iter().copied());
        if used
            .map(|i| field(i).trim())
            .any(|v| schema.missing_values.iter().any(|m| m == v))
        {
            dropped += 1;
            continue;
        }
        let t = parse_number(field(time_idx), &schema.time_col, line)?;
        if !(t > 0.0) {
            return Err(Error::Data(format!(
                "line {line}: time {t} must be strictly positive"
            )));
        }
        times.push(t);
        status.push(schema.parse_status(field(status_idx), line)?);
        let mut row = Vec::with_capacity(cov_idx.len());
        for (k, &i) in cov_idx.iter().enumerate() {
            if !is_categorical[k] {
                parse_number(field(i), &schema.covariates[k], line)?;
            }
            row.push(field(i).trim().to_string());
        }
        values.push(row);
    }

    // Expand categoricals into dummies over the levels present.
    let mut columns = Vec::new();
    let mut indicator = Vec::new();
    let mut extractors: Vec<(usize, Option<String>)> = Vec::new();
    for (k, name) in schema.covariates.iter().enumerate() {
        if is_categorical[k] {
            let levels: BTreeSet<&str> = values.iter().map(|r| r[k].as_str()).collect();
            for level in levels.into_iter().skip(1) {
                columns.push(format!("{name}={level}"));
                indicator.push(true);
                extractors.push((k, Some(level.to_string())));
            }
        } else {
            columns.push(name.clone());
            indicator.push(false);
            extractors.push((k, None));
        }
    }
    let n = values.len();
    let mut x = Array2::zeros((n, columns.len()));
    for (i, row) in values.iter().enumerate() {
        for (j, (k, level)) in extractors.iter().enumerate() {
            x[[i, j]] = match level {
                Some(level) => f64::from(u8::from(&row[*k] == level)),
                None => row[*k].parse().expect("validated above"),
            };
        }
    }
    let dataset = Dataset {
        x,
        y: times,
        delta: status,
        columns,
        time_scale: TimeScale::Raw,
        indicator_columns: indicator,
        transform: None,
    };
    dataset.validate()?;
    Ok(LoadReport {
        dataset,
        dropped_rows: dropped,
    })
}

pub fn load_csv(path: &Path, schema: &Schema) -> Result<LoadReport> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    load_csv_from_reader(std::io::BufReader::new(file), schema)
}
