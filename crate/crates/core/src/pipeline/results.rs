use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::estimators::{PredictionInterval, StepCurve, TimeScale};

use super::dataset::Dataset;

/// One cell of a calibration table: mean and Monte-Carlo standard error of
/// the estimated survival percentage at one covariate point and level.
#[derive(Clone, Debug, PartialEq)]
pub struct CalibrationRow {
    pub scenario: String,
    pub method: String,
    /// Common value of every covariate coordinate.
    pub x: f64,
    /// Nominal survival level in percent.
    pub level: f64,
    pub mean: f64,
    pub se: Option<f64>,
    pub replicates: usize,
}

impl CalibrationRow {
    pub fn from_replicates(
        scenario: &str,
        method: &str,
        x: f64,
        level: f64,
        values: &[f64],
    ) -> CalibrationRow {
        let k = values.len();
        let mean = values.iter().sum::<f64>() / k as f64;
        let se = (k > 1).then(|| {
            let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1) as f64;
            (var / k as f64).sqrt()
        });
        CalibrationRow {
            scenario: scenario.to_string(),
            method: method.to_string(),
            x,
            level,
            mean,
            se,
            replicates: k,
        }
    }
}

pub const CALIBRATION_HEADER: &str = "scenario,method,x,level,mean,se,replicates";

pub fn calibration_csv(rows: &[CalibrationRow]) -> String {
    let mut out = String::from(CALIBRATION_HEADER);
    out.push('\n');
    for r in rows {
        let se = r.se.map(|v| v.to_string()).unwrap_or_default();
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.scenario, r.method, r.x, r.level, r.mean, se, r.replicates
        );
    }
    out
}

pub fn parse_calibration_csv(text: &str) -> Result<Vec<CalibrationRow>> {
    let mut lines = text.lines();
    if lines.next() != Some(CALIBRATION_HEADER) {
        return Err(Error::Parse("unexpected calibration header".into()));
    }
    let num = |s: &str| -> Result<f64> {
        s.parse()
            .map_err(|_| Error::Parse(format!("bad number '{s}' in calibration table")))
    };
    lines
        .map(|line| {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 7 {
                return Err(Error::Parse(format!("bad calibration row '{line}'")));
            }
            Ok(CalibrationRow {
                scenario: f[0].to_string(),
                method: f[1].to_string(),
                x: num(f[2])?,
                level: num(f[3])?,
                mean: num(f[4])?,
                se: if f[5].is_empty() { None } else { Some(num(f[5])?) },
                replicates: f[6]
                    .parse()
                    .map_err(|_| Error::Parse(format!("bad replicate count '{}'", f[6])))?,
            })
        })
        .collect()
}

/// Prediction for one test subject.
#[derive(Clone, Debug, PartialEq)]
pub struct IntervalRow {
    pub id: String,
    pub predicted_censored: bool,
    pub interval: PredictionInterval,
    pub true_y: Option<f64>,
    pub true_delta: Option<u8>,
}

impl IntervalRow {
    /// `lo <= y <= hi`, defined only for subjects with an observed event.
    pub fn covered(&self) -> Option<bool> {
        match (self.true_y, self.true_delta) {
            (Some(y), Some(1)) => Some(self.interval.lo <= y && y <= self.interval.hi),
            _ => None,
        }
    }
}

pub const INTERVAL_HEADER: &str = "id,predicted_censored,lo,hi,hi_saturated,true_y,true_delta,covered";

pub fn interval_csv(rows: &[IntervalRow]) -> String {
    let mut out = String::from(INTERVAL_HEADER);
    out.push('\n');
    for r in rows {
        let opt = |v: Option<String>| v.unwrap_or_default();
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            r.id,
            u8::from(r.predicted_censored),
            r.interval.lo,
            r.interval.hi,
            u8::from(r.interval.hi_saturated),
            opt(r.true_y.map(|v| v.to_string())),
            opt(r.true_delta.map(|v| v.to_string())),
            opt(r.covered().map(|c| u8::from(c).to_string())),
        );
    }
    out
}

/// Everything a run emits.
#[derive(Clone, Debug, Default)]
pub struct Results {
    /// `(label, curve)`; written as `curve_<label>.txt`.
    pub curves: Vec<(String, StepCurve)>,
    pub intervals: Option<Vec<IntervalRow>>,
    pub calibration: Option<Vec<CalibrationRow>>,
}

fn sanitize(label: &str) -> String {
    label
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '.' { c } else { '_' })
        .collect()
}

/// Writes `path` through a temporary sibling and a rename.
pub fn write_atomic(path: &Path, contents: &str) -> Result<()> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, contents).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn write_results(results: &Results, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();
    for (label, curve) in &results.curves {
        let path = dir.join(format!("curve_{}.txt", sanitize(label)));
        write_atomic(&path, &curve.to_text())?;
        written.push(path);
    }
    if let Some(rows) = &results.intervals {
        let path = dir.join("intervals.csv");
        write_atomic(&path, &interval_csv(rows))?;
        written.push(path);
    }
    if let Some(rows) = &results.calibration {
        let path = dir.join("calibration.csv");
        write_atomic(&path, &calibration_csv(rows))?;
        written.push(path);
    }
    Ok(written)
}

/// Native dataset CSV: covariate columns, then `log_time,status`.
pub fn dataset_csv(data: &Dataset) -> Result<String> {
    if data.time_scale != TimeScale::Log {
        return Err(Error::Data("dataset export expects log-scale times".into()));
    }
    let mut out = String::new();
    for c in &data.columns {
        out.push_str(c);
        out.push(',');
    }
    out.push_str("log_time,status\n");
    for i in 0..data.n() {
        for v in data.x.row(i) {
            let _ = write!(out, "{v},");
        }
        let _ = writeln!(out, "{},{}", data.y[i], data.delta[i]);
    }
    Ok(out)
}

pub fn parse_dataset_csv(text: &str) -> Result<Dataset> {
    let mut lines = text.lines();
    let header: Vec<&str> = lines
        .next()
        .ok_or_else(|| Error::Data("empty dataset file".into()))?
        .split(',')
        .collect();
    let k = header.len();
    if k < 2 || header[k - 2] != "log_time" || header[k - 1] != "status" {
        return Err(Error::Data(
            "dataset CSV must end with log_time,status columns".into(),
        ));
    }
    let d = k - 2;
    let mut xs = Vec::new();
    let mut y = Vec::new();
    let mut delta = Vec::new();
    for (i, line) in lines.enumerate() {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != k {
            return Err(Error::Data(format!("line {}: expected {k} fields", i + 2)));
        }
        let num = |s: &str| -> Result<f64> {
            s.parse()
                .map_err(|_| Error::Data(format!("line {}: bad number '{s}'", i + 2)))
        };
        for v in &f[..d] {
            xs.push(num(v)?);
        }
        y.push(num(f[d])?);
        delta.push(match f[d + 1] {
            "0" => 0,
            "1" => 1,
            s => return Err(Error::Data(format!("line {}: bad status '{s}'", i + 2))),
        });
    }
    let n = y.len();
    let x = Array2::from_shape_vec((n, d), xs).map_err(|e| Error::Shape(e.to_string()))?;
    Dataset::new(x, y, delta, header[..d].iter().map(|s| s.to_string()).collect())
}
