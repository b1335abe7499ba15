//! Nonparametric survival estimators over a finite censored sample.
//!
//! Observations are ordered by time with events placed before censorings at
//! equal times; the Nelson-Aalen and Kaplan-Meier curves are then the ordered
//! sum `sum_j delta_(j) / (m - j + 1)` and product
//! `prod_j (1 - delta_(j) / (m - j + 1))` over `y_(j) <= t`.

use std::fmt::Write as _;

use crate::error::{Error, Result};

/// Slack used when comparing accumulated survival values against a level.
pub const LEVEL_TOLERANCE: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TimeScale {
    Log,
    Raw,
}

impl TimeScale {
    pub fn name(self) -> &'static str {
        match self {
            TimeScale::Log => "log",
            TimeScale::Raw => "raw",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        match s {
            "log" => Some(TimeScale::Log),
            "raw" => Some(TimeScale::Raw),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CensoredSample {
    pub times: Vec<f64>,
    pub events: Vec<u8>,
    pub scale: TimeScale,
}

impl CensoredSample {
    pub fn new(times: Vec<f64>, events: Vec<u8>, scale: TimeScale) -> Result<Self> {
        if times.len() != events.len() {
            return Err(Error::Shape(format!(
                "{} times but {} indicators",
                times.len(),
                events.len()
            )));
        }
        if let Some(i) = events.iter().position(|&d| d > 1) {
            return Err(Error::Data(format!("indicator at index {i} is not binary")));
        }
        if let Some(i) = times.iter().position(|t| !t.is_finite()) {
            return Err(Error::Data(format!("non-finite time at index {i}")));
        }
        Ok(CensoredSample {
            times,
            events,
            scale,
        })
    }

    pub fn from_pairs(pairs: &[(f64, u8)], scale: TimeScale) -> Result<Self> {
        Self::new(
            pairs.iter().map(|p| p.0).collect(),
            pairs.iter().map(|p| p.1).collect(),
            scale,
        )
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Exponentiates log-scale times; raw samples are returned unchanged.
    pub fn to_raw(&self) -> CensoredSample {
        match self.scale {
            TimeScale::Raw => self.clone(),
            TimeScale::Log => CensoredSample {
                times: self.times.iter().map(|t| t.exp()).collect(),
                events: self.events.clone(),
                scale: TimeScale::Raw,
            },
        }
    }

    pub fn censored_fraction(&self) -> f64 {
        let censored = self.events.iter().filter(|&&d| d == 0).count();
        censored as f64 / self.len() as f64
    }

    /// Indices sorted by time, events before censorings at ties.
    fn order(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.sort_by(|&a, &b| {
            self.times[a]
                .total_cmp(&self.times[b])
                .then_with(|| self.events[b].cmp(&self.events[a]))
        });
        idx
    }

    fn nonempty(&self) -> Result<()> {
        if self.is_empty() {
            Err(Error::EmptySample)
        } else {
            Ok(())
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CurveKind {
    Survival,
    CumulativeHazard,
    Subdistribution,
}

impl CurveKind {
    pub fn name(self) -> &'static str {
        match self {
            CurveKind::Survival => "survival",
            CurveKind::CumulativeHazard => "cumulative-hazard",
            CurveKind::Subdistribution => "subdistribution",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        match s {
            "survival" => Some(CurveKind::Survival),
            "cumulative-hazard" => Some(CurveKind::CumulativeHazard),
            "subdistribution" => Some(CurveKind::Subdistribution),
            _ => None,
        }
    }

    pub fn nonincreasing(self) -> bool {
        self == CurveKind::Survival
    }
}

/// Right-continuous step function.
#[derive(Clone, Debug, PartialEq)]
pub struct StepCurve {
    pub kind: CurveKind,
    pub scale: TimeScale,
    /// Value before the first jump.
    pub initial: f64,
    /// Strictly increasing.
    pub jump_times: Vec<f64>,
    /// Value from each jump time onward.
    pub values: Vec<f64>,
    /// Largest time in the sample the curve was built from.
    pub horizon: f64,
    /// Sample size.
    pub sample_size: usize,
}

impl StepCurve {
    pub fn value_at(&self, t: f64) -> f64 {
        let k = self.jump_times.partition_point(|&s| s <= t);
        if k == 0 {
            self.initial
        } else {
            self.values[k - 1]
        }
    }

    pub fn final_value(&self) -> f64 {
        self.values.last().copied().unwrap_or(self.initial)
    }

    /// Checks ordering, monotonicity, and range.
    pub fn check_invariants(&self) -> Result<()> {
        if self.jump_times.len() != self.values.len() {
            return Err(Error::Shape("jump times and values differ in length".into()));
        }
        if self.jump_times.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Data("jump times not strictly increasing".into()));
        }
        let mut prev = self.initial;
        for &v in &self.values {
            let ok = if self.kind.nonincreasing() {
                v <= prev
            } else {
                v >= prev
            };
            if !ok || !v.is_finite() {
                return Err(Error::Data(format!(
                    "{} curve is not monotone at value {v}",
                    self.kind.name()
                )));
            }
            prev = v;
        }
        match self.kind {
            CurveKind::Survival if self.initial != 1.0 || prev < 0.0 => {
                Err(Error::Data("survival curve out of [0,1]".into()))
            }
            CurveKind::CumulativeHazard | CurveKind::Subdistribution if self.initial != 0.0 => {
                Err(Error::Data("increasing curve must start at 0".into()))
            }
            CurveKind::Subdistribution if prev > 1.0 => {
                Err(Error::Data("subdistribution exceeds 1".into()))
            }
            _ => Ok(()),
        }
    }

    /// Maps the time axis through `f`, which must be strictly increasing.
    pub fn map_time(&self, f: impl Fn(f64) -> f64, scale: TimeScale) -> StepCurve {
        StepCurve {
            jump_times: self.jump_times.iter().map(|&t| f(t)).collect(),
            horizon: f(self.horizon),
            scale,
            ..self.clone()
        }
    }

    /// Two-column text export. Values use 12 significant digits.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "# kind={} scale={} m={} initial={} horizon={}",
            self.kind.name(),
            self.scale.name(),
            self.sample_size,
            fmt12(self.initial),
            fmt12(self.horizon)
        );
        out.push_str("time,value\n");
        for (t, v) in self.jump_times.iter().zip(&self.values) {
            let _ = writeln!(out, "{},{}", fmt12(*t), fmt12(*v));
        }
        out
    }

    /// Parses [`StepCurve::to_text`] output (values carry only 12 digits).
    pub fn from_text(text: &str) -> Result<StepCurve> {
        let mut lines = text.lines();
        let header = lines
            .next()
            .and_then(|l| l.strip_prefix("# "))
            .ok_or_else(|| Error::Parse("missing curve header".into()))?;
        let mut kind = None;
        let mut scale = None;
        let mut m = None;
        let mut initial = None;
        let mut horizon = None;
        for field in header.split_ascii_whitespace() {
            let (k, v) = field
                .split_once('=')
                .ok_or_else(|| Error::Parse(format!("bad header field '{field}'")))?;
            match k {
                "kind" => kind = CurveKind::from_name(v),
                "scale" => scale = TimeScale::from_name(v),
                "m" => m = v.parse().ok(),
                "initial" => initial = v.parse().ok(),
                "horizon" => horizon = v.parse().ok(),
                _ => {}
            }
        }
        if lines.next() != Some("time,value") {
            return Err(Error::Parse("missing column header".into()));
        }
        let mut jump_times = Vec::new();
        let mut values = Vec::new();
        for line in lines {
            let (t, v) = line
                .split_once(',')
                .ok_or_else(|| Error::Parse(format!("bad curve row '{line}'")))?;
            jump_times.push(t.parse().map_err(|_| Error::Parse(format!("bad time '{t}'")))?);
            values.push(v.parse().map_err(|_| Error::Parse(format!("bad value '{v}'")))?);
        }
        let missing = || Error::Parse("incomplete curve header".into());
        Ok(StepCurve {
            kind: kind.ok_or_else(missing)?,
            scale: scale.ok_or_else(missing)?,
            initial: initial.ok_or_else(missing)?,
            jump_times,
            values,
            horizon: horizon.ok_or_else(missing)?,
            sample_size: m.ok_or_else(missing)?,
        })
    }
}

/// 12 significant digits in scientific notation.
pub fn fmt12(v: f64) -> String {
    format!("{v:.11e}")
}

/// Collapses per-observation running values into one jump per distinct
/// time, keeping only times at which the value changes.
fn collapse(
    sample: &CensoredSample,
    order: &[usize],
    running: &[f64],
    kind: CurveKind,
    initial: f64,
) -> StepCurve {
    let mut jump_times: Vec<f64> = Vec::new();
    let mut values: Vec<f64> = Vec::new();
    let mut current = initial;
    let n = order.len();
    for pos in 0..n {
        let t = sample.times[order[pos]];
        let last_at_time = pos + 1 == n || sample.times[order[pos + 1]] != t;
        if last_at_time && running[pos] != current {
            current = running[pos];
            jump_times.push(t);
            values.push(current);
        }
    }
    StepCurve {
        kind,
        scale: sample.scale,
        initial,
        jump_times,
        values,
        horizon: order.last().map_or(f64::NAN, |&i| sample.times[i]),
        sample_size: sample.len(),
    }
}

/// `H(t) = #{y <= t}/m` and `H1(t) = #{y <= t, delta = 1}/m`.
pub fn empirical_subdistributions(sample: &CensoredSample) -> Result<(StepCurve, StepCurve)> {
    sample.nonempty()?;
    let order = sample.order();
    let m = sample.len() as f64;
    let mut all = Vec::with_capacity(order.len());
    let mut events = Vec::with_capacity(order.len());
    let mut n_events = 0usize;
    for (pos, &i) in order.iter().enumerate() {
        n_events += usize::from(sample.events[i]);
        all.push((pos + 1) as f64 / m);
        events.push(n_events as f64 / m);
    }
    Ok((
        collapse(sample, &order, &all, CurveKind::Subdistribution, 0.0),
        collapse(sample, &order, &events, CurveKind::Subdistribution, 0.0),
    ))
}

pub fn nelson_aalen(sample: &CensoredSample) -> Result<StepCurve> {
    sample.nonempty()?;
    let order = sample.order();
    let m = sample.len();
    let mut running = Vec::with_capacity(m);
    // Double-double accumulation: `hi + lo` carries the running sum and
    // each term's division residual, so short sums round correctly.
    let (mut hi, mut lo) = (0.0f64, 0.0f64);
    for (pos, &i) in order.iter().enumerate() {
        if sample.events[i] == 1 {
            let k = (m - pos) as f64;
            let q = 1.0 / k;
            let q_err = (-q).mul_add(k, 1.0) / k;
            let sum = hi + q;
            let bv = sum - hi;
            let sum_err = (hi - (sum - bv)) + (q - bv);
            hi = sum;
            lo += sum_err + q_err;
            let renorm = hi + lo;
            lo -= renorm - hi;
            hi = renorm;
        }
        running.push(hi + lo);
    }
    Ok(collapse(sample, &order, &running, CurveKind::CumulativeHazard, 0.0))
}

pub fn kaplan_meier(sample: &CensoredSample) -> Result<StepCurve> {
    sample.nonempty()?;
    let order = sample.order();
    let m = sample.len();
    // Between censorings the product telescopes to a ratio of risk-set
    // sizes, so evaluate it as `base * at_risk / base_at_risk`.
    let mut base = 1.0;
    let mut base_at_risk = m as f64;
    let mut running = Vec::with_capacity(m);
    let mut current = 1.0;
    for (pos, &i) in order.iter().enumerate() {
        let at_risk_after = (m - pos - 1) as f64;
        if sample.events[i] == 1 {
            current = base * at_risk_after / base_at_risk;
        } else {
            base = current;
            base_at_risk = at_risk_after;
        }
        running.push(current);
    }
    Ok(collapse(sample, &order, &running, CurveKind::Survival, 1.0))
}

/// Right-continuous evaluation of a survival curve.
pub fn survival_at(curve: &StepCurve, t: f64) -> f64 {
    curve.value_at(t)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Quantile {
    Time(f64),
    /// The curve never falls to the requested level.
    Saturated,
}

impl Quantile {
    pub fn time(self) -> Option<f64> {
        match self {
            Quantile::Time(t) => Some(t),
            Quantile::Saturated => None,
        }
    }
}

/// Smallest jump time at which the survival curve is at or below `level`.
pub fn quantile(curve: &StepCurve, level: f64) -> Quantile {
    if curve.initial <= level + LEVEL_TOLERANCE {
        // Only reachable for degenerate levels; the curve starts at 1.
        return match curve.jump_times.first() {
            Some(&t) => Quantile::Time(t),
            None => Quantile::Saturated,
        };
    }
    curve
        .values
        .iter()
        .position(|&v| v <= level + LEVEL_TOLERANCE)
        .map_or(Quantile::Saturated, |k| Quantile::Time(curve.jump_times[k]))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PredictionInterval {
    pub lo: f64,
    pub hi: f64,
    pub lo_saturated: bool,
    pub hi_saturated: bool,
}

/// Central interval from the survival curve: `lo` at level `(1+c)/2`, `hi` at
/// `(1-c)/2`. A bound the curve never reaches falls back to the horizon.
pub fn prediction_interval(curve: &StepCurve, coverage: f64) -> Result<PredictionInterval> {
    if !(coverage > 0.0 && coverage < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "coverage must lie in (0,1), got {coverage}"
        )));
    }
    let lo = quantile(curve, (1.0 + coverage) / 2.0);
    let hi = quantile(curve, (1.0 - coverage) / 2.0);
    Ok(PredictionInterval {
        lo: lo.time().unwrap_or(curve.horizon),
        hi: hi.time().unwrap_or(curve.horizon),
        lo_saturated: lo == Quantile::Saturated,
        hi_saturated: hi == Quantile::Saturated,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CensoringStatus {
    Censored,
    Uncensored,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CensoringClass {
    pub status: CensoringStatus,
    pub censored_fraction: f64,
}

/// Censored iff strictly more than half of the sample is censored.
pub fn censoring_classification(sample: &CensoredSample) -> Result<CensoringClass> {
    sample.nonempty()?;
    let censored_fraction = sample.censored_fraction();
    let status = if censored_fraction > 0.5 {
        CensoringStatus::Censored
    } else {
        CensoringStatus::Uncensored
    };
    Ok(CensoringClass {
        status,
        censored_fraction,
    })
}
