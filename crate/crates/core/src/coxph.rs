//! Cox proportional-hazards fit by Newton-Raphson on the Breslow partial likelihood.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::estimators::{CurveKind, StepCurve};
use crate::pipeline::Dataset;

pub const MAX_ITERATIONS: usize = 100;
pub const SCORE_TOLERANCE: f64 = 1e-9;
pub const LOGLIK_TOLERANCE: f64 = 1e-12;
const MAX_HALVINGS: usize = 60;
const SEPARATION_BOUND: f64 = 30.0;
const FLAT_LIKELIHOOD_SE: f64 = 100.0;

#[derive(Clone, Debug, PartialEq)]
pub struct CoxFit {
    pub beta: Vec<f64>,
    /// Square roots of the diagonal of the inverse information at `beta`.
    pub std_errors: Vec<f64>,
    pub log_likelihood: f64,
    pub iterations: usize,
    /// Breslow estimate on the dataset's time scale.
    pub baseline: StepCurve,
    pub columns: Vec<String>,
}

/// Risk-set groups: rows sorted by decreasing time, tied times adjacent.
struct Groups {
    order: Vec<usize>,
    /// `(start, end)` into `order` per distinct time, decreasing time.
    spans: Vec<(usize, usize)>,
}

fn groups(data: &Dataset) -> Groups {
    let mut order: Vec<usize> = (0..data.n()).collect();
    order.sort_by(|&a, &b| data.y[b].total_cmp(&data.y[a]));
    let mut spans = Vec::new();
    let mut start = 0;
    for k in 1..=order.len() {
        if k == order.len() || data.y[order[k]] != data.y[order[start]] {
            spans.push((start, k));
            start = k;
        }
    }
    Groups { order, spans }
}

struct Evaluation {
    loglik: f64,
    score: DVector<f64>,
    information: DMatrix<f64>,
}

fn evaluate(data: &Dataset, g: &Groups, beta: &DVector<f64>) -> Evaluation {
    let d = data.d();
    let mut loglik = 0.0;
    let mut score = DVector::zeros(d);
    let mut information = DMatrix::zeros(d, d);
    let mut s0 = 0.0;
    let mut s1 = DVector::zeros(d);
    let mut s2 = DMatrix::zeros(d, d);
    for &(start, end) in &g.spans {
        let mut events = 0usize;
        let mut event_x = DVector::zeros(d);
        for &i in &g.order[start..end] {
            let x = DVector::from_iterator(d, data.x.row(i).iter().copied());
            let eta = x.dot(beta);
            let w = eta.exp();
            s0 += w;
            s1.axpy(w, &x, 1.0);
            s2.ger(w, &x, &x, 1.0);
            if data.delta[i] == 1 {
                events += 1;
                event_x += &x;
                loglik += eta;
            }
        }
        if events > 0 {
            let k = events as f64;
            let mean = &s1 / s0;
            loglik -= k * s0.ln();
            score += event_x - k * &mean;
            information += k * (&s2 / s0 - &mean * mean.transpose());
        }
    }
    Evaluation {
        loglik,
        score,
        information,
    }
}

fn breslow(data: &Dataset, g: &Groups, beta: &DVector<f64>) -> StepCurve {
    let d = data.d();
    let mut at_risk = Vec::with_capacity(g.spans.len());
    let mut s0 = 0.0;
    for &(start, end) in &g.spans {
        let mut events = 0usize;
        for &i in &g.order[start..end] {
            let x = DVector::from_iterator(d, data.x.row(i).iter().copied());
            s0 += x.dot(beta).exp();
            events += usize::from(data.delta[i] == 1);
        }
        at_risk.push((data.y[g.order[start]], events, s0));
    }
    let mut jump_times = Vec::new();
    let mut values = Vec::new();
    let mut hazard = 0.0;
    for &(t, events, s0) in at_risk.iter().rev() {
        if events > 0 {
            hazard += events as f64 / s0;
            jump_times.push(t);
            values.push(hazard);
        }
    }
    StepCurve {
        kind: CurveKind::CumulativeHazard,
        scale: data.time_scale,
        initial: 0.0,
        jump_times,
        values,
        horizon: g.order.first().map_or(f64::NAN, |&i| data.y[i]),
        sample_size: data.n(),
    }
}

fn max_abs(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn separation_error(data: &Dataset, beta: &DVector<f64>) -> Error {
    let (j, _) = beta
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
        .unwrap_or((0, &0.0));
    Error::Cox(format!(
        "partial likelihood is monotone in covariate '{}' (coefficient diverging)",
        data.columns.get(j).map_or("?", String::as_str)
    ))
}

pub fn fit_coxph(data: &Dataset) -> Result<CoxFit> {
    data.validate()?;
    if !data.delta.contains(&1) {
        return Err(Error::Cox("no events in the dataset".into()));
    }
    let d = data.d();
    let g = groups(data);
    let mut beta = DVector::zeros(d);
    let mut eval = evaluate(data, &g, &beta);
    let mut iterations = 0;
    while iterations < MAX_ITERATIONS {
        if max_abs(&eval.score) < SCORE_TOLERANCE {
            break;
        }
        let chol = eval.information.clone().cholesky().ok_or_else(|| {
            Error::Cox("information matrix is singular (covariates not full rank on events)".into())
        })?;
        let step = chol.solve(&eval.score);
        let mut scale = 1.0;
        let mut accepted = None;
        for _ in 0..MAX_HALVINGS {
            let candidate = &beta + scale * &step;
            let next = evaluate(data, &g, &candidate);
            if next.loglik.is_finite() && next.loglik >= eval.loglik {
                accepted = Some((candidate, next));
                break;
            }
            scale *= 0.5;
        }
        iterations += 1;
        let Some((candidate, next)) = accepted else {
            break;
        };
        if max_abs(&candidate) > SEPARATION_BOUND {
            return Err(separation_error(data, &candidate));
        }
        let change = (next.loglik - eval.loglik).abs() / eval.loglik.abs().max(1e-300);
        beta = candidate;
        eval = next;
        if change < LOGLIK_TOLERANCE {
            break;
        }
    }
    if iterations == MAX_ITERATIONS && max_abs(&eval.score) >= SCORE_TOLERANCE {
        return Err(separation_error(data, &beta));
    }
    let std_errors = if d == 0 {
        Vec::new()
    } else {
        let inv = eval
            .information
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::Cox("information matrix is singular at the estimate".into()))?;
        (0..d).map(|j| inv[(j, j)].max(0.0).sqrt()).collect::<Vec<_>>()
    };
    // A coefficient drifting off to infinity leaves the likelihood flat in
    // that direction: its standard error dwarfs the covariate's spread.
    for (j, se) in std_errors.iter().enumerate() {
        let col = data.x.column(j);
        let mean = col.sum() / data.n() as f64;
        let spread = col.iter().map(|v| (v - mean).abs()).fold(0.0, f64::max);
        if se * spread > FLAT_LIKELIHOOD_SE {
            return Err(Error::Cox(format!(
                "partial likelihood is monotone in covariate '{}' (coefficient diverging)",
                data.columns[j]
            )));
        }
    }
    if beta.iter().any(|b| !b.is_finite()) {
        return Err(Error::Cox("non-finite coefficient".into()));
    }
    Ok(CoxFit {
        baseline: breslow(data, &g, &beta),
        beta: beta.iter().copied().collect(),
        std_errors,
        log_likelihood: eval.loglik,
        iterations,
        columns: data.columns.clone(),
    })
}

impl CoxFit {
    pub fn linear_predictor(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.beta.len() {
            return Err(Error::Shape(format!(
                "fit has {} coefficients, got {} covariates",
                self.beta.len(),
                x.len()
            )));
        }
        Ok(x.iter().zip(&self.beta).map(|(a, b)| a * b).sum())
    }

    /// Survival curve for covariates `x`, on the baseline's time axis.
    pub fn survival_curve(&self, x: &[f64]) -> Result<StepCurve> {
        let r = self.linear_predictor(x)?.exp();
        let b = &self.baseline;
        let mut jump_times = Vec::new();
        let mut values = Vec::new();
        let mut prev = 1.0;
        for (&t, &h) in b.jump_times.iter().zip(&b.values) {
            let s = (-h * r).exp();
            if s != prev {
                jump_times.push(t);
                values.push(s);
                prev = s;
            }
        }
        Ok(StepCurve {
            kind: CurveKind::Survival,
            initial: 1.0,
            jump_times,
            values,
            ..b.clone()
        })
    }

    pub fn report(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "log_partial_likelihood = {}", self.log_likelihood);
        let _ = writeln!(out, "iterations = {}", self.iterations);
        let _ = writeln!(out, "covariate,beta,se,hazard_ratio");
        for (j, name) in self.columns.iter().enumerate() {
            let _ = writeln!(
                out,
                "{name},{},{},{}",
                self.beta[j],
                self.std_errors[j],
                self.beta[j].exp()
            );
        }
        out
    }
}

/// `exp(-Lambda0(t) e^{x'beta})`; `t` on the baseline's time axis.
pub fn cox_survival(fit: &CoxFit, x: &[f64], t: f64) -> Result<f64> {
    let r = fit.linear_predictor(x)?.exp();
    Ok((-fit.baseline.value_at(t) * r).exp())
}
