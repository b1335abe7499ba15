//! Simulated survival models with known conditional laws.
//!
//! Covariates are `X ~ N(0, I_5)`; the observed record is
//! `(X, log min(T, C), 1{T <= C})`.

use std::fmt;
use std::str::FromStr;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Exp1, StandardNormal};

use crate::error::{Error, Result};
use crate::estimators::{kaplan_meier, survival_at, CensoredSample, TimeScale};
use crate::pipeline::Dataset;
use crate::trainer::ConditionalSampler;

pub const COVARIATE_DIM: usize = 5;
/// Upper limit of covariate-dependent censoring times.
pub const CENSOR_TRUNCATION: f64 = 10.0;
/// Covariate points used for calibration tables: each coordinate equal to the value.
pub const CALIBRATION_POINTS: [f64; 3] = [-0.5, 0.5, 1.0];
pub const CALIBRATION_LEVELS: [f64; 3] = [0.25, 0.50, 0.75];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Model {
    /// Proportional hazards, constant baseline hazard.
    M1,
    /// Weibull proportional hazards with a nonlinear scale.
    M2,
    /// Accelerated failure time, normal error.
    M3,
    /// Accelerated failure time, log-exponential error.
    M4,
}

impl FromStr for Model {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "M1" => Ok(Model::M1),
            "M2" => Ok(Model::M2),
            "M3" => Ok(Model::M3),
            "M4" => Ok(Model::M4),
            _ => Err(Error::InvalidParameter(format!(
                "unknown model '{s}' (expected M1, M2, M3 or M4)"
            ))),
        }
    }
}

impl fmt::Display for Model {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Model::M1 => "M1",
            Model::M2 => "M2",
            Model::M3 => "M3",
            Model::M4 => "M4",
        };
        f.write_str(s)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Censoring {
    Independent,
    Dependent,
}

impl FromStr for Censoring {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "independent" => Ok(Censoring::Independent),
            "dependent" => Ok(Censoring::Dependent),
            _ => Err(Error::InvalidParameter(format!(
                "unknown censoring mode '{s}' (expected independent or dependent)"
            ))),
        }
    }
}

impl fmt::Display for Censoring {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Censoring::Independent => "independent",
            Censoring::Dependent => "dependent",
        })
    }
}

/// How the dependent exponential censoring law is limited to `[0, 10]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Truncation {
    /// Draw from the exponential law conditioned on `C <= 10`.
    Condition,
    /// `min(C, 10)`.
    Cap,
}

impl FromStr for Truncation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "condition" => Ok(Truncation::Condition),
            "cap" => Ok(Truncation::Cap),
            _ => Err(Error::InvalidParameter(format!(
                "unknown truncation mode '{s}' (expected condition or cap)"
            ))),
        }
    }
}

impl fmt::Display for Truncation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Truncation::Condition => "condition",
            Truncation::Cap => "cap",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SimModelSpec {
    pub model: Model,
    pub censoring: Censoring,
    pub truncation: Truncation,
    /// Weibull shape of M2.
    pub weibull_shape: f64,
}

fn phi(x: &[f64]) -> f64 {
    x[0] + x[1] - x[2]
}

/// Linear predictor of M1.
pub fn m1_log_hazard(x: &[f64]) -> f64 {
    x[0] + 0.5 * x[1] + 1.5 * x[2] - 2.0 * x[3] - 0.3 * x[4]
}

/// Log scale of M2.
pub fn m2_log_scale(x: &[f64]) -> f64 {
    x[0] * x[0] - 0.5 * x[1] * x[1] + 1.5 * x[2] - 2.0 * x[3] - 0.3 * x[4]
}

/// Location of log T in M3 and M4.
pub fn aft_location(x: &[f64]) -> f64 {
    x[0] * x[0] + 0.5 * x[1] - 0.8 * x[2]
}

/// Standard normal CDF.
pub fn normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / std::f64::consts::SQRT_2)
}

/// Standard normal upper tail `1 - Phi(z)`.
pub fn normal_sf(z: f64) -> f64 {
    0.5 * libm::erfc(z / std::f64::consts::SQRT_2)
}

/// `z` with `normal_sf(z) = p`, by bisection.
pub fn normal_sf_inverse(p: f64) -> f64 {
    let (mut lo, mut hi) = (-40.0_f64, 40.0_f64);
    while hi - lo > 1e-13 {
        let mid = 0.5 * (lo + hi);
        if normal_sf(mid) > p {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

impl SimModelSpec {
    pub fn new(model: Model, censoring: Censoring) -> Self {
        SimModelSpec {
            model,
            censoring,
            truncation: Truncation::Condition,
            weibull_shape: 2.0,
        }
    }

    /// Architecture preset name matching this scenario.
    pub fn preset_name(&self) -> String {
        format!("{}-{}", self.model.to_string().to_ascii_lowercase(), self.censoring)
    }

    /// Upper end of the uniform independent-censoring law.
    pub fn uniform_censor_max(&self) -> f64 {
        match self.model {
            Model::M1 => 2.0,
            Model::M2 => 3.5,
            Model::M3 => 6.0,
            Model::M4 => 5.0,
        }
    }

    /// Multiplier of `exp(phi(x))` in the dependent-censoring rate.
    pub fn dependent_rate_factor(&self) -> f64 {
        match self.model {
            Model::M1 => 0.8,
            Model::M2 => 0.4,
            Model::M3 => 0.2,
            Model::M4 => 0.3,
        }
    }

    fn check_x(x: &[f64]) -> Result<()> {
        if x.len() != COVARIATE_DIM {
            return Err(Error::Shape(format!(
                "simulation models use {COVARIATE_DIM} covariates, got {}",
                x.len()
            )));
        }
        Ok(())
    }

    pub fn draw_event_time<R: Rng + ?Sized>(&self, x: &[f64], rng: &mut R) -> f64 {
        match self.model {
            Model::M1 => {
                let e: f64 = rng.sample(Exp1);
                e / m1_log_hazard(x).exp()
            }
            Model::M2 => {
                let e: f64 = rng.sample(Exp1);
                m2_log_scale(x).exp() * e.powf(1.0 / self.weibull_shape)
            }
            Model::M3 => {
                let z: f64 = rng.sample(StandardNormal);
                (aft_location(x) + z).exp()
            }
            Model::M4 => {
                let e: f64 = rng.sample(Exp1);
                aft_location(x).exp() * e
            }
        }
    }

    pub fn draw_censor_time<R: Rng + ?Sized>(&self, x: &[f64], rng: &mut R) -> f64 {
        match self.censoring {
            Censoring::Independent => self.uniform_censor_max() * rng.gen::<f64>(),
            Censoring::Dependent => {
                let rate = self.dependent_rate_factor() * phi(x).exp();
                let u: f64 = rng.gen();
                match self.truncation {
                    // inverse CDF of the exponential law restricted to [0, 10]
                    Truncation::Condition => {
                        let mass = -(-rate * CENSOR_TRUNCATION).exp_m1();
                        (-(-u * mass).ln_1p() / rate).min(CENSOR_TRUNCATION)
                    }
                    Truncation::Cap => (-(-u).ln_1p() / rate).min(CENSOR_TRUNCATION),
                }
            }
        }
    }

    pub fn true_survival(&self, x: &[f64], t: f64) -> Result<f64> {
        Self::check_x(x)?;
        if !(t >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "survival time must be nonnegative, got {t}"
            )));
        }
        if t == 0.0 {
            return Ok(1.0);
        }
        Ok(match self.model {
            Model::M1 => (-m1_log_hazard(x).exp() * t).exp(),
            Model::M2 => (-(t / m2_log_scale(x).exp()).powf(self.weibull_shape)).exp(),
            Model::M3 => normal_sf(t.ln() - aft_location(x)),
            Model::M4 => (-t * (-aft_location(x)).exp()).exp(),
        })
    }

    pub fn true_quantile(&self, x: &[f64], level: f64) -> Result<f64> {
        Self::check_x(x)?;
        if !(level > 0.0 && level < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "survival level must lie in (0,1), got {level}"
            )));
        }
        let neg_log = -level.ln();
        Ok(match self.model {
            Model::M1 => neg_log / m1_log_hazard(x).exp(),
            Model::M2 => m2_log_scale(x).exp() * neg_log.powf(1.0 / self.weibull_shape),
            Model::M3 => (aft_location(x) + normal_sf_inverse(level)).exp(),
            Model::M4 => neg_log * aft_location(x).exp(),
        })
    }

    /// Compact `key = value` description.
    pub fn to_config(&self) -> String {
        format!(
            "model = \"{}\"\ncensoring = \"{}\"\ntruncation = \"{}\"\n",
            self.model, self.censoring, self.truncation
        )
    }
}

/// Simulated data plus the latent event and censoring times.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledDataset {
    pub data: Dataset,
    pub event_times: Vec<f64>,
    pub censor_times: Vec<f64>,
}

pub fn simulate(spec: &SimModelSpec, n: usize, seed: u64) -> Result<LabeledDataset> {
    if n == 0 {
        return Err(Error::InvalidParameter("sample size must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = Array2::zeros((n, COVARIATE_DIM));
    let mut y = Vec::with_capacity(n);
    let mut delta = Vec::with_capacity(n);
    let mut event_times = Vec::with_capacity(n);
    let mut censor_times = Vec::with_capacity(n);
    let mut row = [0.0; COVARIATE_DIM];
    for i in 0..n {
        for (j, v) in row.iter_mut().enumerate() {
            *v = rng.sample(StandardNormal);
            x[[i, j]] = *v;
        }
        let t = spec.draw_event_time(&row, &mut rng);
        let c = spec.draw_censor_time(&row, &mut rng);
        y.push(t.min(c).ln());
        delta.push(u8::from(t <= c));
        event_times.push(t);
        censor_times.push(c);
    }
    let columns = (1..=COVARIATE_DIM).map(|j| format!("x{j}")).collect();
    Ok(LabeledDataset {
        data: Dataset::new(x, y, delta, columns)?,
        event_times,
        censor_times,
    })
}

/// Seed for replicate `index` of a run seeded with `seed`.
pub fn child_seed(seed: u64, index: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index.wrapping_add(1));
    rng.gen()
}

/// Samples the true conditional law of `(log Y, Delta)` directly.
#[derive(Clone, Copy, Debug)]
pub struct OracleSampler {
    pub spec: SimModelSpec,
    /// Without censoring every draw is an observed event time.
    pub censored: bool,
}

impl ConditionalSampler for OracleSampler {
    fn sample(&self, x: &[f64], m: usize, seed: u64) -> Result<CensoredSample> {
        SimModelSpec::check_x(x)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut times = Vec::with_capacity(m);
        let mut events = Vec::with_capacity(m);
        for _ in 0..m {
            let t = self.spec.draw_event_time(x, &mut rng);
            if self.censored {
                let c = self.spec.draw_censor_time(x, &mut rng);
                times.push(t.min(c).ln());
                events.push(u8::from(t <= c));
            } else {
                times.push(t.ln());
                events.push(1);
            }
        }
        CensoredSample::new(times, events, TimeScale::Log)
    }
}

/// `100 * S_hat(t_s)` at the true quantile times `t_s` for each level, where
/// `S_hat` is the Kaplan-Meier curve of `m` conditional draws at `x`.
pub fn calibration_metric(
    sampler: &dyn ConditionalSampler,
    spec: &SimModelSpec,
    x: &[f64],
    levels: &[f64],
    m: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    let sample = sampler.sample(x, m, seed)?.to_raw();
    let km = kaplan_meier(&sample)?;
    levels
        .iter()
        .map(|&s| Ok(100.0 * survival_at(&km, spec.true_quantile(x, s)?)))
        .collect()
}
