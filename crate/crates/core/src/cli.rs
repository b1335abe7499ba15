//! Subcommand implementations behind the `gcse` binary.
//!
//! Each command reads its inputs, writes its outputs under the output
//! directory, and returns a short human-readable summary.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::coxph::fit_coxph;
use crate::error::{Error, Result};
use crate::estimators::{
    censoring_classification, kaplan_meier, nelson_aalen, prediction_interval, CensoringStatus,
};
use crate::networks::NetworkCheckpoint;
use crate::pipeline::{
    calibration_csv, dataset_csv, load_csv, parse_dataset_csv, split,
    write_atomic, write_results, CalibrationRow, Dataset, IntervalRow, Results, RunConfig,
    Schema,
};
use crate::simulation::{
    calibration_metric, child_seed, simulate, Censoring, Model, OracleSampler, SimModelSpec,
    Truncation,
};
use crate::trainer::{ConditionalSampler, Trainer};

pub const OUTPUT_DIR_ENV: &str = "GCSE_OUTPUT_DIR";
pub const CHECKPOINT_FILE: &str = "checkpoint.txt";
pub const MANIFEST_FILE: &str = "manifest.txt";

#[derive(Debug, Parser)]
#[command(name = "gcse", version, about = "Generative conditional survival estimation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate one of the M1-M4 benchmark datasets.
    Simulate(SimulateArgs),
    /// Train the generator/critic pair.
    #[command(after_help = train_help())]
    Train(TrainArgs),
    /// Conditional Kaplan-Meier and Nelson-Aalen curves at one covariate point.
    Estimate(EstimateArgs),
    /// Calibration table at the benchmark covariate points.
    Evaluate(EvaluateArgs),
    /// Censoring classification and prediction intervals for a test set.
    #[command(visible_alias = "predict-intervals")]
    Intervals(IntervalsArgs),
    /// Cox proportional-hazards baseline.
    Coxph(CoxphArgs),
}

fn train_help() -> String {
    format!(
        "Config file keys and defaults:\n\n{}",
        RunConfig::defaults_listing()
    )
}

#[derive(Debug, Clone, Args)]
pub struct OutputArgs {
    /// Output directory (overrides the config file).
    #[arg(long, env = OUTPUT_DIR_ENV)]
    pub out_dir: Option<PathBuf>,
}

impl OutputArgs {
    fn resolve(&self, config: Option<&Path>) -> PathBuf {
        self.out_dir
            .clone()
            .or_else(|| config.map(Path::to_path_buf))
            .unwrap_or_else(|| RunConfig::default().output_dir)
    }
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    /// M1, M2, M3 or M4.
    #[arg(long)]
    pub model: Model,
    /// independent or dependent.
    #[arg(long, default_value = "independent")]
    pub censoring: Censoring,
    /// Handling of dependent censoring times above 10: condition or cap.
    #[arg(long, default_value = "condition")]
    pub truncation: Truncation,
    #[arg(long, default_value_t = 10_000)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output file; defaults to `<out-dir>/<model>-<censoring>-n<n>-s<seed>.csv`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    /// Run config file (TOML); every key is optional.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Training data (overrides `data.path`).
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Total generator steps (overrides `train.generator_steps`).
    #[arg(long)]
    pub steps: Option<usize>,
    /// Seed (overrides `train.seed`).
    #[arg(long)]
    pub seed: Option<u64>,
    /// Architecture preset (overrides `train.preset`).
    #[arg(long)]
    pub preset: Option<String>,
    /// Continue from a checkpoint written by an earlier run.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Clone, Args)]
pub struct EstimateArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Comma-separated covariates on the training scale.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub x: Vec<f64>,
    #[arg(long, default_value_t = 100_000)]
    pub m: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 0.9)]
    pub coverage: f64,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Clone, Args)]
pub struct EvaluateArgs {
    /// Trained checkpoint(s); several checkpoints are treated as replicates.
    #[arg(long)]
    pub checkpoint: Vec<PathBuf>,
    /// Sample from the true conditional law instead of a network.
    #[arg(long)]
    pub oracle: bool,
    #[arg(long)]
    pub model: Model,
    #[arg(long, default_value = "independent")]
    pub censoring: Censoring,
    /// Common covariate values of the evaluation points.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, default_value = "-0.5,0.5,1.0")]
    pub x_list: Vec<f64>,
    /// Survival levels in percent.
    #[arg(long, value_delimiter = ',', default_value = "25,50,75")]
    pub levels: Vec<f64>,
    #[arg(long, default_value_t = 100_000)]
    pub m: usize,
    /// Sampling replicates per checkpoint.
    #[arg(long, default_value_t = 1)]
    pub replicates: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Also report the Cox baseline fitted to this native dataset CSV.
    #[arg(long)]
    pub cox_data: Option<PathBuf>,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Clone, Args)]
pub struct IntervalsArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Native test CSV on the training scale.
    #[arg(long)]
    pub test: PathBuf,
    #[arg(long, default_value_t = 0.9)]
    pub coverage: f64,
    #[arg(long, default_value_t = 100_000)]
    pub m: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Clone, Args)]
pub struct CoxphArgs {
    /// Training CSV: native format, or raw with `--schema`.
    #[arg(long)]
    pub train: PathBuf,
    #[arg(long)]
    pub schema: Option<PathBuf>,
    /// Test CSV in the same format as the training file.
    #[arg(long)]
    pub test: Option<PathBuf>,
    #[arg(long, default_value_t = 0.9)]
    pub coverage: f64,
    #[command(flatten)]
    pub output: OutputArgs,
}

/// 2 usage, 3 data, 4 numerical.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::InvalidParameter(_) => 2,
        e if e.is_numerical() => 4,
        _ => 3,
    }
}

pub fn run(cli: Cli) -> Result<String> {
    match cli.command {
        Command::Simulate(a) => cmd_simulate(&a),
        Command::Train(a) => cmd_train(&a),
        Command::Estimate(a) => cmd_estimate(&a),
        Command::Evaluate(a) => cmd_evaluate(&a),
        Command::Intervals(a) => cmd_intervals(&a),
        Command::Coxph(a) => cmd_coxph(&a),
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub fn read_dataset(path: &Path) -> Result<Dataset> {
    parse_dataset_csv(&read_text(path)?)
}

pub fn read_checkpoint(path: &Path) -> Result<NetworkCheckpoint> {
    NetworkCheckpoint::from_text(&read_text(path)?)
}

pub fn cmd_simulate(a: &SimulateArgs) -> Result<String> {
    let mut spec = SimModelSpec::new(a.model, a.censoring);
    spec.truncation = a.truncation;
    let data = simulate(&spec, a.n, a.seed)?.data;
    let path = match &a.out {
        Some(p) => p.clone(),
        None => {
            let dir = a.output.resolve(None);
            create_dir(&dir)?;
            dir.join(format!("{}-n{}-s{}.csv", spec.preset_name(), a.n, a.seed))
        }
    };
    write_atomic(&path, &dataset_csv(&data)?)?;
    Ok(format!(
        "wrote {} rows to {} (censored fraction {:.4})",
        data.n(),
        path.display(),
        data.censored_fraction()
    ))
}

/// Loads the training part described by `cfg.data` and, when a test
/// fraction is configured, the held-out part.
pub fn load_training_data(cfg: &RunConfig) -> Result<(Dataset, Option<Dataset>)> {
    let path = cfg
        .data
        .path
        .as_ref()
        .ok_or_else(|| Error::InvalidParameter("no training data path given".into()))?;
    let mut data = match &cfg.data.schema {
        Some(schema) => load_csv(path, &Schema::load(schema)?)?.dataset,
        None => read_dataset(path)?,
    };
    if let Some(f) = cfg.data.test_fraction {
        let (train, test) = split(&data, f, cfg.data.split_seed)?;
        return Ok((train, Some(test)));
    }
    if cfg.data.standardize || cfg.data.schema.is_some() {
        data = data.standardize()?;
    }
    Ok((data, None))
}

pub fn resolve_train_config(a: &TrainArgs) -> Result<RunConfig> {
    let mut cfg = match &a.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(d) = &a.data {
        cfg.data.path = Some(d.clone());
    }
    if let Some(s) = a.steps {
        cfg.train.generator_steps = s;
    }
    if let Some(s) = a.seed {
        cfg.train.seed = s;
    }
    if let Some(p) = &a.preset {
        cfg.train.preset = p.clone();
    }
    cfg.output_dir = a.output.resolve(Some(&cfg.output_dir));
    cfg.validate()?;
    Ok(cfg)
}

pub fn cmd_train(a: &TrainArgs) -> Result<String> {
    let cfg = resolve_train_config(a)?;
    let (train, test) = load_training_data(&cfg)?;
    let mut trainer = match &a.resume {
        Some(p) => Trainer::resume(&train, cfg.train.clone(), &read_text(p)?)?,
        None => Trainer::new(&train, cfg.train.clone())?,
    };
    let result = trainer.run(&train);
    let dir = &cfg.output_dir;
    create_dir(dir)?;
    write_atomic(&dir.join(CHECKPOINT_FILE), &trainer.checkpoint_text())?;
    if let Some(test) = &test {
        write_atomic(&dir.join("train.csv"), &dataset_csv(&train)?)?;
        write_atomic(&dir.join("test.csv"), &dataset_csv(test)?)?;
    }
    let report = &trainer.report;
    let mut manifest = String::new();
    let _ = writeln!(manifest, "dataset_digest = \"{}\"", train.digest());
    let _ = writeln!(manifest, "rows = {}", train.n());
    let _ = writeln!(manifest, "generator_steps_done = {}", trainer.generator_steps_done);
    let last = |v: &[f64]| v.last().map_or("nan".to_string(), |x| format!("{x:?}"));
    let _ = writeln!(manifest, "final_critic_objective = {}", last(&report.critic_objective));
    let _ = writeln!(manifest, "final_penalty = {}", last(&report.penalty));
    let _ = writeln!(manifest, "final_generator_objective = {}", last(&report.generator_objective));
    let _ = writeln!(manifest, "checksum = \"{}\"", report.checksum);
    let _ = writeln!(manifest, "\n[train]\n{}", cfg.train.to_config_string());
    write_atomic(&dir.join(MANIFEST_FILE), &manifest)?;
    result?;
    Ok(format!(
        "trained {} generator steps in {:.1}s; checkpoint {} (checksum {})",
        trainer.generator_steps_done,
        report.wall_clock.as_secs_f64(),
        dir.join(CHECKPOINT_FILE).display(),
        report.checksum
    ))
}

pub fn cmd_estimate(a: &EstimateArgs) -> Result<String> {
    let ckpt = read_checkpoint(&a.checkpoint)?;
    let sample = ckpt.generator.sample(&a.x, a.m, a.seed)?;
    let km = kaplan_meier(&sample)?;
    let na = nelson_aalen(&sample)?;
    let class = censoring_classification(&sample)?;
    let pi = prediction_interval(&km, a.coverage)?;
    let dir = a.output.resolve(None);
    write_results(
        &Results {
            curves: vec![("km".into(), km), ("na".into(), na)],
            ..Results::default()
        },
        &dir,
    )?;
    Ok(format!(
        "censored fraction {:.4} ({:?}); {:.0}% interval on log scale [{}, {}]{}; curves in {}",
        class.censored_fraction,
        class.status,
        100.0 * a.coverage,
        pi.lo,
        pi.hi,
        if pi.hi_saturated { " (upper bound saturated)" } else { "" },
        dir.display()
    ))
}

fn cox_sampler_rows(
    path: &Path,
    spec: &SimModelSpec,
    scenario: &str,
    xs: &[f64],
    levels: &[f64],
) -> Result<Vec<CalibrationRow>> {
    let fit = fit_coxph(&read_dataset(path)?)?;
    let mut rows = Vec::new();
    for &xv in xs {
        let x = vec![xv; fit.beta.len()];
        for &level in levels {
            let t = spec.true_quantile(&x, level / 100.0)?.ln();
            let s = crate::coxph::cox_survival(&fit, &x, t)?;
            rows.push(CalibrationRow::from_replicates(scenario, "PH", xv, level, &[100.0 * s]));
        }
    }
    Ok(rows)
}

pub fn cmd_evaluate(a: &EvaluateArgs) -> Result<String> {
    if a.oracle == !a.checkpoint.is_empty() {
        return Err(Error::InvalidParameter(
            "give either --oracle or at least one --checkpoint".into(),
        ));
    }
    if a.replicates == 0 {
        return Err(Error::InvalidParameter("replicates must be >= 1".into()));
    }
    let spec = SimModelSpec::new(a.model, a.censoring);
    let samplers: Vec<Box<dyn ConditionalSampler>> = if a.oracle {
        vec![Box::new(OracleSampler {
            spec,
            censored: true,
        })]
    } else {
        a.checkpoint
            .iter()
            .map(|p| Ok(Box::new(read_checkpoint(p)?.generator) as Box<dyn ConditionalSampler>))
            .collect::<Result<_>>()?
    };
    let fractions: Vec<f64> = a.levels.iter().map(|l| l / 100.0).collect();
    let scenario = spec.preset_name();
    let method = if a.oracle { "oracle" } else { "GCSE" };
    let mut rows = Vec::new();
    for &xv in &a.x_list {
        let x = [xv; crate::simulation::COVARIATE_DIM];
        let mut per_level = vec![Vec::new(); fractions.len()];
        let mut index = 0u64;
        for sampler in &samplers {
            for _ in 0..a.replicates {
                let seed = child_seed(a.seed, index);
                index += 1;
                let vals = calibration_metric(sampler.as_ref(), &spec, &x, &fractions, a.m, seed)?;
                for (k, v) in vals.into_iter().enumerate() {
                    per_level[k].push(v);
                }
            }
        }
        for (k, vals) in per_level.iter().enumerate() {
            rows.push(CalibrationRow::from_replicates(&scenario, method, xv, a.levels[k], vals));
        }
    }
    if let Some(path) = &a.cox_data {
        rows.extend(cox_sampler_rows(path, &spec, &scenario, &a.x_list, &a.levels)?);
    }
    let dir = a.output.resolve(None);
    write_results(
        &Results {
            calibration: Some(rows.clone()),
            ..Results::default()
        },
        &dir,
    )?;
    Ok(calibration_csv(&rows))
}

/// Interval rows for every test subject plus a coverage summary.
pub fn predict_intervals(
    sampler: &dyn ConditionalSampler,
    test: &Dataset,
    coverage: f64,
    m: usize,
    seed: u64,
) -> Result<(Vec<IntervalRow>, String)> {
    let mut rows = Vec::with_capacity(test.n());
    for i in 0..test.n() {
        let x: Vec<f64> = test.x.row(i).to_vec();
        let sample = sampler.sample(&x, m, child_seed(seed, i as u64))?;
        let class = censoring_classification(&sample)?;
        let km = kaplan_meier(&sample)?;
        rows.push(IntervalRow {
            id: (i + 1).to_string(),
            predicted_censored: class.status == CensoringStatus::Censored,
            interval: prediction_interval(&km, coverage)?,
            true_y: Some(test.y[i]),
            true_delta: Some(test.delta[i]),
        });
    }
    Ok(summarize(rows, coverage))
}

fn summarize(rows: Vec<IntervalRow>, coverage: f64) -> (Vec<IntervalRow>, String) {
    let predicted_censored = rows.iter().filter(|r| r.predicted_censored).count();
    let flags: Vec<bool> = rows.iter().filter_map(IntervalRow::covered).collect();
    let covered = flags.iter().filter(|&&c| c).count();
    let rate = if flags.is_empty() {
        "n/a".to_string()
    } else {
        format!("{:.4}", covered as f64 / flags.len() as f64)
    };
    let summary = format!(
        "subjects = {}\npredicted_censored = {predicted_censored}\nuncensored = {}\n\
         covered = {covered}\ncoverage_level = {coverage}\ncoverage_rate = {rate}\n",
        rows.len(),
        flags.len(),
    );
    (rows, summary)
}

pub fn cmd_intervals(a: &IntervalsArgs) -> Result<String> {
    let ckpt = read_checkpoint(&a.checkpoint)?;
    let test = read_dataset(&a.test)?;
    let (rows, summary) = predict_intervals(&ckpt.generator, &test, a.coverage, a.m, a.seed)?;
    let dir = a.output.resolve(None);
    write_results(
        &Results {
            intervals: Some(rows),
            ..Results::default()
        },
        &dir,
    )?;
    write_atomic(&dir.join("interval_summary.txt"), &summary)?;
    Ok(summary)
}

fn load_cox_data(path: &Path, schema: Option<&Schema>) -> Result<Dataset> {
    match schema {
        Some(s) => load_csv(path, s)?.dataset.standardize(),
        None => read_dataset(path),
    }
}

pub fn cmd_coxph(a: &CoxphArgs) -> Result<String> {
    let schema = a.schema.as_deref().map(Schema::load).transpose()?;
    let train = load_cox_data(&a.train, schema.as_ref())?;
    let fit = fit_coxph(&train)?;
    let dir = a.output.resolve(None);
    let mut results = Results {
        curves: vec![("baseline_cumhaz".into(), fit.baseline.clone())],
        ..Results::default()
    };
    let mut summary = fit.report();
    if let Some(test_path) = &a.test {
        let test = match (&schema, &train.transform) {
            (Some(sc), Some(record)) => load_csv(test_path, sc)?.dataset.apply_transform(record),
            _ => read_dataset(test_path)?,
        };
        let mut rows = Vec::with_capacity(test.n());
        for i in 0..test.n() {
            let curve = fit.survival_curve(&test.x.row(i).to_vec())?;
            rows.push(IntervalRow {
                id: (i + 1).to_string(),
                predicted_censored: false,
                interval: prediction_interval(&curve, a.coverage)?,
                true_y: Some(test.y[i]),
                true_delta: Some(test.delta[i]),
            });
        }
        let (rows, s) = summarize(rows, a.coverage);
        summary.push('\n');
        summary.push_str(&s);
        results.intervals = Some(rows);
    }
    write_results(&results, &dir)?;
    write_atomic(&dir.join("cox_fit.txt"), &summary)?;
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes() {
        assert_eq!(exit_code(&Error::InvalidParameter("x".into())), 2);
        assert_eq!(exit_code(&Error::Data("x".into())), 3);
        assert_eq!(exit_code(&Error::Cox("x".into())), 4);
        assert_eq!(
            exit_code(&Error::NonFinite {
                step: 3,
                what: "x".into()
            }),
            4
        );
    }

    #[test]
    fn train_help_lists_defaults() {
        let help = train_help();
        for key in ["lambda_gp = 10.0", "critic_steps = 5", "batch_size = 256", "coverage = 0.9"] {
            assert!(help.contains(key), "missing {key}");
        }
    }

    #[test]
    fn cli_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }

    #[test]
    fn all_censored_summary_reports_na() {
        let row = IntervalRow {
            id: "1".into(),
            predicted_censored: true,
            interval: crate::estimators::PredictionInterval {
                lo: 0.0,
                hi: 1.0,
                lo_saturated: false,
                hi_saturated: true,
            },
            true_y: Some(0.5),
            true_delta: Some(0),
        };
        let (_, s) = summarize(vec![row], 0.9);
        assert!(s.contains("coverage_rate = n/a"));
    }
}
