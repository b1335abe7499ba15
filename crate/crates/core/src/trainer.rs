//! Alternating Wasserstein training of the conditional generator.
//!
//! The critic maximizes
//! `mean[D(x, G1(eta, x), G2(eta, x)) - D(x, y, delta) - lambda (||grad_(x,y) D(x, y, delta)||_2 - 1)^2]`
//! and the generator minimizes `mean D(x, G1(eta, x), G2(eta, x))`, with
//! `critic_steps` critic updates per generator update.

use std::fmt::Write as _;
use std::time::{Duration, Instant};

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Deserialize;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::estimators::{CensoredSample, TimeScale};
use crate::networks::{
    parse_floats, threshold_indicator, ArchitecturePreset, Discriminator, GeneratorPair, Lines,
    NetworkCheckpoint,
};
use crate::pipeline::Dataset;
use crate::tensor::{AdamConfig, OptimizerState, ParamGrads};

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lambda_gp: f64,
    pub critic_steps: usize,
    pub batch_size: usize,
    pub generator_steps: usize,
    pub generator_lr: f64,
    pub generator_beta1: f64,
    pub generator_beta2: f64,
    pub critic_lr: f64,
    pub critic_beta1: f64,
    pub critic_beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
    pub preset: String,
    /// Clamp the time head to `[-(1 + ln n), 1 + ln n]`.
    pub clamp_output: bool,
    /// Evaluate the penalty at random real/fake interpolates instead of at the data.
    pub interpolate_penalty: bool,
    /// Include the indicator coordinate in the penalized gradient norm.
    pub penalize_indicator: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lambda_gp: 10.0,
            critic_steps: 5,
            batch_size: 256,
            generator_steps: 20_000,
            generator_lr: 1e-4,
            generator_beta1: 0.5,
            generator_beta2: 0.9,
            critic_lr: 1e-4,
            critic_beta1: 0.5,
            critic_beta2: 0.9,
            adam_eps: 1e-8,
            seed: 0,
            preset: "m1-independent".into(),
            clamp_output: false,
            interpolate_penalty: false,
            penalize_indicator: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_gp >= 0.0) {
            return Err(Error::InvalidParameter("lambda_gp must be >= 0".into()));
        }
        if self.batch_size < 2 {
            return Err(Error::InvalidParameter("batch_size must be >= 2".into()));
        }
        if self.critic_steps < 1 {
            return Err(Error::InvalidParameter("critic_steps must be >= 1".into()));
        }
        self.generator_adam().validate()?;
        self.critic_adam().validate()?;
        ArchitecturePreset::by_name(&self.preset)?;
        Ok(())
    }

    pub fn generator_adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.generator_lr,
            beta1: self.generator_beta1,
            beta2: self.generator_beta2,
            eps: self.adam_eps,
        }
    }

    pub fn critic_adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.critic_lr,
            beta1: self.critic_beta1,
            beta2: self.critic_beta2,
            eps: self.adam_eps,
        }
    }

    /// `key = value` listing of every field.
    pub fn to_config_string(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "lambda_gp = {:?}", self.lambda_gp);
        let _ = writeln!(s, "critic_steps = {}", self.critic_steps);
        let _ = writeln!(s, "batch_size = {}", self.batch_size);
        let _ = writeln!(s, "generator_steps = {}", self.generator_steps);
        let _ = writeln!(s, "generator_lr = {:?}", self.generator_lr);
        let _ = writeln!(s, "generator_beta1 = {:?}", self.generator_beta1);
        let _ = writeln!(s, "generator_beta2 = {:?}", self.generator_beta2);
        let _ = writeln!(s, "critic_lr = {:?}", self.critic_lr);
        let _ = writeln!(s, "critic_beta1 = {:?}", self.critic_beta1);
        let _ = writeln!(s, "critic_beta2 = {:?}", self.critic_beta2);
        let _ = writeln!(s, "adam_eps = {:?}", self.adam_eps);
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "preset = \"{}\"", self.preset);
        let _ = writeln!(s, "clamp_output = {}", self.clamp_output);
        let _ = writeln!(s, "interpolate_penalty = {}", self.interpolate_penalty);
        let _ = writeln!(s, "penalize_indicator = {}", self.penalize_indicator);
        s
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainReport {
    /// One entry per critic update (objective being maximized).
    pub critic_objective: Vec<f64>,
    /// Mean penalty `(||grad|| - 1)^2` per critic update.
    pub penalty: Vec<f64>,
    /// One entry per generator update.
    pub generator_objective: Vec<f64>,
    pub wall_clock: Duration,
    pub checksum: String,
}

/// Hex SHA-256 of the parameter bits of both networks.
pub fn parameter_checksum(gen: &GeneratorPair, disc: &Discriminator) -> String {
    let mut h = Sha256::new();
    for v in gen.net.to_flat().iter().chain(&disc.net.to_flat()) {
        h.update(v.to_bits().to_le_bytes());
    }
    hex::encode(h.finalize())
}

fn non_finite(step: usize, what: &str) -> Error {
    Error::NonFinite {
        step,
        what: what.to_string(),
    }
}

/// Real minibatch with matching noise.
pub struct Batch {
    pub x: Array2<f64>,
    pub y: Array1<f64>,
    pub delta: Array1<f64>,
    pub noise: Array2<f64>,
}

/// One ascent step of the critic. Returns the objective evaluated before the update.
pub fn critic_step(
    disc: &mut Discriminator,
    opt: &mut OptimizerState,
    gen: &GeneratorPair,
    batch: &Batch,
    lambda_gp: f64,
    mask: &[bool],
    interpolate: Option<&Array1<f64>>,
) -> Result<CriticStepOutcome> {
    let b = batch.x.nrows();
    if batch.noise.nrows() != b || batch.y.len() != b || batch.delta.len() != b {
        return Err(Error::Shape("batch and noise lengths differ".into()));
    }
    let inv_b = 1.0 / b as f64;

    let (_, fake_y, fake_score) = gen.forward_batch(batch.noise.view(), batch.x.view())?;
    let fake_input = Discriminator::assemble_input(batch.x.view(), &fake_y, &fake_score)?;
    let real_input = Discriminator::assemble_input(batch.x.view(), &batch.y, &batch.delta)?;

    // Minimize mean[D(real) - D(fake) + lambda P].
    let fake_tape = disc.net.forward_batch(fake_input.view())?;
    let fake_mean = fake_tape.output().sum() * inv_b;
    let upstream = Array2::from_elem((b, 1), -inv_b);
    let mut grads = disc.net.backward(&fake_tape, upstream.view())?.param_grads;

    let real_tape = disc.net.forward_batch(real_input.view())?;
    let (real_mean, penalty_mean) = match interpolate {
        None => {
            let eval = disc
                .net
                .penalty_backward(&real_tape, mask, inv_b, lambda_gp * inv_b)?;
            grads.add_assign(&eval.grads);
            (eval.values.sum() * inv_b, eval.penalties.sum() * inv_b)
        }
        Some(eps) => {
            let upstream = Array2::from_elem((b, 1), inv_b);
            let real_grad = disc.net.backward(&real_tape, upstream.view())?;
            grads.add_assign(&real_grad.param_grads);
            let mut mixed = real_input.clone();
            for (i, mut row) in mixed.axis_iter_mut(Axis(0)).enumerate() {
                let e = eps[i];
                row.zip_mut_with(&fake_input.row(i), |r, &f| *r = e * *r + (1.0 - e) * f);
            }
            let mixed_tape = disc.net.forward_batch(mixed.view())?;
            let eval = disc
                .net
                .penalty_backward(&mixed_tape, mask, 0.0, lambda_gp * inv_b)?;
            grads.add_assign(&eval.grads);
            (real_grad.value, eval.penalties.sum() * inv_b)
        }
    };
    let objective = fake_mean - real_mean - lambda_gp * penalty_mean;
    if !objective.is_finite() || !grads.is_finite() {
        return Err(non_finite(opt.step_count as usize, "critic objective"));
    }
    opt.step(&mut disc.net, &grads)?;
    Ok(CriticStepOutcome {
        objective,
        penalty: penalty_mean,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CriticStepOutcome {
    pub objective: f64,
    pub penalty: f64,
}

/// Generator gradient of `mean D(x, G1, G2)` and the objective value.
pub fn generator_gradient(
    disc: &Discriminator,
    gen: &GeneratorPair,
    x: ArrayView2<f64>,
    noise: ArrayView2<f64>,
) -> Result<(ParamGrads, f64)> {
    let b = x.nrows();
    let d = disc.covariate_dim;
    let inv_b = 1.0 / b as f64;
    let (gen_tape, time, score) = gen.forward_batch(noise, x)?;
    let input = Discriminator::assemble_input(x, &time, &score)?;
    let disc_tape = disc.net.forward_batch(input.view())?;
    let upstream = Array2::from_elem((b, 1), inv_b);
    let critic_grad = disc.net.backward(&disc_tape, upstream.view())?;
    let mut gen_upstream = Array2::zeros((b, 2));
    let raw_time = gen_tape.output().column(0);
    for i in 0..b {
        gen_upstream[[i, 0]] = critic_grad.input_grad[[i, d]] * gen.time_clamp_derivative(raw_time[i]);
        gen_upstream[[i, 1]] = critic_grad.input_grad[[i, d + 1]];
    }
    let grads = gen.net.backward(&gen_tape, gen_upstream.view())?.param_grads;
    Ok((grads, critic_grad.value))
}

/// One descent step of the generator. Returns the objective before the update.
pub fn generator_step(
    disc: &Discriminator,
    gen: &mut GeneratorPair,
    opt: &mut OptimizerState,
    x: ArrayView2<f64>,
    noise: ArrayView2<f64>,
) -> Result<f64> {
    if x.nrows() != noise.nrows() {
        return Err(Error::Shape("batch and noise lengths differ".into()));
    }
    let (grads, objective) = generator_gradient(disc, gen, x, noise)?;
    if !objective.is_finite() || !grads.is_finite() {
        return Err(non_finite(opt.step_count as usize, "generator objective"));
    }
    opt.step(&mut gen.net, &grads)?;
    Ok(objective)
}

const STREAM_INIT: u64 = 1;
const STREAM_NOISE: u64 = 2;
const STREAM_SHUFFLE_BASE: u64 = 1 << 32;

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Full training state; everything needed to continue a run bit-exactly.
#[derive(Clone, Debug)]
pub struct Trainer {
    pub config: TrainConfig,
    pub generator: GeneratorPair,
    pub discriminator: Discriminator,
    pub generator_opt: OptimizerState,
    pub critic_opt: OptimizerState,
    pub generator_steps_done: usize,
    noise_rng: ChaCha8Rng,
    epoch: u64,
    cursor: usize,
    order: Vec<usize>,
    pub report: TrainReport,
}

impl Trainer {
    pub fn new(dataset: &Dataset, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        check_dataset(dataset)?;
        let preset = ArchitecturePreset::by_name(&config.preset)?;
        preset.check_covariate_dim(dataset.d())?;
        let mut init = stream_rng(config.seed, STREAM_INIT);
        let mut generator =
            GeneratorPair::init(preset.noise_dim, dataset.d(), preset.gen_hidden, &mut init)?;
        if config.clamp_output {
            generator.time_clamp = Some(1.0 + (dataset.n() as f64).ln());
        }
        let discriminator = Discriminator::init(dataset.d(), preset.disc_hidden, &mut init)?;
        let generator_opt = OptimizerState::new(&generator.net, config.generator_adam())?;
        let critic_opt = OptimizerState::new(&discriminator.net, config.critic_adam())?;
        let mut trainer = Trainer {
            noise_rng: stream_rng(config.seed, STREAM_NOISE),
            config,
            generator,
            discriminator,
            generator_opt,
            critic_opt,
            generator_steps_done: 0,
            epoch: 0,
            cursor: 0,
            order: Vec::new(),
            report: TrainReport::default(),
        };
        trainer.reshuffle(dataset.n());
        Ok(trainer)
    }

    fn reshuffle(&mut self, n: usize) {
        self.order = (0..n).collect();
        let mut rng = stream_rng(self.config.seed, STREAM_SHUFFLE_BASE + self.epoch);
        self.order.shuffle(&mut rng);
        self.cursor = 0;
    }

    /// Next minibatch of row indices; a new epoch starts when fewer than
    /// `batch_size` rows remain.
    fn next_rows(&mut self, n: usize) -> Vec<usize> {
        let b = self.config.batch_size.min(n);
        if self.cursor + b > n {
            self.epoch += 1;
            self.reshuffle(n);
        }
        let rows = self.order[self.cursor..self.cursor + b].to_vec();
        self.cursor += b;
        rows
    }

    fn draw_noise(&mut self, rows: usize) -> Array2<f64> {
        let q = self.generator.noise_dim;
        let rng = &mut self.noise_rng;
        Array2::from_shape_simple_fn((rows, q), || rng.sample(StandardNormal))
    }

    fn next_batch(&mut self, data: &Dataset) -> Batch {
        let rows = self.next_rows(data.n());
        let noise = self.draw_noise(rows.len());
        Batch {
            x: data.x.select(Axis(0), &rows),
            y: rows.iter().map(|&i| data.y[i]).collect(),
            delta: rows.iter().map(|&i| f64::from(data.delta[i])).collect(),
            noise,
        }
    }

    /// Runs one generator update preceded by `critic_steps` critic updates.
    pub fn round(&mut self, data: &Dataset) -> Result<()> {
        let step = self.generator_steps_done;
        let mut mask = self.discriminator.penalty_mask();
        if self.config.penalize_indicator {
            mask.iter_mut().for_each(|m| *m = true);
        }
        for _ in 0..self.config.critic_steps {
            let batch = self.next_batch(data);
            let eps = self.config.interpolate_penalty.then(|| {
                let rng = &mut self.noise_rng;
                Array1::from_shape_simple_fn(batch.x.nrows(), || rng.gen::<f64>())
            });
            let out = critic_step(
                &mut self.discriminator,
                &mut self.critic_opt,
                &self.generator,
                &batch,
                self.config.lambda_gp,
                &mask,
                eps.as_ref(),
            )
            .map_err(|e| at_step(e, step))?;
            self.report.critic_objective.push(out.objective);
            self.report.penalty.push(out.penalty);
        }
        let rows = self.next_rows(data.n());
        let x = data.x.select(Axis(0), &rows);
        let noise = self.draw_noise(rows.len());
        let objective = generator_step(
            &self.discriminator,
            &mut self.generator,
            &mut self.generator_opt,
            x.view(),
            noise.view(),
        )
        .map_err(|e| at_step(e, step))?;
        self.report.generator_objective.push(objective);
        self.generator_steps_done += 1;
        Ok(())
    }

    /// Trains until `config.generator_steps` generator updates have been made.
    pub fn run(&mut self, data: &Dataset) -> Result<()> {
        check_dataset(data)?;
        if data.d() != self.discriminator.covariate_dim {
            return Err(Error::Shape("dataset does not match the trainer's networks".into()));
        }
        let start = Instant::now();
        let result = (|| {
            while self.generator_steps_done < self.config.generator_steps {
                self.round(data)?;
            }
            Ok(())
        })();
        self.report.wall_clock += start.elapsed();
        self.report.checksum = parameter_checksum(&self.generator, &self.discriminator);
        result
    }

    pub fn networks(&self) -> NetworkCheckpoint {
        NetworkCheckpoint {
            preset: self.config.preset.clone(),
            generator: self.generator.clone(),
            discriminator: self.discriminator.clone(),
        }
    }

    /// Checkpoint text: the network checkpoint followed by the optimizer and
    /// sampling state.
    pub fn checkpoint_text(&self) -> String {
        let mut out = self.networks().to_text();
        let _ = writeln!(out, "trainer");
        let _ = writeln!(out, "generator_steps_done {}", self.generator_steps_done);
        let _ = writeln!(out, "epoch {}", self.epoch);
        let _ = writeln!(out, "cursor {}", self.cursor);
        let _ = writeln!(out, "noise_word_pos {}", self.noise_rng.get_word_pos());
        write_optimizer(&mut out, "generator_opt", &self.generator_opt);
        write_optimizer(&mut out, "critic_opt", &self.critic_opt);
        out.push_str("end\n");
        out
    }

    /// Restores a trainer from [`Trainer::checkpoint_text`] output. The
    /// config must match the one the checkpoint was trained with, except for
    /// `generator_steps`.
    pub fn resume(dataset: &Dataset, config: TrainConfig, text: &str) -> Result<Self> {
        let mut trainer = Trainer::new(dataset, config)?;
        let mut lines = Lines::new(text);
        let preset = NetworkCheckpoint::read_header(&mut lines)?;
        if !preset.eq_ignore_ascii_case(&trainer.config.preset) {
            return Err(Error::InvalidParameter(format!(
                "checkpoint preset '{preset}' differs from config preset '{}'",
                trainer.config.preset
            )));
        }
        let nets = NetworkCheckpoint::read_nets(preset, &mut lines)?;
        if nets.generator.net.widths() != trainer.generator.net.widths()
            || nets.discriminator.net.widths() != trainer.discriminator.net.widths()
        {
            return Err(Error::Shape("checkpoint networks do not match the preset".into()));
        }
        trainer.generator = nets.generator;
        trainer.discriminator = nets.discriminator;
        lines.expect("trainer")?;
        trainer.generator_steps_done = lines.expect_parse("generator_steps_done")?;
        trainer.epoch = lines.expect_parse("epoch")?;
        let cursor: usize = lines.expect_parse("cursor")?;
        let word_pos: u128 = lines.expect_parse("noise_word_pos")?;
        trainer.reshuffle(dataset.n());
        trainer.cursor = cursor;
        trainer.noise_rng.set_word_pos(word_pos);
        read_optimizer(&mut lines, "generator_opt", &mut trainer.generator_opt)?;
        read_optimizer(&mut lines, "critic_opt", &mut trainer.critic_opt)?;
        lines.expect("end")?;
        Ok(trainer)
    }
}

fn at_step(e: Error, step: usize) -> Error {
    match e {
        Error::NonFinite { what, .. } => Error::NonFinite { step, what },
        other => other,
    }
}

fn write_optimizer(out: &mut String, name: &str, opt: &OptimizerState) {
    let _ = writeln!(out, "{name} {}", opt.step_count);
    for (tag, moments) in [("m", &opt.first_moment), ("v", &opt.second_moment)] {
        let flat = moments.to_flat();
        out.push_str(tag);
        for v in flat {
            let _ = write!(out, " {v}");
        }
        out.push('\n');
    }
}

fn read_optimizer(lines: &mut Lines<'_>, name: &str, opt: &mut OptimizerState) -> Result<()> {
    opt.step_count = lines.expect_parse(name)?;
    let n = opt.first_moment.to_flat().len();
    let m = parse_floats(lines.expect("m")?, n)?;
    let v = parse_floats(lines.expect("v")?, n)?;
    set_flat_grads(&mut opt.first_moment, &m);
    set_flat_grads(&mut opt.second_moment, &v);
    Ok(())
}

fn set_flat_grads(g: &mut ParamGrads, flat: &[f64]) {
    let mut it = flat.iter().copied();
    for l in &mut g.layers {
        l.weight.iter_mut().for_each(|w| *w = it.next().unwrap());
        l.bias.iter_mut().for_each(|b| *b = it.next().unwrap());
    }
}

fn check_dataset(data: &Dataset) -> Result<()> {
    if data.is_empty() {
        return Err(Error::Data("training dataset is empty".into()));
    }
    if data.time_scale != TimeScale::Log {
        return Err(Error::Data("training expects log-scale times".into()));
    }
    data.validate()
}

/// Trains a generator/critic pair from scratch.
pub fn train(
    dataset: &Dataset,
    config: &TrainConfig,
) -> Result<(GeneratorPair, Discriminator, TrainReport)> {
    let mut trainer = Trainer::new(dataset, config.clone())?;
    trainer.run(dataset)?;
    Ok((trainer.generator, trainer.discriminator, trainer.report))
}

/// Anything that can draw `(log time, indicator)` samples conditional on covariates.
pub trait ConditionalSampler {
    fn sample(&self, x: &[f64], m: usize, seed: u64) -> Result<CensoredSample>;
}

const SAMPLE_CHUNK: usize = 4096;

/// `m` draws `(G1(eta_j, x), 1{G2(eta_j, x) >= 0.5})` with `eta_j ~ N(0, I)`
/// taken in order from a stream seeded by `seed`.
pub fn sample_conditional(
    gen: &GeneratorPair,
    x: &[f64],
    m: usize,
    seed: u64,
) -> Result<CensoredSample> {
    if m == 0 {
        return Err(Error::InvalidParameter("sample size m must be >= 1".into()));
    }
    if x.len() != gen.covariate_dim {
        return Err(Error::Shape(format!(
            "generator expects {} covariates, got {}",
            gen.covariate_dim,
            x.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let q = gen.noise_dim;
    let mut times = Vec::with_capacity(m);
    let mut events = Vec::with_capacity(m);
    let xrow = ArrayView2::from_shape((1, x.len()), x).map_err(|e| Error::Shape(e.to_string()))?;
    let mut done = 0;
    while done < m {
        let k = SAMPLE_CHUNK.min(m - done);
        let noise = Array2::from_shape_simple_fn((k, q), || rng.sample::<f64, _>(StandardNormal));
        let covs = xrow.broadcast((k, x.len())).expect("row broadcast").to_owned();
        let (_, time, score) = gen.forward_batch(noise.view(), covs.view())?;
        times.extend(time.iter().copied());
        events.extend(score.iter().map(|&s| threshold_indicator(s)));
        done += k;
    }
    CensoredSample::new(times, events, TimeScale::Log)
}

impl ConditionalSampler for GeneratorPair {
    fn sample(&self, x: &[f64], m: usize, seed: u64) -> Result<CensoredSample> {
        sample_conditional(self, x, m, seed)
    }
}
