//! Conditional generator pair and critic, architecture presets, and the
//! text checkpoint format.

use std::fmt::Write as _;

use ndarray::{s, Array1, Array2, ArrayView2};
use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{MlpParams, OutputActivation, Tape};

pub const ELU_ALPHA: f64 = 0.3;

/// Hidden widths and noise dimension for one experimental setting.
#[derive(Clone, Debug, PartialEq)]
pub struct ArchitecturePreset {
    pub name: &'static str,
    pub disc_hidden: &'static [usize],
    pub gen_hidden: &'static [usize],
    pub noise_dim: usize,
    /// Required covariate dimension, when the preset is tied to a simulation model.
    pub covariate_dim: Option<usize>,
}

const PRESETS: &[ArchitecturePreset] = &[
    ArchitecturePreset {
        name: "m1-independent",
        disc_hidden: &[60, 30],
        gen_hidden: &[60, 30],
        noise_dim: 3,
        covariate_dim: Some(5),
    },
    ArchitecturePreset {
        name: "m2-independent",
        disc_hidden: &[60, 30],
        gen_hidden: &[60, 30],
        noise_dim: 7,
        covariate_dim: Some(5),
    },
    ArchitecturePreset {
        name: "m3-independent",
        disc_hidden: &[50, 25],
        gen_hidden: &[40, 20],
        noise_dim: 5,
        covariate_dim: Some(5),
    },
    ArchitecturePreset {
        name: "m4-independent",
        disc_hidden: &[50, 25],
        gen_hidden: &[40, 20],
        noise_dim: 7,
        covariate_dim: Some(5),
    },
    ArchitecturePreset {
        name: "m1-dependent",
        disc_hidden: &[50, 25],
        gen_hidden: &[50, 25],
        noise_dim: 3,
        covariate_dim: Some(5),
    },
    ArchitecturePreset {
        name: "m2-dependent",
        disc_hidden: &[60, 30],
        gen_hidden: &[60, 30],
        noise_dim: 7,
        covariate_dim: Some(5),
    },
    ArchitecturePreset {
        name: "m3-dependent",
        disc_hidden: &[50, 25],
        gen_hidden: &[40, 20],
        noise_dim: 5,
        covariate_dim: Some(5),
    },
    ArchitecturePreset {
        name: "m4-dependent",
        disc_hidden: &[50, 25],
        gen_hidden: &[40, 20],
        noise_dim: 7,
        covariate_dim: Some(5),
    },
    ArchitecturePreset {
        name: "pbc",
        disc_hidden: &[30, 15],
        gen_hidden: &[30, 15],
        noise_dim: 10,
        covariate_dim: None,
    },
    ArchitecturePreset {
        name: "support",
        disc_hidden: &[60, 30],
        gen_hidden: &[60, 30],
        noise_dim: 20,
        covariate_dim: None,
    },
];

impl ArchitecturePreset {
    pub fn all() -> &'static [ArchitecturePreset] {
        PRESETS
    }

    pub fn by_name(name: &str) -> Result<&'static ArchitecturePreset> {
        PRESETS
            .iter()
            .find(|p| p.name.eq_ignore_ascii_case(name))
            .ok_or_else(|| {
                let known: Vec<_> = PRESETS.iter().map(|p| p.name).collect();
                Error::InvalidParameter(format!(
                    "unknown preset '{name}' (known: {})",
                    known.join(", ")
                ))
            })
    }

    pub fn check_covariate_dim(&self, d: usize) -> Result<()> {
        match self.covariate_dim {
            Some(expected) if expected != d => Err(Error::Shape(format!(
                "preset {} expects {expected} covariates, dataset has {d}",
                self.name
            ))),
            _ => Ok(()),
        }
    }
}

/// Shared-trunk generator: output column 0 is the (log) time head, column 1
/// is the sigmoid censoring-score head. Input is `[noise, covariates]`.
#[derive(Clone, Debug, PartialEq)]
pub struct GeneratorPair {
    pub net: MlpParams,
    pub noise_dim: usize,
    pub covariate_dim: usize,
    /// Optional symmetric clamp `[-c, c]` on the time head.
    pub time_clamp: Option<f64>,
}

fn widths(input: usize, hidden: &[usize], output: usize) -> Vec<usize> {
    std::iter::once(input)
        .chain(hidden.iter().copied())
        .chain(std::iter::once(output))
        .collect()
}

impl GeneratorPair {
    pub fn zeros(noise_dim: usize, covariate_dim: usize, hidden: &[usize]) -> Result<Self> {
        let net = MlpParams::zeros(
            &widths(noise_dim + covariate_dim, hidden, 2),
            ELU_ALPHA,
            OutputActivation::LinearSigmoidHeads,
        )?;
        Ok(GeneratorPair {
            net,
            noise_dim,
            covariate_dim,
            time_clamp: None,
        })
    }

    pub fn init<R: Rng + ?Sized>(
        noise_dim: usize,
        covariate_dim: usize,
        hidden: &[usize],
        rng: &mut R,
    ) -> Result<Self> {
        let net = MlpParams::glorot(
            &widths(noise_dim + covariate_dim, hidden, 2),
            ELU_ALPHA,
            OutputActivation::LinearSigmoidHeads,
            rng,
        )?;
        Ok(GeneratorPair {
            net,
            noise_dim,
            covariate_dim,
            time_clamp: None,
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.net.validate()?;
        if self.net.output != OutputActivation::LinearSigmoidHeads {
            return Err(Error::Shape("generator must use two output heads".into()));
        }
        if self.net.input_dim() != self.noise_dim + self.covariate_dim {
            return Err(Error::Shape(format!(
                "generator input width {} != noise {} + covariates {}",
                self.net.input_dim(),
                self.noise_dim,
                self.covariate_dim
            )));
        }
        Ok(())
    }

    /// Stacks `[noise | covariates]` row-wise.
    pub fn assemble_input(
        &self,
        noise: ArrayView2<f64>,
        covariates: ArrayView2<f64>,
    ) -> Result<Array2<f64>> {
        if noise.ncols() != self.noise_dim
            || covariates.ncols() != self.covariate_dim
            || noise.nrows() != covariates.nrows()
        {
            return Err(Error::Shape(format!(
                "generator expects noise n x {} and covariates n x {}, got {:?} and {:?}",
                self.noise_dim,
                self.covariate_dim,
                noise.dim(),
                covariates.dim()
            )));
        }
        let mut input = Array2::zeros((noise.nrows(), self.noise_dim + self.covariate_dim));
        input.slice_mut(s![.., ..self.noise_dim]).assign(&noise);
        input.slice_mut(s![.., self.noise_dim..]).assign(&covariates);
        Ok(input)
    }

    /// Batched forward pass; returns the tape plus time and score columns
    /// (time after the optional clamp).
    pub fn forward_batch(
        &self,
        noise: ArrayView2<f64>,
        covariates: ArrayView2<f64>,
    ) -> Result<(Tape, Array1<f64>, Array1<f64>)> {
        let input = self.assemble_input(noise, covariates)?;
        let tape = self.net.forward_batch(input.view())?;
        let out = tape.output();
        let mut time = out.column(0).to_owned();
        if let Some(c) = self.time_clamp {
            time.mapv_inplace(|t| t.clamp(-c, c));
        }
        let score = out.column(1).to_owned();
        Ok((tape, time, score))
    }

    /// Derivative of the clamped time head w.r.t. the raw head output.
    pub fn time_clamp_derivative(&self, raw: f64) -> f64 {
        match self.time_clamp {
            Some(c) if raw.abs() > c => 0.0,
            _ => 1.0,
        }
    }
}

/// Evaluates the generator at a single `(eta, x)`: returns `(time, score)`.
pub fn generator_forward(gen: &GeneratorPair, noise: &[f64], x: &[f64]) -> Result<(f64, f64)> {
    let nv = ArrayView2::from_shape((1, noise.len()), noise).map_err(|e| Error::Shape(e.to_string()))?;
    let xv = ArrayView2::from_shape((1, x.len()), x).map_err(|e| Error::Shape(e.to_string()))?;
    let (_, time, score) = gen.forward_batch(nv, xv)?;
    Ok((time[0], score[0]))
}

/// Censoring indicator from a generator score: 1 (event) iff `score >= 0.5`.
pub fn threshold_indicator(score: f64) -> u8 {
    u8::from(score >= 0.5)
}

/// Scalar critic over `(x, y, delta)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Discriminator {
    pub net: MlpParams,
    pub covariate_dim: usize,
}

impl Discriminator {
    pub fn zeros(covariate_dim: usize, hidden: &[usize]) -> Result<Self> {
        let net = MlpParams::zeros(
            &widths(covariate_dim + 2, hidden, 1),
            ELU_ALPHA,
            OutputActivation::Linear,
        )?;
        Ok(Discriminator { net, covariate_dim })
    }

    pub fn init<R: Rng + ?Sized>(covariate_dim: usize, hidden: &[usize], rng: &mut R) -> Result<Self> {
        let net = MlpParams::glorot(
            &widths(covariate_dim + 2, hidden, 1),
            ELU_ALPHA,
            OutputActivation::Linear,
            rng,
        )?;
        Ok(Discriminator { net, covariate_dim })
    }

    pub fn validate(&self) -> Result<()> {
        self.net.validate()?;
        if self.net.output != OutputActivation::Linear || self.net.output_dim() != 1 {
            return Err(Error::Shape("critic must have a scalar linear output".into()));
        }
        if self.net.input_dim() != self.covariate_dim + 2 {
            return Err(Error::Shape(format!(
                "critic input width {} != covariates {} + 2",
                self.net.input_dim(),
                self.covariate_dim
            )));
        }
        Ok(())
    }

    /// Coordinates entering the gradient-penalty norm: covariates and time, not the indicator.
    pub fn penalty_mask(&self) -> Vec<bool> {
        let mut mask = vec![true; self.covariate_dim + 2];
        mask[self.covariate_dim + 1] = false;
        mask
    }

    /// Rows `[x | y | delta]`.
    pub fn assemble_input(
        covariates: ArrayView2<f64>,
        time: &Array1<f64>,
        indicator: &Array1<f64>,
    ) -> Result<Array2<f64>> {
        let (n, d) = covariates.dim();
        if time.len() != n || indicator.len() != n {
            return Err(Error::Shape(format!(
                "critic input rows disagree: {n} covariate rows, {} times, {} indicators",
                time.len(),
                indicator.len()
            )));
        }
        let mut input = Array2::zeros((n, d + 2));
        input.slice_mut(s![.., ..d]).assign(&covariates);
        input.column_mut(d).assign(time);
        input.column_mut(d + 1).assign(indicator);
        Ok(input)
    }
}

pub fn discriminator_forward(disc: &Discriminator, x: &[f64], y: f64, indicator: f64) -> Result<f64> {
    if x.len() != disc.covariate_dim {
        return Err(Error::Shape(format!(
            "critic expects {} covariates, got {}",
            disc.covariate_dim,
            x.len()
        )));
    }
    let mut input = x.to_vec();
    input.push(y);
    input.push(indicator);
    let (out, _) = crate::tensor::mlp_forward(&disc.net, &input)?;
    Ok(out[0])
}

pub const CHECKPOINT_MAGIC: &str = "gcse-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Serializes one network body. Floats use the shortest round-trip decimal form.
pub fn write_mlp(out: &mut String, params: &MlpParams) {
    let _ = writeln!(out, "elu_alpha {}", params.elu_alpha);
    let _ = writeln!(out, "output {}", params.output.name());
    let _ = writeln!(out, "layers {}", params.layers.len());
    for layer in &params.layers {
        let _ = writeln!(out, "layer {} {}", layer.fan_out(), layer.fan_in());
        write_floats(out, "w", layer.weight.iter());
        write_floats(out, "b", layer.bias.iter());
    }
}

fn write_floats<'a>(out: &mut String, tag: &str, values: impl Iterator<Item = &'a f64>) {
    out.push_str(tag);
    for v in values {
        let _ = write!(out, " {v}");
    }
    out.push('\n');
}

/// Line cursor over a checkpoint body.
pub struct Lines<'a> {
    inner: std::iter::Enumerate<std::str::Lines<'a>>,
}

impl<'a> Lines<'a> {
    pub fn new(text: &'a str) -> Self {
        Lines {
            inner: text.lines().enumerate(),
        }
    }

    pub fn next_line(&mut self) -> Result<(usize, &'a str)> {
        self.inner
            .next()
            .map(|(i, l)| (i + 1, l))
            .ok_or_else(|| Error::Parse("unexpected end of checkpoint".into()))
    }

    /// Next line, which must begin with `key`; returns the remainder.
    pub fn expect(&mut self, key: &str) -> Result<&'a str> {
        let (no, line) = self.next_line()?;
        let mut parts = line.splitn(2, ' ');
        let head = parts.next().unwrap_or("");
        if head != key {
            return Err(Error::Parse(format!("line {no}: expected '{key}', found '{line}'")));
        }
        Ok(parts.next().unwrap_or("").trim())
    }

    pub fn expect_parse<T: std::str::FromStr>(&mut self, key: &str) -> Result<T> {
        let rest = self.expect(key)?;
        rest.parse()
            .map_err(|_| Error::Parse(format!("bad value for '{key}': '{rest}'")))
    }
}

pub fn parse_floats(text: &str, expected: usize) -> Result<Vec<f64>> {
    let vals = text
        .split_ascii_whitespace()
        .map(|t| {
            t.parse::<f64>()
                .map_err(|_| Error::Parse(format!("bad float '{t}'")))
        })
        .collect::<Result<Vec<_>>>()?;
    if vals.len() != expected {
        return Err(Error::Parse(format!(
            "expected {expected} values, found {}",
            vals.len()
        )));
    }
    Ok(vals)
}

pub fn read_mlp(lines: &mut Lines<'_>) -> Result<MlpParams> {
    let elu_alpha: f64 = lines.expect_parse("elu_alpha")?;
    let output_name = lines.expect("output")?;
    let output = OutputActivation::from_name(output_name)
        .ok_or_else(|| Error::Parse(format!("unknown output activation '{output_name}'")))?;
    let n_layers: usize = lines.expect_parse("layers")?;
    let mut layers = Vec::with_capacity(n_layers);
    for _ in 0..n_layers {
        let dims = lines.expect("layer")?;
        let dims: Vec<usize> = dims
            .split_ascii_whitespace()
            .map(|t| t.parse().map_err(|_| Error::Parse(format!("bad layer dims '{dims}'"))))
            .collect::<Result<_>>()?;
        let [rows, cols] = dims[..] else {
            return Err(Error::Parse("layer line needs two dimensions".into()));
        };
        let w = parse_floats(lines.expect("w")?, rows * cols)?;
        let b = parse_floats(lines.expect("b")?, rows)?;
        layers.push(crate::tensor::Layer {
            weight: Array2::from_shape_vec((rows, cols), w).map_err(|e| Error::Parse(e.to_string()))?,
            bias: Array1::from(b),
        });
    }
    let params = MlpParams {
        layers,
        elu_alpha,
        output,
    };
    params.validate()?;
    Ok(params)
}

/// Trained network pair as stored on disk.
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkCheckpoint {
    pub preset: String,
    pub generator: GeneratorPair,
    pub discriminator: Discriminator,
}

impl NetworkCheckpoint {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{CHECKPOINT_MAGIC} v{CHECKPOINT_VERSION}");
        let _ = writeln!(out, "preset {}", self.preset);
        self.write_nets(&mut out);
        out
    }

    pub(crate) fn write_nets(&self, out: &mut String) {
        let g = &self.generator;
        let _ = writeln!(out, "net generator");
        let _ = writeln!(out, "noise_dim {}", g.noise_dim);
        let _ = writeln!(out, "covariate_dim {}", g.covariate_dim);
        match g.time_clamp {
            Some(c) => {
                let _ = writeln!(out, "time_clamp {c}");
            }
            None => {
                let _ = writeln!(out, "time_clamp none");
            }
        }
        write_mlp(out, &g.net);
        let _ = writeln!(out, "net discriminator");
        let _ = writeln!(out, "covariate_dim {}", self.discriminator.covariate_dim);
        write_mlp(out, &self.discriminator.net);
    }

    pub(crate) fn read_header(lines: &mut Lines<'_>) -> Result<String> {
        let (_, first) = lines.next_line()?;
        let expected = format!("{CHECKPOINT_MAGIC} v{CHECKPOINT_VERSION}");
        if first.trim() != expected {
            return Err(Error::Parse(format!(
                "not a checkpoint (header '{first}', expected '{expected}')"
            )));
        }
        Ok(lines.expect("preset")?.to_string())
    }

    pub(crate) fn read_nets(preset: String, lines: &mut Lines<'_>) -> Result<Self> {
        if lines.expect("net")? != "generator" {
            return Err(Error::Parse("expected generator section".into()));
        }
        let noise_dim = lines.expect_parse("noise_dim")?;
        let covariate_dim = lines.expect_parse("covariate_dim")?;
        let clamp = lines.expect("time_clamp")?;
        let time_clamp = if clamp == "none" {
            None
        } else {
            Some(
                clamp
                    .parse()
                    .map_err(|_| Error::Parse(format!("bad time_clamp '{clamp}'")))?,
            )
        };
        let generator = GeneratorPair {
            net: read_mlp(lines)?,
            noise_dim,
            covariate_dim,
            time_clamp,
        };
        generator.validate()?;
        if lines.expect("net")? != "discriminator" {
            return Err(Error::Parse("expected discriminator section".into()));
        }
        let covariate_dim = lines.expect_parse("covariate_dim")?;
        let discriminator = Discriminator {
            net: read_mlp(lines)?,
            covariate_dim,
        };
        discriminator.validate()?;
        Ok(NetworkCheckpoint {
            preset,
            generator,
            discriminator,
        })
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = Lines::new(text);
        let preset = Self::read_header(&mut lines)?;
        Self::read_nets(preset, &mut lines)
    }
}
