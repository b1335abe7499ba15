use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::trainer::TrainConfig;

/// Where the training data comes from.
#[derive(Clone, Debug, Default, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Native dataset CSV, or a raw CSV when `schema` is set.
    pub path: Option<PathBuf>,
    pub schema: Option<PathBuf>,
    /// Fraction held out as a test set; none keeps every row for training.
    pub test_fraction: Option<f64>,
    pub split_seed: u64,
    /// Standardize covariates and log raw times before training.
    pub standardize: bool,
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimateConfig {
    /// Generated samples per covariate point.
    pub m: usize,
    /// Prediction interval coverage.
    pub coverage: f64,
    pub sample_seed: u64,
}

impl Default for EstimateConfig {
    fn default() -> Self {
        EstimateConfig {
            m: 100_000,
            coverage: 0.9,
            sample_seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub output_dir: PathBuf,
    pub data: DataConfig,
    pub train: TrainConfig,
    pub estimate: EstimateConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            output_dir: PathBuf::from("gcse-out"),
            data: DataConfig::default(),
            train: TrainConfig::default(),
            estimate: EstimateConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<RunConfig> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.estimate.coverage > 0.0 && self.estimate.coverage < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "coverage must lie in (0,1), got {}",
                self.estimate.coverage
            )));
        }
        if self.estimate.m == 0 {
            return Err(Error::InvalidParameter("m must be >= 1".into()));
        }
        if let Some(f) = self.data.test_fraction {
            if !(f > 0.0 && f < 1.0) {
                return Err(Error::InvalidParameter(format!(
                    "test_fraction must lie in (0,1), got {f}"
                )));
            }
        }
        self.train.validate()
    }

    /// Annotated listing of every key and its default value.
    pub fn defaults_listing() -> String {
        let d = RunConfig::default();
        let mut out = String::new();
        out.push_str(&format!("output_dir = \"{}\"\n\n", d.output_dir.display()));
        out.push_str("[data]\n# path = \"train.csv\"\n# schema = \"schema.toml\"\n# test_fraction = 0.1\n");
        out.push_str(&format!(
            "split_seed = {}\nstandardize = {}\n\n",
            d.data.split_seed, d.data.standardize
        ));
        out.push_str("[train]\n");
        out.push_str(&d.train.to_config_string());
        out.push_str(&format!(
            "\n[estimate]\nm = {}\ncoverage = {}\nsample_seed = {}\n",
            d.estimate.m, d.estimate.coverage, d.estimate.sample_seed
        ));
        out
    }
}
