//! Experiment configuration documents.

use std::fs;
use std::path::{Path, PathBuf};

use attnop_core::datagen::{
    cde_dataset, darcy_dataset, kolmogorov_dataset, lorenz63_dataset, CdeSpec, DarcySpec, KolmogorovSpec, LorenzSpec,
};
use attnop_core::models::ComplexityConfig;
use attnop_core::{Dataset, ModelConfig, TrainConfig};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::container::read_container;
use crate::error::{CliError, CliResult};
use crate::verify::VerifyConfig;

/// Where samples come from: a container on disk or a generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    Container(PathBuf),
    Lorenz(LorenzSpec),
    Cde(CdeSpec),
    Darcy(DarcySpec),
    Kolmogorov(KolmogorovSpec),
}

impl DataSource {
    pub fn problem(&self) -> &'static str {
        match self {
            DataSource::Container(_) => "container",
            DataSource::Lorenz(_) => "lorenz63",
            DataSource::Cde(_) => "cde",
            DataSource::Darcy(_) => "darcy",
            DataSource::Kolmogorov(_) => "kolmogorov",
        }
    }

    pub fn seed(&self) -> Option<u64> {
        match self {
            DataSource::Container(_) => None,
            DataSource::Lorenz(s) => Some(s.seed),
            DataSource::Cde(s) => Some(s.seed),
            DataSource::Darcy(s) => Some(s.seed),
            DataSource::Kolmogorov(s) => Some(s.seed),
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        match &mut self {
            DataSource::Container(_) => {}
            DataSource::Lorenz(s) => s.seed = seed,
            DataSource::Cde(s) => s.seed = seed,
            DataSource::Darcy(s) => s.seed = seed,
            DataSource::Kolmogorov(s) => s.seed = seed,
        }
        self
    }

    /// The same generator sampled with `n` points per axis.
    pub fn at_resolution(&self, n: usize) -> CliResult<DataSource> {
        if n < 2 {
            return Err(CliError::Config(format!("resolution {n} is below two points")));
        }
        let dt = |t: f64| t / (n - 1) as f64;
        Ok(match self {
            DataSource::Container(p) => {
                return Err(CliError::Config(format!("container {} has a fixed resolution", p.display())))
            }
            DataSource::Lorenz(s) => DataSource::Lorenz(LorenzSpec { dt: dt(s.t_final), ..s.clone() }),
            DataSource::Cde(s) => DataSource::Cde(CdeSpec { dt: dt(s.t_final), ..s.clone() }),
            DataSource::Darcy(s) => DataSource::Darcy(DarcySpec { n, ..s.clone() }),
            DataSource::Kolmogorov(s) => DataSource::Kolmogorov(KolmogorovSpec { n, ..s.clone() }),
        })
    }

    /// Loads or generates the samples.
    pub fn load(&self) -> CliResult<Dataset> {
        Ok(match self {
            DataSource::Container(p) => read_container(p)?.0,
            DataSource::Lorenz(s) => {
                let (d, redraws) = lorenz63_dataset(s)?;
                if redraws > 0 {
                    log::warn!("{redraws} diverging Lorenz initial states were redrawn");
                }
                d
            }
            DataSource::Cde(s) => cde_dataset(s)?,
            DataSource::Darcy(s) => darcy_dataset(s)?,
            DataSource::Kolmogorov(s) => kolmogorov_dataset(s)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataBlock {
    pub train: Option<DataSource>,
    #[serde(default)]
    pub validation: Option<DataSource>,
    #[serde(default)]
    pub test: Option<DataSource>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalBlock {
    /// Points per axis for resolution sweeps.
    #[serde(default)]
    pub resolutions: Vec<usize>,
    /// Forces the smoothing layer off (`false`) or requires it (`true`).
    #[serde(default)]
    pub smoothing: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComplexityBlock {
    pub rows: Vec<ComplexityConfig>,
    /// Grid sizes at which evaluation costs are tabulated.
    #[serde(default)]
    pub n_points: Vec<usize>,
}

/// One JSON document drives every command; each reads the blocks it needs.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub model: Option<ModelConfig>,
    #[serde(default)]
    pub data: Option<DataBlock>,
    #[serde(default)]
    pub train: Option<TrainConfig>,
    #[serde(default)]
    pub eval: Option<EvalBlock>,
    #[serde(default)]
    pub complexity: Option<ComplexityBlock>,
    #[serde(default)]
    pub verify: Option<VerifyConfig>,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> CliResult<Self> {
        parse_json(text)
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::from_json(&text).map_err(|e| match e {
            CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn data(&self) -> CliResult<&DataBlock> {
        self.data.as_ref().ok_or_else(|| missing("data"))
    }

    pub fn model(&self) -> CliResult<&ModelConfig> {
        self.model.as_ref().ok_or_else(|| missing("model"))
    }

    pub fn train_source(&self) -> CliResult<&DataSource> {
        self.data()?.train.as_ref().ok_or_else(|| missing("data.train"))
    }

    /// The test set, falling back to the training source.
    pub fn test_source(&self) -> CliResult<&DataSource> {
        let d = self.data()?;
        d.test.as_ref().or(d.train.as_ref()).ok_or_else(|| missing("data.test"))
    }
}

fn missing(block: &str) -> CliError {
    CliError::Config(format!("missing `{block}` block"))
}

pub(crate) fn parse_json<T: DeserializeOwned>(text: &str) -> CliResult<T> {
    serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))
}
