//! Run configuration: a TOML file whose values command-line flags override.

use std::fs;
use std::path::{Path, PathBuf};

use cfrec_core::diffusion::SampleStart;
use cfrec_core::math::AdamConfig;
use cfrec_core::trainer::{ScheduleConfig, TrainConfig};
use cfrec_core::{DenoiserParams, Mode, SplitRatios};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};
use crate::ingest::InputFormat;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub raw: Option<PathBuf>,
    pub format: InputFormat,
    pub delimiter: String,
    pub mode: Mode,
    pub split: String,
    pub cache: PathBuf,
}

impl Default for DataSection {
    fn default() -> Self {
        Self {
            raw: None,
            format: InputFormat::CsvRated,
            delimiter: ",".into(),
            mode: Mode::Clean,
            split: "70:20:10".into(),
            cache: PathBuf::from("cache"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub hidden: usize,
    pub time_dim: usize,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            hidden: cfrec_core::denoiser::DEFAULT_HIDDEN,
            time_dim: cfrec_core::denoiser::DEFAULT_TIME_DIM,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub p_uncond: f64,
    pub lr: f64,
    pub batch_size: usize,
    pub max_steps: u64,
    pub eval_every: u64,
    pub eval_batch: usize,
    /// Drawn from entropy and written back when absent.
    pub seed: Option<u64>,
}

impl Default for TrainSection {
    fn default() -> Self {
        let d = TrainConfig::default();
        Self {
            p_uncond: d.p_uncond,
            lr: d.adam.lr,
            batch_size: d.batch_size,
            max_steps: d.max_steps,
            eval_every: d.eval_every,
            eval_batch: d.eval_batch,
            seed: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplingSection {
    pub guidance_weight: f64,
    pub start: SampleStart,
    /// Defaults to `T`.
    pub start_step: Option<usize>,
}

impl Default for SamplingSection {
    fn default() -> Self {
        Self {
            guidance_weight: 0.0,
            start: SampleStart::NoisedGuidance,
            start_step: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub ks: Vec<usize>,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            ks: cfrec_core::eval::DEFAULT_KS.to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub dir: PathBuf,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("run"),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataSection,
    pub schedule: ScheduleConfig,
    pub model: ModelSection,
    pub train: TrainSection,
    pub sampling: SamplingSection,
    pub eval: EvalSection,
    pub output: OutputSection,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::from_toml(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn ratios(&self) -> Result<SplitRatios> {
        Ok(SplitRatios::parse(&self.data.split)?)
    }

    /// Seed from the config, or from the clock and process id. The chosen
    /// value is written back so manifests always record it.
    pub fn resolve_seed(&mut self) -> u64 {
        *self.train.seed.get_or_insert_with(|| {
            let nanos = std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .map(|d| d.as_nanos() as u64)
                .unwrap_or(0);
            cfrec_core::Rng::substream(nanos, std::process::id() as u64).next_u64()
        })
    }

    pub fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            p_uncond: self.train.p_uncond,
            batch_size: self.train.batch_size,
            max_steps: self.train.max_steps,
            eval_every: self.train.eval_every,
            seed,
            schedule: self.schedule,
            adam: AdamConfig {
                lr: self.train.lr,
                ..Default::default()
            },
            hidden: self.model.hidden,
            time_dim: self.model.time_dim,
            eval_start_step: self.sampling.start_step,
            eval_batch: self.train.eval_batch,
        }
    }

    /// Checks every field against the preconditions of the module that owns it.
    pub fn validate(&self) -> Result<()> {
        self.ratios()?;
        if self.data.delimiter.is_empty() {
            return Err(CliError::Config("data.delimiter must not be empty".into()));
        }
        let sched = self.schedule.build()?;
        if let Some(s) = self.sampling.start_step {
            sched.check(s)?;
        }
        if !(self.sampling.guidance_weight.is_finite() && self.sampling.guidance_weight >= 0.0) {
            return Err(CliError::Config("sampling.guidance_weight must be finite and >= 0".into()));
        }
        if self.eval.ks.is_empty() || self.eval.ks.contains(&0) {
            return Err(CliError::Config("eval.ks must be a nonempty list of positive K".into()));
        }
        DenoiserParams::<f32>::zeros(1, self.model.hidden, self.model.time_dim, self.schedule.steps)?;
        self.train_config(0).validate()?;
        Ok(())
    }
}
