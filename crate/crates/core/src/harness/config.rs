//! Experiment configuration: one TOML file per experiment.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{DatasetDescriptor, LabelPosition, NominalEncoding};
use crate::error::{DosaError, Result};
use crate::losses::{LossConfig, LossVariant, MmReduction, DEFAULT_CLAMP_FLOOR};
use crate::sea::TrainConfig;
use crate::spiking::PlifConfig;

/// Environment variable holding the dataset root directory.
pub const DATA_DIR_ENV: &str = "DOSA_DATA_DIR";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Mll,
    Cmll,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSection {
    pub name: String,
    /// Single file, split `train_fraction` / rest with the run seed.
    #[serde(default)]
    pub path: Option<PathBuf>,
    /// Predefined train file; requires `test`.
    #[serde(default)]
    pub train: Option<PathBuf>,
    #[serde(default)]
    pub test: Option<PathBuf>,
    pub label_count: usize,
    #[serde(default)]
    pub label_position: LabelPosition,
    #[serde(default)]
    pub nominal: NominalEncoding,
    #[serde(default = "default_train_fraction")]
    pub train_fraction: f64,
}

fn default_train_fraction() -> f64 {
    0.7
}

impl DatasetSection {
    pub fn descriptor(&self) -> DatasetDescriptor {
        DatasetDescriptor {
            name: self.name.clone(),
            label_count: self.label_count,
            label_position: self.label_position,
            nominal: self.nominal,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    #[serde(default)]
    pub hidden_layers: Vec<usize>,
    #[serde(default = "default_timesteps")]
    pub timesteps: usize,
    #[serde(default)]
    pub plif: PlifConfig,
}

fn default_timesteps() -> usize {
    10
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossSection {
    pub variant: LossVariant,
    #[serde(default)]
    pub grad_through_importance: bool,
    #[serde(default = "default_floor")]
    pub importance_clamp_floor: f64,
    #[serde(default)]
    pub margin_trainable: Option<bool>,
    #[serde(default)]
    pub mm_reduction: MmReduction,
}

fn default_floor() -> f64 {
    DEFAULT_CLAMP_FLOOR
}

impl LossSection {
    pub fn to_config(&self) -> LossConfig {
        LossConfig {
            variant: self.variant,
            importance_clamp_floor: self.importance_clamp_floor,
            grad_through_importance: self.grad_through_importance,
            margin_trainable: self.margin_trainable,
            mm_reduction: self.mm_reduction,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskSection {
    pub samples_per_task: Vec<usize>,
    pub labels_per_task: Vec<usize>,
    /// Seed for a shuffled label-to-task assignment; column order if absent.
    #[serde(default)]
    pub label_shuffle_seed: Option<u64>,
    /// Allow the blocks to cover fewer labels than the dataset has. The
    /// sequence then runs on the first `Σ labels_per_task` label columns only.
    #[serde(default)]
    pub drop_unassigned_labels: bool,
}

impl TaskSection {
    pub fn total_labels(&self) -> usize {
        self.labels_per_task.iter().sum()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub mode: Mode,
    pub dataset: DatasetSection,
    #[serde(default = "default_model")]
    pub model: ModelSection,
    pub loss: LossSection,
    #[serde(default)]
    pub training: TrainConfig,
    #[serde(default)]
    pub tasks: Option<TaskSection>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
}

fn default_model() -> ModelSection {
    ModelSection {
        hidden_layers: Vec::new(),
        timesteps: default_timesteps(),
        plif: PlifConfig::default(),
    }
}

fn default_seeds() -> Vec<u64> {
    vec![0, 1, 2, 3, 4]
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("results")
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| DosaError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| DosaError::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| DosaError::Config(e.to_string()))
    }

    /// Checks everything that can be checked without reading the data.
    pub fn validate(&self) -> Result<()> {
        let d = &self.dataset;
        if d.label_count == 0 {
            return Err(DosaError::Config("dataset.label_count must be >= 1".into()));
        }
        match (&d.path, &d.train, &d.test) {
            (Some(_), None, None) | (None, Some(_), Some(_)) => {}
            _ => {
                return Err(DosaError::Config(
                    "dataset needs either `path` or both `train` and `test`".into(),
                ))
            }
        }
        if !(d.train_fraction > 0.0 && d.train_fraction < 1.0) {
            return Err(DosaError::Config(format!(
                "dataset.train_fraction must be in (0, 1), got {}",
                d.train_fraction
            )));
        }
        if self.model.timesteps == 0 {
            return Err(DosaError::Config("model.timesteps must be >= 1".into()));
        }
        if let Some(i) = self.model.hidden_layers.iter().position(|&w| w == 0) {
            return Err(DosaError::Config(format!("hidden layer {i} has zero width")));
        }
        self.loss.to_config().validate()?;
        self.training.validate()?;
        if self.seeds.is_empty() {
            return Err(DosaError::Config("seeds is empty".into()));
        }
        match self.mode {
            Mode::Mll => Ok(()),
            Mode::Cmll => {
                if !self.model.hidden_layers.is_empty() {
                    return Err(DosaError::Config(
                        "cmll runs grow the output heads directly; model.hidden_layers must be empty".into(),
                    ));
                }
                let t = self
                    .tasks
                    .as_ref()
                    .ok_or_else(|| DosaError::Config("cmll mode needs a [tasks] section".into()))?;
                if t.samples_per_task.len() != t.labels_per_task.len() || t.samples_per_task.is_empty() {
                    return Err(DosaError::Config(format!(
                        "tasks: {} sample counts vs {} label counts",
                        t.samples_per_task.len(),
                        t.labels_per_task.len()
                    )));
                }
                let labels = t.total_labels();
                let fits = if t.drop_unassigned_labels {
                    labels <= d.label_count
                } else {
                    labels == d.label_count
                };
                if !fits {
                    return Err(DosaError::Config(format!(
                        "tasks.labels_per_task sums to {labels}, dataset has {}",
                        d.label_count
                    )));
                }
                Ok(())
            }
        }
    }

    /// SHA-256 over the canonical JSON of everything that affects a single
    /// run's numbers. Seeds and the output directory are excluded so that a
    /// `--seed` or `--out` override keeps the same identity.
    pub fn hash(&self) -> String {
        let mut canon = self.clone();
        canon.seeds.clear();
        canon.output_dir = PathBuf::new();
        let json = serde_json::to_vec(&canon).expect("config serialises");
        hex::encode(Sha256::digest(&json))
    }

    /// First 16 hex digits, used for directory names.
    pub fn short_hash(&self) -> String {
        self.hash()[..16].to_string()
    }
}

/// Resolves a dataset path: absolute paths are kept, relative ones are looked
/// up under the dataset root (`$DOSA_DATA_DIR`, or the working directory).
pub fn resolve_data_path(p: &Path) -> PathBuf {
    if p.is_absolute() {
        return p.to_path_buf();
    }
    match std::env::var_os(DATA_DIR_ENV) {
        Some(root) => PathBuf::from(root).join(p),
        None => p.to_path_buf(),
    }
}
