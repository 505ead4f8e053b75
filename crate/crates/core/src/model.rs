//! The dual-output spiking network: a stack of PLIF layers shared by two
//! accumulator heads that score the positive and negative polarity of every
//! label. A label is predicted present where the positive head outscores the
//! negative one.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{DosaError, Result};
use crate::losses::MarginVector;
use crate::numerics::{stream_rng, Matrix, ParamStore, Tape, Var};
use crate::spiking::{poisson_encode, uniform_weights, AccumulatorHead, EncoderConfig, PlifConfig, PlifLayer};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DosaConfig {
    pub input_dim: usize,
    pub hidden_layers: Vec<usize>,
    pub num_labels: usize,
    pub timesteps: usize,
    pub seed: u64,
    #[serde(default)]
    pub plif: PlifConfig,
}

impl DosaConfig {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(DosaError::Config("input_dim must be >= 1".into()));
        }
        if self.num_labels == 0 {
            return Err(DosaError::Config("num_labels must be >= 1".into()));
        }
        if self.timesteps == 0 {
            return Err(DosaError::Config("timesteps must be >= 1".into()));
        }
        if let Some(i) = self.hidden_layers.iter().position(|&w| w == 0) {
            return Err(DosaError::Config(format!("hidden layer {i} has zero width")));
        }
        Ok(())
    }

    pub fn encoder(&self) -> EncoderConfig {
        EncoderConfig {
            timesteps: self.timesteps,
            dt_ms: 1.0,
            seed: self.seed,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DosaModel {
    pub config: DosaConfig,
    pub params: ParamStore,
    pub extractor: Vec<PlifLayer>,
    pub positive: AccumulatorHead,
    pub negative: AccumulatorHead,
    pub margin: MarginVector,
}

/// Head outputs for a batch, plus the derived bipolar labels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DualPrediction {
    pub y_plus: Matrix,
    pub y_minus: Matrix,
    pub labels: Matrix,
}

/// `+1` where `y_plus > y_minus`, otherwise `-1` (ties go negative).
pub fn predict_labels(y_plus: &Matrix, y_minus: &Matrix) -> Result<Matrix> {
    y_plus.zip_map(y_minus, "predict_labels", |p, m| if p > m { 1.0 } else { -1.0 })
}

impl DosaModel {
    /// Uniform weights in `±1/sqrt(fan_in)`, zero biases, `tau = 2`, unit margins.
    pub fn init<R: Rng + ?Sized>(config: DosaConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let mut params = ParamStore::new();
        let mut extractor = Vec::with_capacity(config.hidden_layers.len());
        let mut fan_in = config.input_dim;
        for (i, &width) in config.hidden_layers.iter().enumerate() {
            extractor.push(PlifLayer::init(
                &mut params,
                &format!("hidden{i}"),
                fan_in,
                width,
                config.plif,
                rng,
            ));
            fan_in = width;
        }
        let positive = AccumulatorHead::init(&mut params, "positive", fan_in, config.num_labels, rng);
        let negative = AccumulatorHead::init(&mut params, "negative", fan_in, config.num_labels, rng);
        let margin = MarginVector::register(&mut params, config.num_labels);
        Ok(Self {
            config,
            params,
            extractor,
            positive,
            negative,
            margin,
        })
    }

    pub fn num_labels(&self) -> usize {
        self.config.num_labels
    }

    pub fn feature_width(&self) -> usize {
        self.extractor.last().map_or(self.config.input_dim, |l| l.fan_out)
    }

    /// Records the network on `tape` for an already-encoded spike train and
    /// returns `(y_plus, y_minus)`.
    pub fn forward_tape(&self, tape: &mut Tape, spikes: &[Matrix]) -> Result<(Var, Var)> {
        if let Some(first) = spikes.first() {
            if first.cols() != self.config.input_dim {
                return Err(DosaError::Dimension {
                    op: "DosaModel::forward",
                    left: first.shape(),
                    right: (first.rows(), self.config.input_dim),
                });
            }
        }
        let mut x: Vec<Var> = spikes.iter().map(|s| tape.constant(s.clone())).collect();
        for layer in &self.extractor {
            x = layer.forward(tape, &self.params, &x)?;
        }
        let yp = self.positive.forward(tape, &self.params, &x)?;
        let ym = self.negative.forward(tape, &self.params, &x)?;
        Ok((yp, ym))
    }

    pub fn forward_spikes(&self, spikes: &[Matrix]) -> Result<DualPrediction> {
        let mut tape = Tape::new();
        let (yp, ym) = self.forward_tape(&mut tape, spikes)?;
        let y_plus = tape.value(yp).clone();
        let y_minus = tape.value(ym).clone();
        let labels = predict_labels(&y_plus, &y_minus)?;
        Ok(DualPrediction {
            y_plus,
            y_minus,
            labels,
        })
    }

    /// Encodes `features` (in `[0, 1]`) and runs both heads.
    pub fn forward<R: Rng + ?Sized>(&self, features: &Matrix, rng: &mut R) -> Result<DualPrediction> {
        if features.cols() != self.config.input_dim {
            return Err(DosaError::Dimension {
                op: "DosaModel::forward",
                left: features.shape(),
                right: (features.rows(), self.config.input_dim),
            });
        }
        let spikes = poisson_encode(features, &self.config.encoder(), rng)?;
        self.forward_spikes(&spikes)
    }

    /// Grows both heads by `new_labels` outputs. Existing columns are copied
    /// unchanged; new columns use the same uniform init as [`DosaModel::init`]
    /// and zero bias. The extractor and margin are left alone.
    pub fn expand_heads<R: Rng + ?Sized>(&mut self, new_labels: usize, rng: &mut R) -> Result<()> {
        if new_labels == 0 {
            return Ok(());
        }
        let fan_in = self.feature_width();
        for head in [&mut self.positive, &mut self.negative] {
            let fresh = uniform_weights(fan_in, new_labels, rng);
            let w = self.params.value(head.weight).hcat(&fresh)?;
            let b = self.params.value(head.bias).hcat(&Matrix::zeros(1, new_labels))?;
            self.params.set_value(head.weight, w)?;
            self.params.set_value(head.bias, b)?;
            head.fan_out += new_labels;
        }
        self.config.num_labels += new_labels;
        Ok(())
    }

    pub fn save_checkpoint(&self, path: &Path, seed_lineage: &[u64]) -> Result<()> {
        self.save_checkpoint_tagged(path, seed_lineage, None)
    }

    /// Like [`DosaModel::save_checkpoint`], recording the experiment's config hash.
    pub fn save_checkpoint_tagged(&self, path: &Path, seed_lineage: &[u64], config_hash: Option<&str>) -> Result<()> {
        let ckpt = Checkpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            code_version: env!("CARGO_PKG_VERSION").to_string(),
            config_hash: config_hash.map(str::to_string),
            seed_lineage: seed_lineage.to_vec(),
            model: self.clone(),
        };
        let json = serde_json::to_string_pretty(&ckpt)?;
        std::fs::write(path, json).map_err(|e| DosaError::io(path, e))
    }

    pub fn load_checkpoint(path: &Path) -> Result<(Self, Vec<u64>)> {
        let text = std::fs::read_to_string(path).map_err(|e| DosaError::io(path, e))?;
        let ckpt: Checkpoint = serde_json::from_str(&text)?;
        if ckpt.format != CHECKPOINT_FORMAT || ckpt.version != CHECKPOINT_VERSION {
            return Err(DosaError::Config(format!(
                "unsupported checkpoint {} v{}",
                ckpt.format, ckpt.version
            )));
        }
        Ok((ckpt.model, ckpt.seed_lineage))
    }
}

pub const CHECKPOINT_FORMAT: &str = "dosa-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

/// On-disk checkpoint container (JSON). See the README for the layout.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    #[serde(default)]
    pub code_version: String,
    #[serde(default)]
    pub config_hash: Option<String>,
    pub seed_lineage: Vec<u64>,
    pub model: DosaModel,
}

/// Model with a fixed encoder seed, convenient for repeated evaluation.
pub fn forward_seeded(model: &DosaModel, features: &Matrix, seed: u64, stream: u64) -> Result<DualPrediction> {
    model.forward(features, &mut stream_rng(seed, stream))
}
