//! Sequential learning with model adaptation.
//!
//! Tasks arrive one at a time, each with new samples and new labels. For task
//! `i` the previous model labels the new samples for every label it already
//! knows, the output heads grow by the task's new labels, and the whole model
//! is retrained on task `i` alone. Earlier task data is never touched again:
//! [`TaskSource::take_task`] hands each block out exactly once.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{DosaError, Result};
use crate::losses::{loss, zeta, LossConfig};
use crate::metrics::combined_evaluation;
use crate::model::{forward_seeded, DosaConfig, DosaModel};
use crate::numerics::{stream_rng, Adam, AdamConfig, Matrix, Tape};
use crate::spiking::{poisson_encode, select_spike_rows};

// Stream ids carve independent generators out of one run seed.
const STREAM_INIT: u64 = 1;
const STREAM_ADAPT: u64 = 100;
const STREAM_TRAIN: u64 = 200;
const STREAM_AUGMENT: u64 = 300;
pub const STREAM_EVAL: u64 = 999;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    /// `None` trains full-batch.
    pub batch_size: Option<usize>,
    /// Draw a fresh Poisson spike train every epoch.
    pub resample_encoding_per_epoch: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            lr: 1e-3,
            batch_size: None,
            resample_encoding_per_epoch: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(DosaError::Config(format!("learning rate must be > 0, got {}", self.lr)));
        }
        if self.batch_size == Some(0) {
            return Err(DosaError::Config("batch size must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Sum of the minibatch losses.
    pub loss_sum: f64,
    /// `loss_sum` divided by the number of samples.
    pub loss_mean: f64,
    pub saturated: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskLog {
    pub task_index: usize,
    pub num_samples: usize,
    pub label_width: usize,
    pub epochs: Vec<EpochLog>,
}

/// Trains every trainable parameter of `model` on `(features, labels)` with a
/// fresh Adam optimiser. Zero epochs leave the model untouched.
pub fn train_model<R: Rng + ?Sized>(
    model: &mut DosaModel,
    features: &Matrix,
    labels: &Matrix,
    loss_cfg: &LossConfig,
    cfg: &TrainConfig,
    rng: &mut R,
) -> Result<Vec<EpochLog>> {
    cfg.validate()?;
    loss_cfg.validate()?;
    if features.rows() != labels.rows() || labels.cols() != model.num_labels() {
        return Err(DosaError::Dimension {
            op: "train_model",
            left: features.shape(),
            right: labels.shape(),
        });
    }
    let n = features.rows();
    let mut logs = Vec::with_capacity(cfg.epochs);
    if cfg.epochs == 0 || n == 0 {
        return Ok(logs);
    }
    model
        .margin
        .set_trainable(&mut model.params, loss_cfg.margin_trainable());
    let mut adam = Adam::new(AdamConfig {
        lr: cfg.lr,
        ..AdamConfig::default()
    });
    let encoder = model.config.encoder();
    let batch = cfg.batch_size.unwrap_or(n).min(n);
    let mut order: Vec<usize> = (0..n).collect();
    let mut spikes = poisson_encode(features, &encoder, rng)?;

    for epoch in 0..cfg.epochs {
        if epoch > 0 && cfg.resample_encoding_per_epoch {
            spikes = poisson_encode(features, &encoder, rng)?;
        }
        if batch < n {
            order.shuffle(rng);
        }
        let mut loss_sum = 0.0;
        let mut saturated = false;
        for rows in order.chunks(batch) {
            let (x, y) = if batch < n {
                (select_spike_rows(&spikes, rows), labels.select_rows(rows))
            } else {
                (spikes.clone(), labels.clone())
            };
            let mut tape = Tape::new();
            let (yp, ym) = model.forward_tape(&mut tape, &x)?;
            let z = zeta(&mut tape, &y, yp, ym)?;
            let b = model.margin.load(&mut tape, &model.params);
            let l = loss(&mut tape, z, b, loss_cfg)?;
            let value = tape.scalar_value(l.value)?;
            saturated |= l.saturated;
            if !value.is_finite() {
                return Err(DosaError::NonFinite(format!(
                    "loss {value} at epoch {epoch} (exponent saturated: {})",
                    l.saturated
                )));
            }
            loss_sum += value;
            model.params.zero_grads();
            tape.backward(l.value, &mut model.params)?;
            adam.step(&mut model.params)?;
        }
        model.params.zero_grads();
        logs.push(EpochLog {
            epoch,
            loss_sum,
            loss_mean: loss_sum / n as f64,
            saturated,
        });
    }
    Ok(logs)
}

/// One task's training block: scaled features and ground truth for the
/// labels this task introduces (in block order).
#[derive(Clone, Debug, PartialEq)]
pub struct TaskData {
    pub task_index: usize,
    pub features: Matrix,
    pub labels: Matrix,
}

/// Supplies task blocks in order. Each block may be taken once.
pub trait TaskSource {
    fn num_tasks(&self) -> usize;
    /// Dataset label ids introduced by task `i`.
    fn label_block(&self, i: usize) -> &[usize];
    fn take_task(&mut self, i: usize) -> Result<TaskData>;
}

/// In-memory source that gives each block away and logs every read.
#[derive(Debug)]
pub struct InMemoryTasks {
    blocks: Vec<Option<TaskData>>,
    label_blocks: Vec<Vec<usize>>,
    reads: Vec<usize>,
}

impl InMemoryTasks {
    pub fn new(blocks: Vec<TaskData>, label_blocks: Vec<Vec<usize>>) -> Result<Self> {
        if blocks.len() != label_blocks.len() {
            return Err(DosaError::Config(format!(
                "{} task blocks but {} label blocks",
                blocks.len(),
                label_blocks.len()
            )));
        }
        for (b, l) in blocks.iter().zip(&label_blocks) {
            if b.labels.cols() != l.len() || b.features.rows() != b.labels.rows() {
                return Err(DosaError::Dimension {
                    op: "InMemoryTasks::new",
                    left: b.features.shape(),
                    right: b.labels.shape(),
                });
            }
        }
        Ok(Self {
            blocks: blocks.into_iter().map(Some).collect(),
            label_blocks,
            reads: Vec::new(),
        })
    }

    /// Task indices in the order they were read.
    pub fn reads(&self) -> &[usize] {
        &self.reads
    }

    /// Whether block `i` is still held by the source.
    pub fn holds(&self, i: usize) -> bool {
        self.blocks.get(i).is_some_and(Option::is_some)
    }
}

impl TaskSource for InMemoryTasks {
    fn num_tasks(&self) -> usize {
        self.blocks.len()
    }

    fn label_block(&self, i: usize) -> &[usize] {
        &self.label_blocks[i]
    }

    fn take_task(&mut self, i: usize) -> Result<TaskData> {
        let len = self.blocks.len();
        let slot = self.blocks.get_mut(i).ok_or(DosaError::Index { index: i, len })?;
        let data = slot
            .take()
            .ok_or_else(|| DosaError::State(format!("task {i} was already read")))?;
        self.reads.push(i);
        Ok(data)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeaState {
    pub model: Option<DosaModel>,
    /// Dataset label ids in head-column order.
    pub seen_label_indices: Vec<usize>,
    pub logs: Vec<TaskLog>,
}

impl SeaState {
    pub fn new() -> Self {
        Self {
            model: None,
            seen_label_indices: Vec::new(),
            logs: Vec::new(),
        }
    }
}

impl Default for SeaState {
    fn default() -> Self {
        Self::new()
    }
}

/// Labels for a new task over every seen label: previous-model predictions for
/// the old columns, then the task's ground truth.
pub fn augment_labels<R: Rng + ?Sized>(
    prev: Option<&DosaModel>,
    seen: usize,
    task: &TaskData,
    rng: &mut R,
) -> Result<Matrix> {
    let Some(model) = prev else {
        if seen != 0 {
            return Err(DosaError::State(format!("{seen} labels seen but no previous model")));
        }
        return Ok(task.labels.clone());
    };
    if model.num_labels() != seen {
        return Err(DosaError::State(format!(
            "previous model has {} heads but {seen} labels were seen",
            model.num_labels()
        )));
    }
    let old = model.forward(&task.features, rng)?.labels;
    old.hcat(&task.labels)
}

/// Grows the model by `new_labels` outputs (or builds it from `template` on
/// the first task). New margin entries start at 1.
pub fn adapt<R: Rng + ?Sized>(
    state: &mut SeaState,
    template: &DosaConfig,
    new_labels: &[usize],
    rng: &mut R,
) -> Result<()> {
    if new_labels.is_empty() {
        return Err(DosaError::Config("a task must introduce at least one label".into()));
    }
    match state.model.as_mut() {
        None => {
            let cfg = DosaConfig {
                num_labels: new_labels.len(),
                ..template.clone()
            };
            state.model = Some(DosaModel::init(cfg, rng)?);
        }
        Some(model) => {
            model.expand_heads(new_labels.len(), rng)?;
            model.margin.grow(&mut model.params, new_labels.len())?;
        }
    }
    state.seen_label_indices.extend_from_slice(new_labels);
    Ok(())
}

pub fn train_task<R: Rng + ?Sized>(
    state: &mut SeaState,
    task: &TaskData,
    labels: &Matrix,
    loss_cfg: &LossConfig,
    cfg: &TrainConfig,
    rng: &mut R,
) -> Result<()> {
    let model = state
        .model
        .as_mut()
        .ok_or_else(|| DosaError::State("train_task before adapt".into()))?;
    let epochs = train_model(model, &task.features, labels, loss_cfg, cfg, rng)?;
    state.logs.push(TaskLog {
        task_index: task.task_index,
        num_samples: task.features.rows(),
        label_width: labels.cols(),
        epochs,
    });
    Ok(())
}

/// Hooks into a running sequence.
pub trait SequenceObserver {
    /// Called right after the heads grew for `task`; `before` is the model as
    /// it was at the end of the previous task.
    fn after_adapt(&mut self, _task: usize, _before: Option<&DosaModel>, _after: &DosaModel) -> Result<()> {
        Ok(())
    }

    fn after_task(&mut self, _task: usize, _state: &SeaState) -> Result<()> {
        Ok(())
    }
}

impl SequenceObserver for () {}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SequenceResult {
    pub state: SeaState,
    /// Combined-mode macro F1 for tasks `0..=i`, one value per task.
    pub combined_macro_f1: Vec<f64>,
    /// Test predictions in head-column order.
    pub test_predictions: Matrix,
    /// Test ground truth with columns reordered to head-column order.
    pub test_labels: Matrix,
}

/// Runs augment, adapt and train over every task, then scores the final model
/// on the test set in combined mode.
#[allow(clippy::too_many_arguments)]
pub fn run_sequence<S: TaskSource, O: SequenceObserver>(
    source: &mut S,
    template: &DosaConfig,
    loss_cfg: &LossConfig,
    train_cfg: &TrainConfig,
    seed: u64,
    test_features: &Matrix,
    test_labels: &Matrix,
    observer: &mut O,
) -> Result<SequenceResult> {
    loss_cfg.validate()?;
    train_cfg.validate()?;
    template.validate()?;
    let tasks = source.num_tasks();
    if tasks == 0 {
        return Err(DosaError::Config("empty task sequence".into()));
    }
    let blocks: Vec<Vec<usize>> = (0..tasks).map(|i| source.label_block(i).to_vec()).collect();
    let total: usize = blocks.iter().map(Vec::len).sum();
    if test_labels.cols() != total {
        return Err(DosaError::Dimension {
            op: "run_sequence",
            left: (tasks, total),
            right: test_labels.shape(),
        });
    }

    let mut state = SeaState::new();
    let mut init_rng = stream_rng(seed, STREAM_INIT);
    for (i, block) in blocks.iter().enumerate() {
        let task = source.take_task(i)?;
        let t = i as u64;
        let labels = augment_labels(
            state.model.as_ref(),
            state.seen_label_indices.len(),
            &task,
            &mut stream_rng(seed, STREAM_AUGMENT + t),
        )?;
        let before = state.model.clone();
        if i == 0 {
            adapt(&mut state, template, block, &mut init_rng)?;
        } else {
            adapt(&mut state, template, block, &mut stream_rng(seed, STREAM_ADAPT + t))?;
        }
        observer.after_adapt(i, before.as_ref(), state.model.as_ref().expect("model after adapt"))?;
        drop(before);
        train_task(
            &mut state,
            &task,
            &labels,
            loss_cfg,
            train_cfg,
            &mut stream_rng(seed, STREAM_TRAIN + t),
        )?;
        drop(task);
        observer.after_task(i, &state)?;
    }

    let model = state.model.as_ref().expect("at least one task ran");
    let predictions = forward_seeded(model, test_features, seed, STREAM_EVAL)?.labels;
    let ordered = test_labels.select_cols(&state.seen_label_indices);
    let mut positional = Vec::with_capacity(tasks);
    let mut start = 0;
    for b in &blocks {
        positional.push((start..start + b.len()).collect::<Vec<_>>());
        start += b.len();
    }
    let combined = (0..tasks)
        .map(|i| combined_evaluation(&ordered, &predictions, &positional, i))
        .collect::<Result<Vec<_>>>()?;
    Ok(SequenceResult {
        state,
        combined_macro_f1: combined,
        test_predictions: predictions,
        test_labels: ordered,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::losses::LossVariant;
    use crate::numerics::Matrix;

    fn template(input_dim: usize) -> DosaConfig {
        DosaConfig {
            input_dim,
            hidden_layers: vec![],
            num_labels: 1,
            timesteps: 5,
            seed: 0,
            plif: Default::default(),
        }
    }

    fn block(task_index: usize, n: usize, q: usize, salt: usize) -> TaskData {
        TaskData {
            task_index,
            features: Matrix::from_fn(n, 3, |r, c| ((r * 7 + c * 3 + salt) % 10) as f64 / 10.0),
            labels: Matrix::from_fn(n, q, |r, c| if (r + c + salt).is_multiple_of(3) { 1.0 } else { -1.0 }),
        }
    }

    #[test]
    fn first_task_augmentation_is_ground_truth() {
        let t = block(0, 4, 2, 0);
        let y = augment_labels(None, 0, &t, &mut stream_rng(0, 0)).unwrap();
        assert_eq!(y, t.labels);
    }

    #[test]
    fn zero_heads_augment_to_negative() {
        let mut state = SeaState::new();
        adapt(&mut state, &template(3), &[0, 1], &mut stream_rng(0, 0)).unwrap();
        let model = state.model.as_mut().unwrap();
        for head in [model.positive.weight, model.negative.weight] {
            let w = Matrix::zeros(3, 2);
            model.params.set_value(head, w).unwrap();
        }
        let t = block(1, 5, 1, 1);
        let y = augment_labels(state.model.as_ref(), 2, &t, &mut stream_rng(0, 0)).unwrap();
        assert_eq!(y.shape(), (5, 3));
        assert!(y.select_cols(&[0, 1]).as_slice().iter().all(|&v| v == -1.0));
        assert_eq!(y.select_cols(&[2]), t.labels);
        assert!(matches!(
            augment_labels(state.model.as_ref(), 3, &t, &mut stream_rng(0, 0)),
            Err(DosaError::State(_))
        ));
    }

    #[test]
    fn adapt_grows_heads_and_margin() {
        let mut state = SeaState::new();
        let mut rng = stream_rng(0, 0);
        let mut widths = Vec::new();
        for labels in [vec![0, 1, 2], vec![3, 4], vec![5, 6]] {
            adapt(&mut state, &template(3), &labels, &mut rng).unwrap();
            let m = state.model.as_ref().unwrap();
            assert_eq!(m.margin.len(&m.params), m.num_labels());
            widths.push(m.num_labels());
        }
        assert_eq!(widths, vec![3, 5, 7]);
        assert_eq!(state.seen_label_indices, (0..7).collect::<Vec<_>>());
    }

    #[test]
    fn zero_epochs_leave_state_unchanged() {
        let mut state = SeaState::new();
        adapt(&mut state, &template(3), &[0, 1], &mut stream_rng(0, 0)).unwrap();
        let before = state.model.clone();
        let t = block(0, 6, 2, 0);
        let cfg = TrainConfig {
            epochs: 0,
            ..Default::default()
        };
        train_task(&mut state, &t, &t.labels, &LossConfig::new(LossVariant::Fmm), &cfg, &mut stream_rng(0, 1)).unwrap();
        assert_eq!(state.model, before);
        assert!(state.logs[0].epochs.is_empty());
    }

    #[test]
    fn blocks_are_read_once() {
        let mut src = InMemoryTasks::new(vec![block(0, 4, 1, 0), block(1, 4, 1, 1)], vec![vec![0], vec![1]]).unwrap();
        src.take_task(0).unwrap();
        assert!(matches!(src.take_task(0), Err(DosaError::State(_))));
        assert!(!src.holds(0) && src.holds(1));
        assert_eq!(src.reads(), &[0]);
    }

    #[test]
    fn sequence_runs_and_is_deterministic() {
        let run = || {
            let mut src = InMemoryTasks::new(
                vec![block(0, 12, 2, 0), block(1, 12, 1, 1)],
                vec![vec![0, 1], vec![2]],
            )
            .unwrap();
            let test = block(0, 9, 3, 2);
            let cfg = TrainConfig {
                epochs: 3,
                ..Default::default()
            };
            let r = run_sequence(
                &mut src,
                &template(3),
                &LossConfig::new(LossVariant::Fmm),
                &cfg,
                4,
                &test.features,
                &test.labels,
                &mut (),
            )
            .unwrap();
            assert_eq!(src.reads(), &[0, 1]);
            r
        };
        let a = run();
        assert_eq!(a.combined_macro_f1.len(), 2);
        assert_eq!(a.state.logs.len(), 2);
        assert_eq!(a.state.logs[1].label_width, 3);
        assert_eq!(a, run());
    }
}
