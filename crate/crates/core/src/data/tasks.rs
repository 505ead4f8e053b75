//! Task-sequence construction for continual multi-label learning.

use std::collections::BTreeMap;
use std::fmt;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{DosaError, Result};
use crate::numerics::stream_rng;

/// One task: the samples it owns and the labels it introduces.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub task_index: usize,
    pub sample_indices: Vec<usize>,
    pub label_indices: Vec<usize>,
}

/// Partitions `0..num_labels` into contiguous blocks of the given sizes, in
/// column order, or in a seed-shuffled order when `shuffle_seed` is set.
pub fn label_blocks(num_labels: usize, labels_per_task: &[usize], shuffle_seed: Option<u64>) -> Result<Vec<Vec<usize>>> {
    check_counts("labels", labels_per_task, num_labels, true)?;
    let mut order: Vec<usize> = (0..num_labels).collect();
    if let Some(seed) = shuffle_seed {
        order.shuffle(&mut stream_rng(seed, 0x1abe1));
    }
    let mut out = Vec::with_capacity(labels_per_task.len());
    let mut start = 0;
    for &k in labels_per_task {
        out.push(order[start..start + k].to_vec());
        start += k;
    }
    Ok(out)
}

fn check_counts(what: &str, counts: &[usize], available: usize, exact: bool) -> Result<()> {
    if counts.is_empty() {
        return Err(DosaError::Config(format!("{what} per task is empty")));
    }
    if let Some(t) = counts.iter().position(|&c| c == 0) {
        return Err(DosaError::Config(format!("task {t} has zero {what}")));
    }
    let total: usize = counts.iter().sum();
    if total > available || (exact && total != available) {
        return Err(DosaError::Config(format!(
            "{what} per task {counts:?} sum to {total}, but {available} are available"
        )));
    }
    Ok(())
}

/// Shuffles the training rows with `seed`, then hands out contiguous disjoint
/// sample blocks and the label blocks in order.
pub fn split_train_tasks(
    num_train: usize,
    num_labels: usize,
    samples_per_task: &[usize],
    labels_per_task: &[usize],
    seed: u64,
) -> Result<Vec<TaskSpec>> {
    let blocks = label_blocks(num_labels, labels_per_task, None)?;
    split_train_tasks_with_blocks(num_train, samples_per_task, &blocks, seed)
}

pub fn split_train_tasks_with_blocks(
    num_train: usize,
    samples_per_task: &[usize],
    label_blocks: &[Vec<usize>],
    seed: u64,
) -> Result<Vec<TaskSpec>> {
    check_counts("samples", samples_per_task, num_train, false)?;
    if samples_per_task.len() != label_blocks.len() {
        return Err(DosaError::Config(format!(
            "{} sample blocks but {} label blocks",
            samples_per_task.len(),
            label_blocks.len()
        )));
    }
    let mut order: Vec<usize> = (0..num_train).collect();
    order.shuffle(&mut stream_rng(seed, 0x7a5c));
    let mut start = 0;
    Ok(samples_per_task
        .iter()
        .zip(label_blocks)
        .enumerate()
        .map(|(t, (&k, labels))| {
            let mut samples = order[start..start + k].to_vec();
            samples.sort_unstable();
            start += k;
            TaskSpec {
                task_index: t,
                sample_indices: samples,
                label_indices: labels.clone(),
            }
        })
        .collect())
}

/// Every test task keeps all test samples; only the labels are distributed.
pub fn split_test_tasks(num_test: usize, num_labels: usize, labels_per_task: &[usize]) -> Result<Vec<TaskSpec>> {
    let blocks = label_blocks(num_labels, labels_per_task, None)?;
    Ok(split_test_tasks_with_blocks(num_test, &blocks))
}

pub fn split_test_tasks_with_blocks(num_test: usize, label_blocks: &[Vec<usize>]) -> Vec<TaskSpec> {
    let all: Vec<usize> = (0..num_test).collect();
    label_blocks
        .iter()
        .enumerate()
        .map(|(t, labels)| TaskSpec {
            task_index: t,
            sample_indices: all.clone(),
            label_indices: labels.clone(),
        })
        .collect()
}

/// What `validate_tasks` should hold the tasks against.
#[derive(Clone, Debug, Default)]
pub struct TaskCheck {
    pub num_labels: usize,
    /// Expected per-task sample counts, if known.
    pub samples_per_task: Option<Vec<usize>>,
    pub labels_per_task: Option<Vec<usize>>,
    /// Train tasks must have disjoint samples; test tasks must all equal
    /// `0..num_test`.
    pub test_samples: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum TaskViolation {
    Empty,
    IndexOrder { task: usize, found: usize },
    SharedSample { sample: usize, first: usize, second: usize },
    SharedLabel { label: usize, first: usize, second: usize },
    LabelOutOfRange { task: usize, label: usize },
    MissingLabel { label: usize },
    SampleCount { task: usize, expected: usize, found: usize },
    LabelCount { task: usize, expected: usize, found: usize },
    IncompleteTestTask { task: usize },
}

impl fmt::Display for TaskViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Empty => write!(f, "no tasks"),
            Self::IndexOrder { task, found } => write!(f, "task at position {task} has task_index {found}"),
            Self::SharedSample { sample, first, second } => {
                write!(f, "sample {sample} appears in tasks {first} and {second}")
            }
            Self::SharedLabel { label, first, second } => {
                write!(f, "label {label} appears in tasks {first} and {second}")
            }
            Self::LabelOutOfRange { task, label } => write!(f, "task {task} names label {label} out of range"),
            Self::MissingLabel { label } => write!(f, "label {label} is not covered by any task"),
            Self::SampleCount { task, expected, found } => {
                write!(f, "task {task} has {found} samples, expected {expected}")
            }
            Self::LabelCount { task, expected, found } => {
                write!(f, "task {task} has {found} labels, expected {expected}")
            }
            Self::IncompleteTestTask { task } => write!(f, "test task {task} does not hold every test sample"),
        }
    }
}

/// Returns the first violation found, or `Ok(())`.
pub fn validate_tasks(tasks: &[TaskSpec], check: &TaskCheck) -> std::result::Result<(), TaskViolation> {
    if tasks.is_empty() {
        return Err(TaskViolation::Empty);
    }
    let mut label_owner: BTreeMap<usize, usize> = BTreeMap::new();
    let mut sample_owner: BTreeMap<usize, usize> = BTreeMap::new();
    for (pos, t) in tasks.iter().enumerate() {
        if t.task_index != pos {
            return Err(TaskViolation::IndexOrder {
                task: pos,
                found: t.task_index,
            });
        }
        for &l in &t.label_indices {
            if l >= check.num_labels {
                return Err(TaskViolation::LabelOutOfRange { task: pos, label: l });
            }
            if let Some(&first) = label_owner.get(&l) {
                return Err(TaskViolation::SharedLabel {
                    label: l,
                    first,
                    second: pos,
                });
            }
            label_owner.insert(l, pos);
        }
        match check.test_samples {
            Some(n) => {
                let full = t.sample_indices.len() == n && t.sample_indices.iter().enumerate().all(|(i, &s)| i == s);
                if !full {
                    return Err(TaskViolation::IncompleteTestTask { task: pos });
                }
            }
            None => {
                for &s in &t.sample_indices {
                    if let Some(&first) = sample_owner.get(&s) {
                        return Err(TaskViolation::SharedSample {
                            sample: s,
                            first,
                            second: pos,
                        });
                    }
                    sample_owner.insert(s, pos);
                }
            }
        }
        if let Some(expected) = check.samples_per_task.as_ref().and_then(|v| v.get(pos)) {
            if *expected != t.sample_indices.len() {
                return Err(TaskViolation::SampleCount {
                    task: pos,
                    expected: *expected,
                    found: t.sample_indices.len(),
                });
            }
        }
        if let Some(expected) = check.labels_per_task.as_ref().and_then(|v| v.get(pos)) {
            if *expected != t.label_indices.len() {
                return Err(TaskViolation::LabelCount {
                    task: pos,
                    expected: *expected,
                    found: t.label_indices.len(),
                });
            }
        }
    }
    if let Some(label) = (0..check.num_labels).find(|l| !label_owner.contains_key(l)) {
        return Err(TaskViolation::MissingLabel { label });
    }
    Ok(())
}
