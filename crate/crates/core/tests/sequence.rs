mod common;

use dosa::data::{prepare_split, PreparedSplit};
use dosa::harness::{run_mll_on, ExperimentConfig};
use dosa::losses::{LossConfig, LossVariant};
use dosa::model::{forward_seeded, DosaConfig, DosaModel};
use dosa::numerics::{Matrix, stream_rng};
use dosa::sea::{
    adapt, augment_labels, run_sequence, InMemoryTasks, SeaState, SequenceObserver, TaskData, TaskSource, TrainConfig,
};
use dosa::Result;

fn split(seed: u64) -> PreparedSplit {
    let ds = common::threshold_dataset(90, 5, 6, seed);
    let train: Vec<usize> = (0..60).collect();
    let test: Vec<usize> = (60..90).collect();
    prepare_split(ds.subset(&train), ds.subset(&test)).unwrap()
}

fn template(input_dim: usize) -> DosaConfig {
    DosaConfig {
        input_dim,
        hidden_layers: vec![],
        num_labels: 1,
        timesteps: 6,
        seed: 0,
        plif: Default::default(),
    }
}

fn train_cfg() -> TrainConfig {
    TrainConfig {
        epochs: 8,
        ..TrainConfig::default()
    }
}

fn tasks(s: &PreparedSplit, blocks: &[Vec<usize>]) -> InMemoryTasks {
    let per = s.train.num_samples() / blocks.len();
    let data = blocks
        .iter()
        .enumerate()
        .map(|(i, b)| {
            let rows: Vec<usize> = (i * per..(i + 1) * per).collect();
            TaskData {
                task_index: i,
                features: s.train.features.select_rows(&rows),
                labels: s.train.labels.select_rows(&rows).select_cols(b),
            }
        })
        .collect();
    InMemoryTasks::new(data, blocks.to_vec()).unwrap()
}

#[derive(Default)]
struct Watch {
    probe: Option<Matrix>,
    preserved: Vec<bool>,
    widths: Vec<usize>,
}

impl SequenceObserver for Watch {
    fn after_adapt(&mut self, _task: usize, before: Option<&DosaModel>, after: &DosaModel) -> Result<()> {
        if let (Some(before), Some(x)) = (before, &self.probe) {
            let old: Vec<usize> = (0..before.num_labels()).collect();
            let a = forward_seeded(before, x, 11, 3)?;
            let b = forward_seeded(after, x, 11, 3)?;
            self.preserved.push(
                a.y_plus == b.y_plus.select_cols(&old) && a.y_minus == b.y_minus.select_cols(&old),
            );
        }
        Ok(())
    }

    fn after_task(&mut self, _task: usize, state: &SeaState) -> Result<()> {
        self.widths.push(state.seen_label_indices.len());
        Ok(())
    }
}

#[test]
fn sequence_reads_each_block_once_and_keeps_old_scores() {
    let s = split(1);
    let blocks = vec![vec![4, 1], vec![0, 5], vec![2, 3]];
    let mut source = tasks(&s, &blocks);
    let mut watch = Watch {
        probe: Some(s.test.features.clone()),
        ..Watch::default()
    };
    let out = run_sequence(
        &mut source,
        &template(5),
        &LossConfig::new(LossVariant::Fmm),
        &train_cfg(),
        2,
        &s.test.features,
        &s.test.labels,
        &mut watch,
    )
    .unwrap();
    assert_eq!(source.reads(), &[0, 1, 2]);
    assert!((0..3).all(|i| !source.holds(i)));
    assert!(source.take_task(1).is_err());
    assert_eq!(watch.preserved, vec![true, true]);
    assert_eq!(watch.widths, vec![2, 4, 6]);
    assert_eq!(out.state.seen_label_indices, vec![4, 1, 0, 5, 2, 3]);
    assert_eq!(out.test_labels, s.test.labels.select_cols(&[4, 1, 0, 5, 2, 3]));
    assert_eq!(out.combined_macro_f1.len(), 3);
    let m = out.state.model.as_ref().unwrap();
    assert_eq!(m.margin.len(&m.params), 6);
}

#[test]
fn augmented_targets_combine_old_predictions_with_new_truth() {
    let s = split(2);
    let mut state = SeaState::new();
    adapt(&mut state, &template(5), &[0, 1], &mut stream_rng(0, 1)).unwrap();
    let task = TaskData {
        task_index: 1,
        features: s.train.features.clone(),
        labels: s.train.labels.select_cols(&[2]),
    };
    let y = augment_labels(state.model.as_ref(), 2, &task, &mut stream_rng(0, 300)).unwrap();
    let old = state.model.as_ref().unwrap().forward(&task.features, &mut stream_rng(0, 300)).unwrap();
    assert_eq!(y.select_cols(&[0, 1]), old.labels);
    assert_eq!(y.select_cols(&[2]), task.labels);
    // seen count must agree with the previous model
    assert!(augment_labels(state.model.as_ref(), 3, &task, &mut stream_rng(0, 300)).is_err());
}

#[test]
fn single_task_sequence_matches_plain_training() {
    let s = split(3);
    let cfg = ExperimentConfig::from_toml(
        r#"
mode = "mll"
[dataset]
name = "threshold"
path = "unused"
label_count = 6
[model]
hidden_layers = []
timesteps = 6
[loss]
variant = "fmm"
[training]
epochs = 8
"#,
    )
    .unwrap();
    let mll = run_mll_on(&cfg, &s, 5, "").unwrap();
    let all: Vec<usize> = (0..6).collect();
    let mut source = InMemoryTasks::new(
        vec![TaskData {
            task_index: 0,
            features: s.train.features.clone(),
            labels: s.train.labels.clone(),
        }],
        vec![all],
    )
    .unwrap();
    let mut t = template(5);
    t.seed = 5;
    let seq = run_sequence(
        &mut source,
        &t,
        &LossConfig::new(LossVariant::Fmm),
        &cfg.training,
        5,
        &s.test.features,
        &s.test.labels,
        &mut (),
    )
    .unwrap();
    assert_eq!(seq.state.logs[0].epochs, mll.loss_trace[0].epochs);
    assert_eq!(seq.combined_macro_f1[0], mll.report.macro_);
}
