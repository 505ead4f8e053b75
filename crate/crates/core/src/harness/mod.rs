//! Config-driven experiment runner: single-dataset training (MLL), task
//! sequences (CMLL), the two ablations, and report generation.

mod config;
mod plot;
mod report;

pub use config::{
    resolve_data_path, DatasetSection, ExperimentConfig, LossSection, Mode, ModelSection, TaskSection,
    DATA_DIR_ENV,
};
pub use plot::{bar_chart, line_chart, Series};
pub use report::{aggregate, collect_runs, cmd_report, spearman, summary_rows, AggregateRow, SummaryRow};

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::data::{
    label_blocks, load_dataset, prepare_split, split_train_tasks_with_blocks, train_test_split, validate_tasks,
    MultiLabelDataset, PreparedSplit, TaskCheck, TaskSpec,
};
use crate::error::{DosaError, Result};
use crate::losses::LossVariant;
use crate::metrics::{evaluate, MetricReport};
use crate::model::{forward_seeded, DosaConfig, DosaModel};
use crate::numerics::stream_rng;
use crate::sea::{run_sequence, train_model, InMemoryTasks, SeaState, SequenceObserver, TaskData, TaskLog, STREAM_EVAL};

pub const CODE_VERSION: &str = env!("CARGO_PKG_VERSION");
pub const RUN_FORMAT: &str = "dosa-run";

/// Everything one `(config, seed)` run produced.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub format: String,
    pub code_version: String,
    pub config_hash: String,
    pub seed: u64,
    pub dataset: String,
    pub mode: Mode,
    pub loss: LossVariant,
    /// Empty for a plain run; `layers=3`, `grad_through=true` and so on for
    /// ablation arms.
    pub variant: String,
    pub hidden_layers: Vec<usize>,
    pub grad_through_importance: bool,
    pub num_features: usize,
    pub num_train: usize,
    pub num_test: usize,
    /// Per-task epoch logs (a single entry for MLL).
    pub loss_trace: Vec<TaskLog>,
    /// Test-set metrics, columns in head order.
    pub report: MetricReport,
    pub label_names: Vec<String>,
    pub normalized_margins: Vec<f64>,
    /// Training positives per class divided by the total number of training
    /// positives, so the vector sums to 1.
    pub class_proportions: Vec<f64>,
    /// Dataset label ids per task (a single block for MLL).
    pub label_blocks: Vec<Vec<usize>>,
    /// Combined-mode macro F1 for tasks `0..=i` (CMLL only).
    pub combined_macro_f1: Vec<f64>,
    pub wall_clock_seconds: f64,
}

impl RunResult {
    /// The result with wall-clock zeroed, for reproducibility comparisons.
    pub fn without_timing(&self) -> Self {
        Self {
            wall_clock_seconds: 0.0,
            ..self.clone()
        }
    }

    pub fn metrics_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&self.report)?)
    }
}

/// Loads the configured dataset and returns the scaled train/test split for
/// `seed` (the seed only matters for single-file datasets).
pub fn load_split(cfg: &ExperimentConfig, seed: u64) -> Result<PreparedSplit> {
    let d = &cfg.dataset;
    let desc = d.descriptor();
    let (train, test) = match (&d.path, &d.train, &d.test) {
        (Some(p), _, _) => {
            let ds = load_dataset(&resolve_data_path(p), Some(&desc))?;
            let (tr, te) = train_test_split(&ds, d.train_fraction, seed)?;
            (ds.subset(&tr), ds.subset(&te))
        }
        (None, Some(tr), Some(te)) => (
            load_dataset(&resolve_data_path(tr), Some(&desc))?,
            load_dataset(&resolve_data_path(te), Some(&desc))?,
        ),
        _ => return Err(DosaError::Config("dataset paths are incomplete".into())),
    };
    prepare_split(train, test)
}

fn check_against_data(cfg: &ExperimentConfig, train: &MultiLabelDataset) -> Result<()> {
    if train.num_labels() != cfg.dataset.label_count {
        return Err(DosaError::Config(format!(
            "config declares {} labels, dataset '{}' has {}",
            cfg.dataset.label_count,
            train.name,
            train.num_labels()
        )));
    }
    if let (Mode::Cmll, Some(t)) = (cfg.mode, &cfg.tasks) {
        let need: usize = t.samples_per_task.iter().sum();
        if need > train.num_samples() {
            return Err(DosaError::Config(format!(
                "tasks need {need} training samples, split has {}",
                train.num_samples()
            )));
        }
    }
    Ok(())
}

fn model_config(cfg: &ExperimentConfig, input_dim: usize, num_labels: usize, seed: u64) -> DosaConfig {
    DosaConfig {
        input_dim,
        hidden_layers: cfg.model.hidden_layers.clone(),
        num_labels,
        timesteps: cfg.model.timesteps,
        seed,
        plif: cfg.model.plif,
    }
}

/// `support_k / Σ_j support_j` over training labels.
pub fn positive_share(labels: &crate::numerics::Matrix) -> Vec<f64> {
    let counts: Vec<f64> = (0..labels.cols())
        .map(|k| labels.column(k).iter().filter(|&&v| v > 0.0).count() as f64)
        .collect();
    let total: f64 = counts.iter().sum();
    counts
        .iter()
        .map(|&c| if total > 0.0 { c / total } else { 0.0 })
        .collect()
}

/// Trains and evaluates one MLL run on an already prepared split.
pub fn run_mll_on(cfg: &ExperimentConfig, split: &PreparedSplit, seed: u64, variant: &str) -> Result<RunResult> {
    let start = Instant::now();
    cfg.validate()?;
    check_against_data(cfg, &split.train)?;
    let mcfg = model_config(cfg, split.train.num_features(), split.train.num_labels(), seed);
    let mut model = DosaModel::init(mcfg, &mut stream_rng(seed, 1))?;
    let loss_cfg = cfg.loss.to_config();
    let epochs = train_model(
        &mut model,
        &split.train.features,
        &split.train.labels,
        &loss_cfg,
        &cfg.training,
        &mut stream_rng(seed, 200),
    )?;
    let pred = forward_seeded(&model, &split.test.features, seed, STREAM_EVAL)?;
    let report = evaluate(&split.test.labels, &pred.labels)?;
    Ok(RunResult {
        format: RUN_FORMAT.into(),
        code_version: CODE_VERSION.into(),
        config_hash: cfg.hash(),
        seed,
        dataset: cfg.dataset.name.clone(),
        mode: Mode::Mll,
        loss: cfg.loss.variant,
        variant: variant.into(),
        hidden_layers: cfg.model.hidden_layers.clone(),
        grad_through_importance: cfg.loss.grad_through_importance,
        num_features: split.train.num_features(),
        num_train: split.train.num_samples(),
        num_test: split.test.num_samples(),
        loss_trace: vec![TaskLog {
            task_index: 0,
            num_samples: split.train.num_samples(),
            label_width: split.train.num_labels(),
            epochs,
        }],
        report,
        label_names: split.train.label_names.clone(),
        normalized_margins: model.margin.normalized(&model.params)?,
        class_proportions: positive_share(&split.train.labels),
        label_blocks: vec![(0..split.train.num_labels()).collect()],
        combined_macro_f1: Vec::new(),
        wall_clock_seconds: start.elapsed().as_secs_f64(),
    })
}

pub fn run_mll(cfg: &ExperimentConfig, seed: u64) -> Result<RunResult> {
    cfg.validate()?;
    let split = load_split(cfg, seed)?;
    run_mll_on(cfg, &split, seed, "")
}

/// Task order, label blocks and outcome of one sequence run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SequenceManifest {
    pub format: String,
    pub code_version: String,
    pub config_hash: String,
    pub seed: u64,
    pub dataset: String,
    pub train_tasks: Vec<TaskSpec>,
    pub test_samples: usize,
    pub checkpoints: Vec<PathBuf>,
    pub combined_macro_f1: Vec<f64>,
    pub report: MetricReport,
}

struct CheckpointWriter {
    dir: Option<PathBuf>,
    seed: u64,
    config_hash: String,
    written: Vec<PathBuf>,
}

impl SequenceObserver for CheckpointWriter {
    fn after_task(&mut self, task: usize, state: &SeaState) -> Result<()> {
        let (Some(dir), Some(model)) = (&self.dir, &state.model) else {
            return Ok(());
        };
        let path = dir.join(format!("seed{}_task{task}.json", self.seed));
        model.save_checkpoint_tagged(&path, &[self.seed, task as u64], Some(&self.config_hash))?;
        self.written.push(path);
        Ok(())
    }
}

/// Builds the task blocks for a prepared split.
pub fn build_tasks(cfg: &ExperimentConfig, split: &PreparedSplit, seed: u64) -> Result<(Vec<TaskSpec>, Vec<Vec<usize>>)> {
    let t = cfg
        .tasks
        .as_ref()
        .ok_or_else(|| DosaError::Config("cmll mode needs a [tasks] section".into()))?;
    let blocks = label_blocks(split.train.num_labels(), &t.labels_per_task, t.label_shuffle_seed)?;
    let specs = split_train_tasks_with_blocks(split.train.num_samples(), &t.samples_per_task, &blocks, seed)?;
    let check = TaskCheck {
        num_labels: split.train.num_labels(),
        samples_per_task: Some(t.samples_per_task.clone()),
        labels_per_task: Some(t.labels_per_task.clone()),
        test_samples: None,
    };
    validate_tasks(&specs, &check).map_err(|v| DosaError::Config(format!("invalid task split: {v}")))?;
    Ok((specs, blocks))
}

/// Keeps only the first `Σ labels_per_task` label columns when the task
/// section opts into dropping the rest.
pub fn restrict_to_task_labels(cfg: &ExperimentConfig, split: PreparedSplit) -> PreparedSplit {
    let Some(t) = cfg.tasks.as_ref().filter(|t| t.drop_unassigned_labels) else {
        return split;
    };
    let keep: Vec<usize> = (0..t.total_labels().min(split.train.num_labels())).collect();
    let cut = |mut ds: MultiLabelDataset| {
        ds.labels = ds.labels.select_cols(&keep);
        ds.label_names = keep.iter().map(|&k| ds.label_names[k].clone()).collect();
        ds
    };
    PreparedSplit {
        train: cut(split.train),
        test: cut(split.test),
        scaler: split.scaler,
    }
}

/// Runs one SEA sequence on a prepared split. Per-task checkpoints go to
/// `checkpoint_dir` when given.
pub fn run_cmll_on(
    cfg: &ExperimentConfig,
    split: PreparedSplit,
    seed: u64,
    checkpoint_dir: Option<&Path>,
) -> Result<(RunResult, SequenceManifest)> {
    let start = Instant::now();
    cfg.validate()?;
    if cfg.mode != Mode::Cmll {
        return Err(DosaError::Config("run_cmll needs mode = \"cmll\"".into()));
    }
    check_against_data(cfg, &split.train)?;
    let split = restrict_to_task_labels(cfg, split);
    let (specs, blocks) = build_tasks(cfg, &split, seed)?;
    let num_features = split.train.num_features();
    let num_train = split.train.num_samples();
    let label_names = split.train.label_names.clone();
    let head_order: Vec<usize> = blocks.concat();
    let class_proportions = positive_share(&split.train.labels.select_cols(&head_order));

    let task_data: Vec<TaskData> = specs
        .iter()
        .map(|s| TaskData {
            task_index: s.task_index,
            features: split.train.features.select_rows(&s.sample_indices),
            labels: split.train.labels.select_rows(&s.sample_indices).select_cols(&s.label_indices),
        })
        .collect();
    let PreparedSplit { train, test, .. } = split;
    // the source owns the only copy of the training blocks from here on
    drop(train);
    let mut source = InMemoryTasks::new(task_data, blocks.clone())?;
    let mut writer = CheckpointWriter {
        dir: checkpoint_dir.map(Path::to_path_buf),
        seed,
        config_hash: cfg.hash(),
        written: Vec::new(),
    };
    if let Some(dir) = checkpoint_dir {
        std::fs::create_dir_all(dir).map_err(|e| DosaError::io(dir, e))?;
    }
    let template = model_config(cfg, num_features, 1, seed);
    let loss_cfg = cfg.loss.to_config();
    let seq = run_sequence(
        &mut source,
        &template,
        &loss_cfg,
        &cfg.training,
        seed,
        &test.features,
        &test.labels,
        &mut writer,
    )?;
    let model = seq.state.model.as_ref().expect("sequence ran");
    let report = evaluate(&seq.test_labels, &seq.test_predictions)?;
    let result = RunResult {
        format: RUN_FORMAT.into(),
        code_version: CODE_VERSION.into(),
        config_hash: cfg.hash(),
        seed,
        dataset: cfg.dataset.name.clone(),
        mode: Mode::Cmll,
        loss: cfg.loss.variant,
        variant: String::new(),
        hidden_layers: Vec::new(),
        grad_through_importance: cfg.loss.grad_through_importance,
        num_features,
        num_train,
        num_test: test.num_samples(),
        loss_trace: seq.state.logs.clone(),
        report: report.clone(),
        label_names: head_order.iter().map(|&k| label_names[k].clone()).collect(),
        normalized_margins: model.margin.normalized(&model.params)?,
        class_proportions,
        label_blocks: blocks,
        combined_macro_f1: seq.combined_macro_f1.clone(),
        wall_clock_seconds: start.elapsed().as_secs_f64(),
    };
    let manifest = SequenceManifest {
        format: "dosa-sequence".into(),
        code_version: CODE_VERSION.into(),
        config_hash: result.config_hash.clone(),
        seed,
        dataset: result.dataset.clone(),
        train_tasks: specs,
        test_samples: test.num_samples(),
        checkpoints: writer.written,
        combined_macro_f1: seq.combined_macro_f1,
        report,
    };
    Ok((result, manifest))
}

pub fn run_cmll(cfg: &ExperimentConfig, seed: u64, checkpoint_dir: Option<&Path>) -> Result<(RunResult, SequenceManifest)> {
    cfg.validate()?;
    let split = load_split(cfg, seed)?;
    run_cmll_on(cfg, split, seed, checkpoint_dir)
}

/// Runs `f` over `items` on scoped threads, preserving order.
pub fn par_map<T: Sync, R: Send>(items: &[T], f: impl Fn(&T) -> R + Sync) -> Vec<R> {
    let workers = std::thread::available_parallelism().map_or(1, |n| n.get()).max(1);
    let mut out = Vec::with_capacity(items.len());
    for chunk in items.chunks(workers) {
        let results: Vec<R> = std::thread::scope(|s| {
            let handles: Vec<_> = chunk.iter().map(|it| s.spawn(|| f(it))).collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("worker thread panicked"))
                .collect()
        });
        out.extend(results);
    }
    out
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| DosaError::io(parent, e))?;
    }
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text).map_err(|e| DosaError::io(path, e))
}

fn write_config_copy(cfg: &ExperimentConfig, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| DosaError::io(dir, e))?;
    let path = dir.join("config.toml");
    let text = format!(
        "# config_hash = {}\n# code_version = {CODE_VERSION}\n{}",
        cfg.hash(),
        cfg.to_toml()?
    );
    std::fs::write(&path, text).map_err(|e| DosaError::io(&path, e))
}

/// Where a config's results go: `<output_dir>/<short hash>`.
pub fn result_dir(cfg: &ExperimentConfig) -> PathBuf {
    cfg.output_dir.join(cfg.short_hash())
}

pub fn cmd_run_mll(cfg: &ExperimentConfig) -> Result<Vec<PathBuf>> {
    cfg.validate()?;
    if cfg.mode != Mode::Mll {
        return Err(DosaError::Config("run-mll needs mode = \"mll\"".into()));
    }
    let dir = result_dir(cfg);
    write_config_copy(cfg, &dir)?;
    let results = par_map(&cfg.seeds, |&seed| run_mll(cfg, seed));
    let mut paths = Vec::new();
    for r in results {
        let r = r?;
        let path = dir.join(format!("run_{}.json", r.seed));
        write_json(&path, &r)?;
        paths.push(path);
    }
    Ok(paths)
}

pub fn cmd_run_cmll(cfg: &ExperimentConfig) -> Result<Vec<PathBuf>> {
    cfg.validate()?;
    if cfg.mode != Mode::Cmll {
        return Err(DosaError::Config("run-cmll needs mode = \"cmll\"".into()));
    }
    let dir = result_dir(cfg);
    write_config_copy(cfg, &dir)?;
    let ckpt = dir.join("checkpoints");
    let results = par_map(&cfg.seeds, |&seed| run_cmll(cfg, seed, Some(&ckpt)));
    let mut paths = Vec::new();
    for r in results {
        let (r, manifest) = r?;
        let path = dir.join(format!("run_{}.json", r.seed));
        write_json(&path, &r)?;
        write_json(&dir.join(format!("sequence_{}.json", r.seed)), &manifest)?;
        paths.push(path);
    }
    Ok(paths)
}

/// Hidden-layer count sweep. Every arm uses the width of the configured first
/// hidden layer (20 when none is configured).
pub fn cmd_ablate_layers(cfg: &ExperimentConfig, layer_counts: &[usize]) -> Result<Vec<PathBuf>> {
    cfg.validate()?;
    if cfg.mode != Mode::Mll {
        return Err(DosaError::Config("ablate-layers needs mode = \"mll\"".into()));
    }
    if layer_counts.is_empty() {
        return Err(DosaError::Config("ablate-layers needs at least one layer count".into()));
    }
    let width = cfg.model.hidden_layers.first().copied().unwrap_or(20);
    let arms: Vec<(String, ExperimentConfig)> = layer_counts
        .iter()
        .map(|&l| {
            let mut c = cfg.clone();
            c.model.hidden_layers = vec![width; l];
            (format!("layers={l}"), c)
        })
        .collect();
    run_arms(cfg, &arms, "ablation_layers.csv")
}

/// Paired comparison of the importance factor with and without gradient flow.
pub fn cmd_ablate_gradflow(cfg: &ExperimentConfig) -> Result<Vec<PathBuf>> {
    cfg.validate()?;
    if cfg.mode != Mode::Mll {
        return Err(DosaError::Config("ablate-gradflow needs mode = \"mll\"".into()));
    }
    if cfg.loss.variant != LossVariant::Fmm {
        return Err(DosaError::Config("ablate-gradflow needs loss.variant = \"fmm\"".into()));
    }
    let arms: Vec<(String, ExperimentConfig)> = [true, false]
        .into_iter()
        .map(|on| {
            let mut c = cfg.clone();
            c.loss.grad_through_importance = on;
            (format!("grad_through={on}"), c)
        })
        .collect();
    run_arms(cfg, &arms, "ablation_gradflow.csv")
}

fn run_arms(base: &ExperimentConfig, arms: &[(String, ExperimentConfig)], table: &str) -> Result<Vec<PathBuf>> {
    for (_, c) in arms {
        c.validate()?;
    }
    let dir = result_dir(base);
    write_config_copy(base, &dir)?;
    let jobs: Vec<(usize, u64)> = (0..arms.len())
        .flat_map(|a| base.seeds.iter().map(move |&s| (a, s)))
        .collect();
    // one split per seed, shared by every arm so the comparison stays paired
    let splits = par_map(&base.seeds, |&seed| load_split(base, seed));
    let splits: Vec<PreparedSplit> = splits.into_iter().collect::<Result<_>>()?;
    let split_of = |seed: u64| &splits[base.seeds.iter().position(|&s| s == seed).expect("seed listed")];
    let results = par_map(&jobs, |&(a, seed)| {
        let (name, c) = &arms[a];
        run_mll_on(c, split_of(seed), seed, name)
    });
    let mut paths = Vec::new();
    let mut rows = Vec::new();
    for r in results {
        let r = r?;
        let path = dir.join(r.variant.replace('=', "_")).join(format!("run_{}.json", r.seed));
        write_json(&path, &r)?;
        paths.push(path);
        rows.push(r);
    }
    let table_path = dir.join(table);
    report::write_arm_table(&table_path, base, &rows)?;
    paths.push(table_path);
    Ok(paths)
}
