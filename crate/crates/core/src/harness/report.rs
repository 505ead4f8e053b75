//! Aggregation of run results into CSV tables and SVG plots.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use super::plot::{bar_chart, line_chart, Series};
use super::{ExperimentConfig, Mode, RunResult, CODE_VERSION, RUN_FORMAT};
use crate::error::{DosaError, Result};

/// One line of `summary.csv`.
#[derive(Clone, Debug, PartialEq)]
pub struct SummaryRow {
    pub dataset: String,
    pub loss: String,
    pub seed: u64,
    pub metric: String,
    pub value: f64,
    pub config_hash: String,
}

/// One line of `aggregate.csv`.
#[derive(Clone, Debug, PartialEq)]
pub struct AggregateRow {
    pub dataset: String,
    pub loss: String,
    pub metric: String,
    pub mean: f64,
    /// Sample standard deviation (0 for a single value).
    pub std: f64,
    pub count: usize,
}

fn find_run_files(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    let entries = std::fs::read_dir(dir).map_err(|e| DosaError::io(dir, e))?;
    for entry in entries {
        let entry = entry.map_err(|e| DosaError::io(dir, e))?;
        let path = entry.path();
        if path.is_dir() {
            find_run_files(&path, out)?;
        } else if path
            .file_name()
            .and_then(|n| n.to_str())
            .is_some_and(|n| n.starts_with("run_") && n.ends_with(".json"))
        {
            out.push(path);
        }
    }
    Ok(())
}

/// Every `run_*.json` below `dir`, sorted by dataset, mode, loss, variant,
/// seed and hash so that downstream numbers do not depend on discovery order.
pub fn collect_runs(dir: &Path) -> Result<Vec<RunResult>> {
    let mut files = Vec::new();
    find_run_files(dir, &mut files)?;
    let mut runs = Vec::with_capacity(files.len());
    for f in files {
        let text = std::fs::read_to_string(&f).map_err(|e| DosaError::io(&f, e))?;
        let run: RunResult = serde_json::from_str(&text)?;
        if run.format != RUN_FORMAT {
            continue;
        }
        runs.push(run);
    }
    sort_runs(&mut runs);
    Ok(runs)
}

fn run_key(r: &RunResult) -> (String, String, String, String, u64, String) {
    (
        r.dataset.clone(),
        format!("{:?}", r.mode),
        r.loss.to_string(),
        r.variant.clone(),
        r.seed,
        r.config_hash.clone(),
    )
}

fn sort_runs(runs: &mut [RunResult]) {
    runs.sort_by_key(run_key);
}

fn metric_name(variant: &str, metric: &str) -> String {
    if variant.is_empty() {
        metric.to_string()
    } else {
        format!("{variant}/{metric}")
    }
}

pub fn summary_rows(runs: &[RunResult]) -> Vec<SummaryRow> {
    let mut sorted = runs.to_vec();
    sort_runs(&mut sorted);
    let mut rows = Vec::new();
    for r in &sorted {
        let mut push = |metric: &str, value: f64| {
            rows.push(SummaryRow {
                dataset: r.dataset.clone(),
                loss: r.loss.to_string(),
                seed: r.seed,
                metric: metric_name(&r.variant, metric),
                value,
                config_hash: r.config_hash.clone(),
            })
        };
        push("micro_f1", r.report.micro);
        push("macro_f1", r.report.macro_);
        push("weighted_f1", r.report.weighted);
        push("inverse_weighted_f1", r.report.inverse_weighted);
        push("most_imbalanced_f1", r.report.most_imbalanced_f1);
        for (i, v) in r.combined_macro_f1.iter().enumerate() {
            push(&format!("combined_macro_f1_task{}", i + 1), *v);
        }
        if let Some(rho) = spearman(&r.normalized_margins, &r.class_proportions) {
            push("margin_proportion_spearman", rho);
        }
    }
    rows
}

type GroupKey = (String, String, String);

/// Mean, sample std and count per `(dataset, loss, metric)`.
pub fn aggregate(rows: &[SummaryRow]) -> Vec<AggregateRow> {
    let mut groups: BTreeMap<GroupKey, Vec<(u64, String, f64)>> = BTreeMap::new();
    for r in rows {
        groups
            .entry((r.dataset.clone(), r.loss.clone(), r.metric.clone()))
            .or_default()
            .push((r.seed, r.config_hash.clone(), r.value));
    }
    groups
        .into_iter()
        .map(|((dataset, loss, metric), mut vals)| {
            // fixed summation order regardless of input order
            vals.sort_by(|a, b| (a.0, &a.1).cmp(&(b.0, &b.1)).then(a.2.total_cmp(&b.2)));
            let n = vals.len();
            let mean = vals.iter().map(|v| v.2).sum::<f64>() / n as f64;
            let std = if n > 1 {
                (vals.iter().map(|v| (v.2 - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
            } else {
                0.0
            };
            AggregateRow {
                dataset,
                loss,
                metric,
                mean,
                std,
                count: n,
            }
        })
        .collect()
}

/// Spearman rank correlation with average ranks for ties. `None` when the
/// lengths differ, there are fewer than two points, or a side is constant.
pub fn spearman(a: &[f64], b: &[f64]) -> Option<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return None;
    }
    let ra = ranks(a);
    let rb = ranks(b);
    let n = a.len() as f64;
    let ma = ra.iter().sum::<f64>() / n;
    let mb = rb.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in ra.iter().zip(&rb) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma).powi(2);
        sbb += (y - mb).powi(2);
    }
    if saa == 0.0 || sbb == 0.0 {
        return None;
    }
    Some(sab / (saa * sbb).sqrt())
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&i, &j| v[i].total_cmp(&v[j]));
    let mut out = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            out[k] = avg;
        }
        i = j + 1;
    }
    out
}

fn hashes(runs: &[&RunResult]) -> String {
    let set: BTreeSet<&str> = runs.iter().map(|r| r.config_hash.as_str()).collect();
    set.into_iter().collect::<Vec<_>>().join(";")
}

fn meta(runs: &[&RunResult]) -> String {
    format!("config_hash={} code_version={CODE_VERSION}", hashes(runs))
}

fn csv_err(path: &Path, e: csv::Error) -> DosaError {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => DosaError::io(path, io),
        other => DosaError::Parse {
            line: 0,
            message: format!("{other:?}"),
        },
    }
}

fn write_summary(path: &Path, rows: &[SummaryRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record(["dataset", "loss", "seed", "metric", "value", "config_hash", "code_version"])?;
    for r in rows {
        w.write_record([
            r.dataset.as_str(),
            r.loss.as_str(),
            &r.seed.to_string(),
            r.metric.as_str(),
            &r.value.to_string(),
            r.config_hash.as_str(),
            CODE_VERSION,
        ])?;
    }
    w.flush().map_err(|e| DosaError::io(path, e))
}

fn write_aggregate(path: &Path, rows: &[AggregateRow], runs: &[RunResult]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record(["dataset", "loss", "metric", "mean", "std", "count", "config_hash", "code_version"])?;
    for r in rows {
        let group: Vec<&RunResult> = runs
            .iter()
            .filter(|x| x.dataset == r.dataset && x.loss.to_string() == r.loss)
            .collect();
        w.write_record([
            r.dataset.as_str(),
            r.loss.as_str(),
            r.metric.as_str(),
            &r.mean.to_string(),
            &r.std.to_string(),
            &r.count.to_string(),
            &hashes(&group),
            CODE_VERSION,
        ])?;
    }
    w.flush().map_err(|e| DosaError::io(path, e))
}

/// Side-by-side table of ablation arms: mean of each F1 over seeds.
pub(crate) fn write_arm_table(path: &Path, base: &ExperimentConfig, runs: &[RunResult]) -> Result<()> {
    let mut arms: BTreeMap<String, Vec<&RunResult>> = BTreeMap::new();
    for r in runs {
        arms.entry(r.variant.clone()).or_default().push(r);
    }
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record([
        "dataset",
        "loss",
        "arm",
        "micro_f1",
        "macro_f1",
        "weighted_f1",
        "inverse_weighted_f1",
        "count",
        "config_hash",
        "code_version",
    ])?;
    let mut ordered: Vec<(&String, &Vec<&RunResult>)> = arms.iter().collect();
    // numeric order for layer counts
    ordered.sort_by_key(|(k, _)| arm_order(k));
    for (arm, rs) in ordered {
        let mut rs = rs.clone();
        rs.sort_by_key(|r| r.seed);
        let n = rs.len() as f64;
        let mean = |f: fn(&RunResult) -> f64| rs.iter().map(|r| f(r)).sum::<f64>() / n;
        w.write_record([
            base.dataset.name.clone(),
            base.loss.variant.to_string(),
            arm.clone(),
            mean(|r| r.report.micro).to_string(),
            mean(|r| r.report.macro_).to_string(),
            mean(|r| r.report.weighted).to_string(),
            mean(|r| r.report.inverse_weighted).to_string(),
            rs.len().to_string(),
            base.hash(),
            CODE_VERSION.to_string(),
        ])?;
    }
    w.flush().map_err(|e| DosaError::io(path, e))
}

fn arm_order(arm: &str) -> (String, u64, String) {
    match arm.split_once('=') {
        Some((k, v)) => (k.to_string(), v.parse().unwrap_or(u64::MAX), v.to_string()),
        None => (arm.to_string(), 0, String::new()),
    }
}

fn mean_vec(vs: &[&[f64]]) -> Vec<f64> {
    let len = vs.iter().map(|v| v.len()).min().unwrap_or(0);
    (0..len)
        .map(|i| vs.iter().map(|v| v[i]).sum::<f64>() / vs.len() as f64)
        .collect()
}

fn write_svg(dir: &Path, name: &str, svg: String, written: &mut Vec<PathBuf>) -> Result<()> {
    let safe: String = name
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect();
    let path = dir.join(format!("{safe}.svg"));
    std::fs::write(&path, svg).map_err(|e| DosaError::io(&path, e))?;
    written.push(path);
    Ok(())
}

fn plots(runs: &[RunResult], dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| DosaError::io(dir, e))?;
    let mut written = Vec::new();
    let datasets: BTreeSet<&str> = runs.iter().map(|r| r.dataset.as_str()).collect();
    for ds in datasets {
        let of = |pred: &dyn Fn(&RunResult) -> bool| -> Vec<&RunResult> {
            runs.iter().filter(|r| r.dataset == ds && pred(r)).collect()
        };

        // per-task combined F1, one series per loss
        let cmll = of(&|r| r.mode == Mode::Cmll);
        if !cmll.is_empty() {
            let mut series = Vec::new();
            let mut tasks = 0;
            for loss in cmll.iter().map(|r| r.loss).collect::<BTreeSet<_>>() {
                let vs: Vec<&[f64]> = cmll
                    .iter()
                    .filter(|r| r.loss == loss)
                    .map(|r| r.combined_macro_f1.as_slice())
                    .collect();
                let m = mean_vec(&vs);
                tasks = tasks.max(m.len());
                series.push(Series::new(format!("L_{loss}"), m));
            }
            let cats: Vec<String> = (1..=tasks).map(|i| format!("task {i}")).collect();
            let svg = bar_chart(
                &format!("{ds}: combined-mode macro F1 per task"),
                &cats,
                &series,
                "macro F1",
                &meta(&cmll),
            );
            write_svg(dir, &format!("{ds}_cmll_tasks"), svg, &mut written)?;
        }

        // layer ablation
        let layer_runs = of(&|r| r.variant.starts_with("layers="));
        for loss in layer_runs.iter().map(|r| r.loss).collect::<BTreeSet<_>>() {
            let rs: Vec<&RunResult> = layer_runs.iter().copied().filter(|r| r.loss == loss).collect();
            let counts: BTreeSet<usize> = rs.iter().map(|r| r.hidden_layers.len()).collect();
            let xs: Vec<f64> = counts.iter().map(|&c| c as f64).collect();
            let metric = |f: fn(&RunResult) -> f64| -> Vec<f64> {
                counts
                    .iter()
                    .map(|&c| {
                        let v: Vec<f64> = rs.iter().filter(|r| r.hidden_layers.len() == c).map(|r| f(r)).collect();
                        v.iter().sum::<f64>() / v.len() as f64
                    })
                    .collect()
            };
            let series = vec![
                Series::new("micro", metric(|r| r.report.micro)),
                Series::new("macro", metric(|r| r.report.macro_)),
                Series::new("weighted", metric(|r| r.report.weighted)),
                Series::new("inverse weighted", metric(|r| r.report.inverse_weighted)),
            ];
            let svg = line_chart(
                &format!("{ds}: F1 vs number of hidden layers (L_{loss})"),
                &xs,
                &series,
                "hidden layers",
                "F1",
                &meta(&rs),
            );
            write_svg(dir, &format!("{ds}_{loss}_layers"), svg, &mut written)?;
        }

        // gradient-flow ablation
        let grad = of(&|r| r.variant.starts_with("grad_through="));
        if !grad.is_empty() {
            let cats = vec!["micro".to_string(), "macro".to_string(), "weighted".to_string()];
            let mut series = Vec::new();
            for on in [true, false] {
                let rs: Vec<&RunResult> = grad.iter().copied().filter(|r| r.grad_through_importance == on).collect();
                if rs.is_empty() {
                    continue;
                }
                let n = rs.len() as f64;
                let vals = vec![
                    rs.iter().map(|r| r.report.micro).sum::<f64>() / n,
                    rs.iter().map(|r| r.report.macro_).sum::<f64>() / n,
                    rs.iter().map(|r| r.report.weighted).sum::<f64>() / n,
                ];
                series.push(Series::new(if on { "with grad" } else { "without grad" }, vals));
            }
            let svg = bar_chart(
                &format!("{ds}: gradient through the importance factor"),
                &cats,
                &series,
                "F1",
                &meta(&grad),
            );
            write_svg(dir, &format!("{ds}_gradflow"), svg, &mut written)?;
        }

        // plain MLL runs: metric bars per loss, and margin/proportion pairs
        let mll = of(&|r| r.mode == Mode::Mll && r.variant.is_empty());
        if !mll.is_empty() {
            let cats: Vec<String> = ["micro", "macro", "weighted", "inverse weighted"]
                .iter()
                .map(|s| s.to_string())
                .collect();
            let mut series = Vec::new();
            for loss in mll.iter().map(|r| r.loss).collect::<BTreeSet<_>>() {
                let rs: Vec<&RunResult> = mll.iter().copied().filter(|r| r.loss == loss).collect();
                let n = rs.len() as f64;
                series.push(Series::new(
                    format!("L_{loss}"),
                    vec![
                        rs.iter().map(|r| r.report.micro).sum::<f64>() / n,
                        rs.iter().map(|r| r.report.macro_).sum::<f64>() / n,
                        rs.iter().map(|r| r.report.weighted).sum::<f64>() / n,
                        rs.iter().map(|r| r.report.inverse_weighted).sum::<f64>() / n,
                    ],
                ));
                let margins: Vec<&[f64]> = rs.iter().map(|r| r.normalized_margins.as_slice()).collect();
                let props: Vec<&[f64]> = rs.iter().map(|r| r.class_proportions.as_slice()).collect();
                let labels: Vec<String> = rs[0].label_names.clone();
                let svg = bar_chart(
                    &format!("{ds}: normalized margin vs sample proportion (L_{loss})"),
                    &labels,
                    &[
                        Series::new("normalized margin b_k", mean_vec(&margins)),
                        Series::new("sample proportion p_k", mean_vec(&props)),
                    ],
                    "share",
                    &meta(&rs),
                );
                write_svg(dir, &format!("{ds}_{loss}_margins"), svg, &mut written)?;
            }
            let svg = bar_chart(&format!("{ds}: test F1"), &cats, &series, "F1", &meta(&mll));
            write_svg(dir, &format!("{ds}_mll_metrics"), svg, &mut written)?;
        }
    }
    Ok(written)
}

/// Reads every run below `dir` and writes `summary.csv`, `aggregate.csv` and
/// `plots/*.svg` into `dir`. Returns the written paths.
pub fn cmd_report(dir: &Path) -> Result<Vec<PathBuf>> {
    if !dir.is_dir() {
        return Err(DosaError::NothingToReport(dir.to_path_buf()));
    }
    let runs = collect_runs(dir)?;
    if runs.is_empty() {
        return Err(DosaError::NothingToReport(dir.to_path_buf()));
    }
    let rows = summary_rows(&runs);
    let agg = aggregate(&rows);
    let summary = dir.join("summary.csv");
    write_summary(&summary, &rows)?;
    let aggregate_path = dir.join("aggregate.csv");
    write_aggregate(&aggregate_path, &agg, &runs)?;
    let mut written = vec![summary, aggregate_path];
    written.extend(plots(&runs, &dir.join("plots"))?);
    Ok(written)
}
