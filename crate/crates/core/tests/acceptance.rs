//! Acceptance suite. Prints one line per criterion:
//!
//! ```text
//! [PASS] C1 gradient check ...
//! [BLOCKED] C5 ... (dataset files not found)
//! ```
//!
//! Criteria that need the public multi-label datasets look for them under
//! `$DOSA_DATA_DIR` (file names as in `configs/*.toml`) and report BLOCKED
//! when they are missing. BLOCKED does not fail the process unless
//! `DOSA_ACCEPTANCE_STRICT=1` is set; FAIL always does.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::time::{Duration, Instant};

use common::{median, oracle_scores, random_bipolar};
use dosa::data::{prepare_split, PreparedSplit};
use dosa::harness::{
    build_tasks, cmd_run_cmll, cmd_run_mll, par_map, resolve_data_path, run_cmll, run_cmll_on, run_mll,
    run_mll_on, spearman, ExperimentConfig, RunResult,
};
use dosa::losses::{loss_fmm, loss_mm, LossConfig, LossVariant, MmReduction, DEFAULT_CLAMP_FLOOR};
use dosa::metrics::{class_counts, evaluate, inverse_weighted_f1, macro_f1};
use dosa::model::{forward_seeded, DosaModel};
use dosa::numerics::{gradient_check, stream_rng, Matrix, ParamStore, Tape};
use dosa::sea::{run_sequence, InMemoryTasks, SeaState, SequenceObserver, TaskData, TaskSource};
use dosa::spiking::{AccumulatorHead, PlifConfig, PlifLayer};
use dosa::{DosaError, Result};
use rand::Rng;

// Pinned tolerances and budgets.
const GRAD_TOL: f64 = 1e-4;
const GRAD_STEP: f64 = 1e-4;
const GRAD_POINTS: u64 = 10;
const LOSS_REL_TOL: f64 = 1e-9;
const METRIC_TOL: f64 = 1e-12;
const METRIC_INSTANCES: u64 = 200;
const SEEDS: [u64; 5] = [0, 1, 2, 3, 4];
const C4_BUDGET: Duration = Duration::from_secs(120);
const C5_BUDGET: Duration = Duration::from_secs(300);
const C5_MACRO_FLOOR: f64 = 0.35;
const C8_BUDGET: Duration = Duration::from_secs(600);

type Criterion = (&'static str, &'static str, fn() -> Outcome);

enum Status {
    Pass,
    Fail,
    Blocked,
}

struct Outcome {
    status: Status,
    detail: String,
}

fn pass(detail: impl Into<String>) -> Outcome {
    Outcome {
        status: Status::Pass,
        detail: detail.into(),
    }
}

fn fail(detail: impl Into<String>) -> Outcome {
    Outcome {
        status: Status::Fail,
        detail: detail.into(),
    }
}

fn blocked(detail: impl Into<String>) -> Outcome {
    Outcome {
        status: Status::Blocked,
        detail: detail.into(),
    }
}

fn verdict(ok: bool, detail: String) -> Outcome {
    if ok {
        pass(detail)
    } else {
        fail(detail)
    }
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
}

fn random_matrix<R: Rng>(rows: usize, cols: usize, lo: f64, hi: f64, rng: &mut R) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.gen_range(lo..hi))
}

fn spikes<R: Rng>(t: usize, rows: usize, cols: usize, rng: &mut R) -> Vec<Matrix> {
    (0..t)
        .map(|_| Matrix::from_fn(rows, cols, |_, _| if rng.gen::<f64>() < 0.5 { 1.0 } else { 0.0 }))
        .collect()
}

// C1 ---------------------------------------------------------------------

fn grad_dense(seed: u64) -> Result<f64> {
    let mut rng = stream_rng(seed, 11);
    let mut store = ParamStore::new();
    let layer = PlifLayer::init(&mut store, "dense", 4, 3, PlifConfig::default(), &mut rng);
    let bias = random_matrix(1, 3, -0.5, 0.5, &mut rng);
    store.set_value(layer.bias, bias)?;
    store.get_mut(layer.tau_raw).trainable = false;
    let x = random_matrix(5, 4, -1.0, 1.0, &mut rng);
    let c = random_matrix(5, 3, -1.0, 1.0, &mut rng);
    let f = |t: &mut Tape, s: &ParamStore| -> Result<_> {
        let vars = layer.load(t, s);
        let xv = t.constant(x.clone());
        let i = layer.input_current(t, &vars, xv)?;
        let y = t.tanh(i);
        let cv = t.constant(c.clone());
        let w = t.mul(y, cv)?;
        Ok(t.sum(w))
    };
    dosa::numerics::finite_difference_check(&mut store, GRAD_STEP, f)
}

fn grad_readout(seed: u64) -> Result<f64> {
    let mut rng = stream_rng(seed, 12);
    let mut store = ParamStore::new();
    let head = AccumulatorHead::init(&mut store, "head", 4, 3, &mut rng);
    store.set_value(head.bias, random_matrix(1, 3, -0.3, 0.3, &mut rng))?;
    let train = spikes(6, 5, 4, &mut rng);
    let c = random_matrix(5, 3, -1.0, 1.0, &mut rng);
    let f = |t: &mut Tape, s: &ParamStore| -> Result<_> {
        let xs: Vec<_> = train.iter().map(|m| t.constant(m.clone())).collect();
        let y = head.forward(t, s, &xs)?;
        let cv = t.constant(c.clone());
        let w = t.mul(y, cv)?;
        Ok(t.sum(w))
    };
    dosa::numerics::finite_difference_check(&mut store, GRAD_STEP, f)
}

fn grad_mm(seed: u64) -> Result<f64> {
    let mut rng = stream_rng(seed, 13);
    let mut store = ParamStore::new();
    let yp = store.add("y_plus", random_matrix(4, 3, -0.9, 0.9, &mut rng), true);
    let ym = store.add("y_minus", random_matrix(4, 3, -0.9, 0.9, &mut rng), true);
    let b = store.add("margin", random_matrix(1, 3, 0.5, 1.5, &mut rng), true);
    let y = random_bipolar(4, 3, 0.5, &mut rng);
    let f = |t: &mut Tape, s: &ParamStore| -> Result<_> {
        let p = t.param(s, yp);
        let m = t.param(s, ym);
        let z = dosa::losses::zeta(t, &y, p, m)?;
        let bv = t.param(s, b);
        Ok(loss_mm(t, z, bv, MmReduction::PerSample)?.value)
    };
    dosa::numerics::finite_difference_check(&mut store, GRAD_STEP, f)
}

fn grad_fmm_frozen(seed: u64) -> Result<f64> {
    let mut rng = stream_rng(seed, 14);
    let mut store = ParamStore::new();
    let yp = store.add("y_plus", random_matrix(4, 3, -0.9, 0.9, &mut rng), true);
    let ym = store.add("y_minus", random_matrix(4, 3, -0.9, 0.9, &mut rng), true);
    let b = store.add("margin", random_matrix(1, 3, 0.5, 1.5, &mut rng), true);
    let y = random_bipolar(4, 3, 0.5, &mut rng);
    let cfg = LossConfig::new(LossVariant::Fmm);
    let diff = |s: &ParamStore| -> Vec<f64> {
        let (p, m, bb) = (s.value(yp), s.value(ym), s.value(b));
        (0..4)
            .flat_map(|i| (0..3).map(move |k| (i, k)))
            .map(|(i, k)| y.get(i, k) * (p.get(i, k) - m.get(i, k)) - bb.get(0, k))
            .collect()
    };
    // importance factor frozen at the evaluation point
    let factor: Vec<f64> = diff(&store)
        .iter()
        .map(|d| (-d).exp().max(DEFAULT_CLAMP_FLOOR))
        .collect();
    gradient_check(
        &mut store,
        GRAD_STEP,
        |t, s| {
            let p = t.param(s, yp);
            let m = t.param(s, ym);
            let z = dosa::losses::zeta(t, &y, p, m)?;
            let bv = t.param(s, b);
            Ok(loss_fmm(t, z, bv, &cfg)?.value)
        },
        |s| Ok(diff(s).iter().zip(&factor).map(|(d, f)| f * d * d).sum()),
    )
}

fn c1() -> Outcome {
    type Check = (&'static str, fn(u64) -> Result<f64>);
    let checks: [Check; 4] = [
        ("dense", grad_dense),
        ("readout", grad_readout),
        ("L_mm", grad_mm),
        ("L_fmm(frozen)", grad_fmm_frozen),
    ];
    let mut parts = Vec::new();
    let mut ok = true;
    for (name, f) in checks {
        let mut worst: f64 = 0.0;
        for seed in 0..GRAD_POINTS {
            match f(seed) {
                Ok(e) => worst = worst.max(e),
                Err(e) => return fail(format!("{name} seed {seed}: {e}")),
            }
        }
        ok &= worst < GRAD_TOL;
        parts.push(format!("{name} {worst:.2e}"));
    }
    verdict(
        ok,
        format!("max rel err over {GRAD_POINTS} points (< {GRAD_TOL:e}): {}", parts.join(", ")),
    )
}

// C2 ---------------------------------------------------------------------

fn scalar_loss(zeta: &[f64], b: &[f64], variant: LossVariant) -> f64 {
    let mut t = Tape::new();
    let z = t.constant(Matrix::row_vector(zeta.to_vec()));
    let m = t.constant(Matrix::row_vector(b.to_vec()));
    let l = match variant {
        LossVariant::Mm => loss_mm(&mut t, z, m, MmReduction::PerSample).unwrap(),
        LossVariant::Fmm => loss_fmm(&mut t, z, m, &LossConfig::new(LossVariant::Fmm)).unwrap(),
    };
    t.scalar_value(l.value).unwrap()
}

fn c2() -> Outcome {
    let e = std::f64::consts::E;
    let cases = [
        ("mm zeta=0 b=1", scalar_loss(&[0.0], &[1.0], LossVariant::Mm), e),
        ("mm zeta=(0,2) b=(1,1)", scalar_loss(&[0.0, 2.0], &[1.0, 1.0], LossVariant::Mm), e * e),
        ("fmm d=-1", scalar_loss(&[0.0], &[1.0], LossVariant::Fmm), e),
        ("fmm d=+1", scalar_loss(&[2.0], &[1.0], LossVariant::Fmm), 1.0 / e),
        ("fmm d=+8 clamp", scalar_loss(&[9.0], &[1.0], LossVariant::Fmm), 0.064),
    ];
    let mut worst: f64 = 0.0;
    for (_, got, want) in &cases {
        worst = worst.max(rel(*got, *want));
    }
    let at_margin = scalar_loss(&[0.3, -0.7, 1.0], &[0.3, -0.7, 1.0], LossVariant::Fmm);
    verdict(
        worst < LOSS_REL_TOL && at_margin == 0.0,
        format!(
            "{} values, worst rel err {worst:.1e} (< {LOSS_REL_TOL:e}); L_fmm(zeta=b) = {at_margin}",
            cases.len()
        ),
    )
}

// C3 ---------------------------------------------------------------------

fn c3() -> Outcome {
    let mut worst: f64 = 0.0;
    for inst in 0..METRIC_INSTANCES {
        let mut rng = stream_rng(inst, 31);
        let n = rng.gen_range(1..=20);
        let r = rng.gen_range(1..=5);
        let p_true = rng.gen_range(0.05..0.95);
        let p_pred = rng.gen_range(0.05..0.95);
        let y = random_bipolar(n, r, p_true, &mut rng);
        let yh = random_bipolar(n, r, p_pred, &mut rng);
        let rep = evaluate(&y, &yh).unwrap();
        let o = oracle_scores(&y, &yh);
        for (a, b) in [
            (rep.micro, o.micro),
            (rep.macro_, o.macro_),
            (rep.weighted, o.weighted),
            (rep.inverse_weighted, o.inverse_weighted),
        ] {
            worst = worst.max((a - b).abs());
        }
    }
    // equal supports: every class has exactly 4 positives out of 10
    let mut eq_worst: f64 = 0.0;
    for seed in 0..20 {
        let mut rng = stream_rng(seed, 32);
        let y = Matrix::from_fn(10, 4, |i, k| if (i + 3 * k) % 10 < 4 { 1.0 } else { -1.0 });
        let yh = random_bipolar(10, 4, 0.5, &mut rng);
        let c = class_counts(&y, &yh).unwrap();
        eq_worst = eq_worst.max((inverse_weighted_f1(&c) - macro_f1(&c)).abs());
    }
    verdict(
        worst <= METRIC_TOL && eq_worst <= METRIC_TOL,
        format!(
            "{METRIC_INSTANCES} instances, max |lib - oracle| = {worst:.1e}; |F_iw - macro| at equal n_k = {eq_worst:.1e} (<= {METRIC_TOL:e})"
        ),
    )
}

// C4 ---------------------------------------------------------------------

fn synthetic_config(variant: LossVariant) -> ExperimentConfig {
    let mut c = ExperimentConfig::from_toml(
        r#"
mode = "mll"
[dataset]
name = "imbalanced"
path = "in-memory"
label_count = 2
[model]
hidden_layers = [5, 5]
[loss]
variant = "fmm"
[training]
epochs = 100
lr = 0.001
batch_size = 32
"#,
    )
    .expect("synthetic config");
    c.loss.variant = variant;
    c
}

fn c4() -> Outcome {
    let start = Instant::now();
    let splits: Vec<PreparedSplit> = SEEDS.iter().map(|&s| common::imbalanced_split(500, 10, s)).collect();
    let minority = splits[0].train.positive_rates()[1];
    let mut medians = Vec::new();
    for v in [LossVariant::Mm, LossVariant::Fmm] {
        let cfg = synthetic_config(v);
        let runs = par_map(&SEEDS, |&s| run_mll_on(&cfg, &splits[s as usize], s, ""));
        let iw: Result<Vec<f64>> = runs.into_iter().map(|r| r.map(|r| r.report.inverse_weighted)).collect();
        match iw {
            Ok(v) => medians.push(median(v)),
            Err(e) => return fail(e.to_string()),
        }
    }
    let elapsed = start.elapsed();
    verdict(
        medians[1] > medians[0] && elapsed < C4_BUDGET,
        format!(
            "minority rate {minority:.3}; median F_iw fmm={:.4} vs mm={:.4}; {:.1}s (< {}s)",
            medians[1],
            medians[0],
            elapsed.as_secs_f64(),
            C4_BUDGET.as_secs()
        ),
    )
}

// dataset-backed helpers -------------------------------------------------

fn preset(name: &str) -> ExperimentConfig {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(format!("{name}.toml"));
    ExperimentConfig::load(&path).unwrap_or_else(|e| panic!("preset {name}: {e}"))
}

/// `None` when every file of the preset exists under the data root.
fn missing_data(cfg: &ExperimentConfig) -> Option<String> {
    if common::data_root().is_none() {
        return Some(format!("{} not set", dosa::harness::DATA_DIR_ENV));
    }
    let d = &cfg.dataset;
    let files: Vec<&PathBuf> = [&d.path, &d.train, &d.test].into_iter().flatten().collect();
    let missing: Vec<String> = files
        .iter()
        .map(|p| resolve_data_path(p))
        .filter(|p| !p.exists())
        .map(|p| p.display().to_string())
        .collect();
    (!missing.is_empty()).then(|| format!("missing {}", missing.join(", ")))
}

fn with_loss(cfg: &ExperimentConfig, v: LossVariant) -> ExperimentConfig {
    let mut c = cfg.clone();
    c.loss.variant = v;
    c
}

fn mll_runs(cfg: &ExperimentConfig) -> Result<Vec<RunResult>> {
    par_map(&SEEDS, |&s| run_mll(cfg, s)).into_iter().collect()
}

// C5 ---------------------------------------------------------------------

fn c5() -> Outcome {
    let base = preset("flags_mll");
    if let Some(why) = missing_data(&base) {
        return blocked(format!("Flags: {why}"));
    }
    let start = Instant::now();
    let mut med = Vec::new();
    for v in [LossVariant::Mm, LossVariant::Fmm] {
        match mll_runs(&with_loss(&base, v)) {
            Ok(rs) => med.push(median(rs.iter().map(|r| r.report.macro_).collect())),
            Err(e) => return fail(e.to_string()),
        }
    }
    let elapsed = start.elapsed();
    verdict(
        med[1] > med[0] && med[1] >= C5_MACRO_FLOOR && elapsed < C5_BUDGET,
        format!(
            "median macro F1 fmm={:.4} vs mm={:.4} (floor {C5_MACRO_FLOOR}); {:.1}s",
            med[1],
            med[0],
            elapsed.as_secs_f64()
        ),
    )
}

// C6 ---------------------------------------------------------------------

fn c6() -> Outcome {
    let mut parts = Vec::new();
    let mut ok = true;
    let mut missing = Vec::new();
    for name in ["flags_mll", "foodtruck_mll"] {
        let base = preset(name);
        if let Some(why) = missing_data(&base) {
            missing.push(format!("{}: {why}", base.dataset.name));
            continue;
        }
        let mut med = Vec::new();
        for through in [false, true] {
            let mut c = base.clone();
            c.loss.grad_through_importance = through;
            match mll_runs(&c) {
                Ok(rs) => med.push(median(rs.iter().map(|r| r.report.micro).collect())),
                Err(e) => return fail(e.to_string()),
            }
        }
        ok &= med[0] > med[1];
        parts.push(format!("{}: stopped {:.4} vs through {:.4}", base.dataset.name, med[0], med[1]));
    }
    if !missing.is_empty() {
        return blocked(format!("{} {}", missing.join("; "), parts.join("; ")));
    }
    verdict(ok, format!("median micro F1 {}", parts.join("; ")))
}

// C7 ---------------------------------------------------------------------

struct ProbeObserver {
    probe: Matrix,
    seed: u64,
    blocks: Vec<Vec<usize>>,
    mismatches: Vec<String>,
    checked: usize,
}

impl SequenceObserver for ProbeObserver {
    fn after_adapt(&mut self, task: usize, before: Option<&DosaModel>, after: &DosaModel) -> Result<()> {
        let Some(before) = before else {
            return Ok(());
        };
        let old = before.num_labels();
        let a = forward_seeded(before, &self.probe, self.seed, 7)?;
        let b = forward_seeded(after, &self.probe, self.seed, 7)?;
        let cols: Vec<usize> = (0..old).collect();
        let same = |x: &Matrix, y: &Matrix| {
            x.select_cols(&cols)
                .as_slice()
                .iter()
                .zip(y.select_cols(&cols).as_slice())
                .all(|(p, q)| p.to_bits() == q.to_bits())
        };
        if !same(&a.y_plus, &b.y_plus) || !same(&a.y_minus, &b.y_minus) {
            self.mismatches.push(format!("task {task}"));
        }
        self.checked += 1;
        Ok(())
    }

    fn after_task(&mut self, task: usize, state: &SeaState) -> Result<()> {
        let expect: Vec<usize> = self.blocks[..=task].concat();
        if state.seen_label_indices != expect || state.logs[task].label_width != expect.len() {
            self.mismatches.push(format!("labels after task {task}"));
        }
        Ok(())
    }
}

fn flags_like_split(seed: u64) -> PreparedSplit {
    let ds = common::threshold_dataset(194, 19, 7, seed);
    let train: Vec<usize> = (0..129).collect();
    let test: Vec<usize> = (129..194).collect();
    prepare_split(ds.subset(&train), ds.subset(&test)).expect("split")
}

fn c7() -> Outcome {
    let cfg = preset("flags_cmll");
    let (source_name, real) = match missing_data(&cfg) {
        None => ("Flags", true),
        Some(_) => ("Flags-shaped synthetic stand-in (real Flags not available)", false),
    };
    let seed = 0;
    let split = if real {
        match dosa::harness::load_split(&cfg, seed) {
            Ok(s) => s,
            Err(e) => return fail(e.to_string()),
        }
    } else {
        flags_like_split(seed)
    };
    let inner = || -> Result<(Vec<usize>, ProbeObserver, bool)> {
        let (specs, blocks) = build_tasks(&cfg, &split, seed)?;
        let data: Vec<TaskData> = specs
            .iter()
            .map(|s| TaskData {
                task_index: s.task_index,
                features: split.train.features.select_rows(&s.sample_indices),
                labels: split.train.labels.select_rows(&s.sample_indices).select_cols(&s.label_indices),
            })
            .collect();
        let mut source = InMemoryTasks::new(data, blocks.clone())?;
        let probe_rows: Vec<usize> = (0..16.min(split.test.num_samples())).collect();
        let mut obs = ProbeObserver {
            probe: split.test.features.select_rows(&probe_rows),
            seed,
            blocks: blocks.clone(),
            mismatches: Vec::new(),
            checked: 0,
        };
        let template = dosa::model::DosaConfig {
            input_dim: split.train.num_features(),
            hidden_layers: vec![],
            num_labels: 1,
            timesteps: cfg.model.timesteps,
            seed,
            plif: cfg.model.plif,
        };
        run_sequence(
            &mut source,
            &template,
            &cfg.loss.to_config(),
            &cfg.training,
            seed,
            &split.test.features,
            &split.test.labels,
            &mut obs,
        )?;
        let reread_refused = matches!(source.take_task(0), Err(DosaError::State(_)));
        Ok((source.reads().to_vec(), obs, reread_refused))
    };
    match inner() {
        Err(e) => fail(e.to_string()),
        Ok((reads, obs, refused)) => {
            let once = reads == (0..cfg.tasks.as_ref().unwrap().samples_per_task.len()).collect::<Vec<_>>();
            verdict(
                obs.mismatches.is_empty() && once && refused && obs.checked == 2,
                format!(
                    "{source_name}: {} adapts with bit-identical old-class scores, mismatches {:?}; block reads {reads:?}, re-read refused: {refused}",
                    obs.checked, obs.mismatches
                ),
            )
        }
    }
}

// C8 ---------------------------------------------------------------------

fn c8() -> Outcome {
    let start = Instant::now();
    let mut parts = Vec::new();
    let mut ok = true;
    let mut missing = Vec::new();
    for (name, strict) in [("flags_cmll", false), ("virus_cmll", true)] {
        let base = preset(name);
        if let Some(why) = missing_data(&base) {
            missing.push(format!("{}: {why}", base.dataset.name));
            continue;
        }
        let mut per_loss = Vec::new();
        for v in [LossVariant::Mm, LossVariant::Fmm] {
            let cfg = with_loss(&base, v);
            let runs: Result<Vec<_>> = par_map(&SEEDS, |&s| run_cmll(&cfg, s, None)).into_iter().collect();
            let runs = match runs {
                Ok(r) => r,
                Err(e) => return fail(e.to_string()),
            };
            let tasks = runs[0].0.combined_macro_f1.len();
            let med: Vec<f64> = (0..tasks)
                .map(|i| median(runs.iter().map(|(r, _)| r.combined_macro_f1[i]).collect()))
                .collect();
            per_loss.push(med);
        }
        let (mm, fmm) = (&per_loss[0], &per_loss[1]);
        let good = fmm
            .iter()
            .zip(mm)
            .all(|(f, m)| if strict { f > m } else { f >= m });
        ok &= good;
        parts.push(format!(
            "{}: fmm {:?} vs mm {:?}",
            base.dataset.name,
            fmm.iter().map(|v| format!("{v:.3}")).collect::<Vec<_>>(),
            mm.iter().map(|v| format!("{v:.3}")).collect::<Vec<_>>()
        ));
    }
    if !missing.is_empty() {
        return blocked(format!("{} {}", missing.join("; "), parts.join("; ")));
    }
    let elapsed = start.elapsed();
    verdict(
        ok && elapsed < C8_BUDGET,
        format!("median combined macro F1 per task {}; {:.1}s", parts.join("; "), elapsed.as_secs_f64()),
    )
}

// C9 ---------------------------------------------------------------------

fn c9() -> Outcome {
    let base = with_loss(&preset("flags_mll"), LossVariant::Fmm);
    if let Some(why) = missing_data(&base) {
        return blocked(format!("Flags: {why}"));
    }
    match mll_runs(&base) {
        Err(e) => fail(e.to_string()),
        Ok(rs) => {
            let rhos: Vec<f64> = rs
                .iter()
                .map(|r| spearman(&r.normalized_margins, &r.class_proportions).unwrap_or(f64::NAN))
                .collect();
            if rhos.iter().any(|r| r.is_nan()) {
                return fail(format!("undefined rank correlation in {rhos:?}"));
            }
            let m = median(rhos.clone());
            verdict(m < 0.0, format!("median Spearman(b_k, p_k) = {m:.3} over {rhos:.3?}"))
        }
    }
}

// C10 --------------------------------------------------------------------

fn c10() -> Outcome {
    let inner = || -> Result<String> {
        let dir = tempfile::tempdir().map_err(|e| DosaError::io("tempdir", e))?;
        let ds = common::threshold_dataset(120, 6, 4, 9);
        let csv = dosa::data::write_normalized(&ds, dir.path())?;
        let mut notes = Vec::new();
        for (mode, extra) in [
            ("mll", "[model]\nhidden_layers = [6]\n[training]\nepochs = 15\nbatch_size = 32\n"),
            (
                "cmll",
                "[training]\nepochs = 15\n[tasks]\nsamples_per_task = [40, 40]\nlabels_per_task = [2, 2]\n",
            ),
        ] {
            let text = format!(
                "mode = \"{mode}\"\nseeds = [3]\n[dataset]\nname = \"threshold\"\npath = \"{}\"\nlabel_count = 4\n[loss]\nvariant = \"fmm\"\n{extra}",
                csv.display()
            );
            let mut cfg = ExperimentConfig::from_toml(&text)?;
            let mut outputs = Vec::new();
            for k in 0..2 {
                cfg.output_dir = dir.path().join(format!("out{k}"));
                let paths = if mode == "mll" { cmd_run_mll(&cfg)? } else { cmd_run_cmll(&cfg)? };
                let text = std::fs::read_to_string(&paths[0]).map_err(|e| DosaError::io(&paths[0], e))?;
                let run: RunResult = serde_json::from_str(&text)?;
                outputs.push((run.metrics_json()?, serde_json::to_string(&run.without_timing())?));
            }
            if outputs[0] != outputs[1] {
                return Err(DosaError::State(format!("{mode} replay differs")));
            }
            // in-process replay matches the file too
            let again = if mode == "mll" {
                run_mll(&cfg, 3)?
            } else {
                let split = dosa::harness::load_split(&cfg, 3)?;
                run_cmll_on(&cfg, split, 3, None)?.0
            };
            if again.metrics_json()? != outputs[0].0 {
                return Err(DosaError::State(format!("{mode} in-process replay differs")));
            }
            notes.push(format!("{mode} metric JSON {} bytes identical x3", outputs[0].0.len()));
        }
        Ok(notes.join("; "))
    };
    match inner() {
        Ok(d) => pass(d),
        Err(e) => fail(e.to_string()),
    }
}

fn main() {
    let criteria: [Criterion; 10] = [
        ("C1", "gradient correctness", c1),
        ("C2", "loss unit values", c2),
        ("C3", "metric oracle equivalence", c3),
        ("C4", "focal imbalance property", c4),
        ("C5", "Flags MLL direction", c5),
        ("C6", "gradient-flow ablation direction", c6),
        ("C7", "sequence invariants", c7),
        ("C8", "CMLL direction", c8),
        ("C9", "margin-imbalance correlation", c9),
        ("C10", "determinism", c10),
    ];
    let strict = std::env::var("DOSA_ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");
    let (mut passed, mut failed, mut blocked_n) = (0, 0, 0);
    for (id, name, f) in criteria {
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            fail(format!("panicked: {msg}"))
        });
        let tag = match outcome.status {
            Status::Pass => {
                passed += 1;
                "PASS"
            }
            Status::Fail => {
                failed += 1;
                "FAIL"
            }
            Status::Blocked => {
                blocked_n += 1;
                "BLOCKED"
            }
        };
        println!("[{tag}] {id} {name}: {}", outcome.detail);
    }
    println!("acceptance: {passed} passed, {failed} failed, {blocked_n} blocked");
    if failed > 0 || (strict && blocked_n > 0) {
        std::process::exit(1);
    }
}
