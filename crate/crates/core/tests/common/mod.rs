//! Fixtures shared by the integration test targets.
#![allow(dead_code)]

use std::path::PathBuf;

use dosa::data::{MultiLabelDataset, PreparedSplit, prepare_split};
use dosa::numerics::{stream_rng, Matrix};
use rand::Rng;

/// Metric values recomputed from scratch by iterating sample sets, without
/// touching the library's count structures.
#[derive(Debug, Clone, Copy)]
pub struct OracleScores {
    pub micro: f64,
    pub macro_: f64,
    pub weighted: f64,
    pub inverse_weighted: f64,
}

fn f1_from_sets(truth: &[usize], pred: &[usize]) -> f64 {
    let hit = truth.iter().filter(|i| pred.contains(i)).count() as f64;
    let precision = if pred.is_empty() { 0.0 } else { hit / pred.len() as f64 };
    let recall = if truth.is_empty() { 0.0 } else { hit / truth.len() as f64 };
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

pub fn oracle_scores(y_true: &Matrix, y_pred: &Matrix) -> OracleScores {
    let (n, r) = y_true.shape();
    let positives = |m: &Matrix, k: usize| -> Vec<usize> { (0..n).filter(|&i| m.get(i, k) == 1.0).collect() };
    let mut per_class = Vec::new();
    let mut share = Vec::new();
    let (mut tp, mut fp, mut fnn) = (0.0, 0.0, 0.0);
    for k in 0..r {
        let t = positives(y_true, k);
        let p = positives(y_pred, k);
        for i in 0..n {
            match (t.contains(&i), p.contains(&i)) {
                (true, true) => tp += 1.0,
                (false, true) => fp += 1.0,
                (true, false) => fnn += 1.0,
                _ => {}
            }
        }
        per_class.push(f1_from_sets(&t, &p));
        share.push(t.len() as f64 / n as f64);
    }
    let micro = if tp == 0.0 { 0.0 } else { 2.0 * tp / (2.0 * tp + fp + fnn) };
    let macro_ = per_class.iter().sum::<f64>() / r as f64;
    let total: f64 = share.iter().sum();
    let weighted = if total == 0.0 {
        0.0
    } else {
        per_class.iter().zip(&share).map(|(f, s)| f * s).sum::<f64>() / total
    };
    let present: Vec<(f64, f64)> = per_class
        .iter()
        .zip(&share)
        .filter(|(_, &s)| s > 0.0)
        .map(|(&f, &s)| (f, s))
        .collect();
    let inverse_weighted = if present.is_empty() {
        0.0
    } else {
        present.iter().map(|(f, s)| f / s).sum::<f64>() / present.iter().map(|(_, s)| 1.0 / s).sum::<f64>()
    };
    OracleScores {
        micro,
        macro_,
        weighted,
        inverse_weighted,
    }
}

pub fn random_bipolar<R: Rng>(rows: usize, cols: usize, p: f64, rng: &mut R) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| if rng.gen::<f64>() < p { 1.0 } else { -1.0 })
}

pub fn names(prefix: &str, n: usize) -> Vec<String> {
    (0..n).map(|i| format!("{prefix}{i}")).collect()
}

/// Two mutually exclusive classes, 95% / 5%, separated by a hyperplane on
/// uniform features with a gap around the boundary. Split 70/30 per class.
pub fn imbalanced_split(n: usize, m: usize, seed: u64) -> PreparedSplit {
    let mut rng = stream_rng(seed, 4242);
    let minority = (n as f64 * 0.05).round() as usize;
    let score = |x: &[f64]| x.iter().take(3).sum::<f64>() / 3.0;
    let mut rows: Vec<(Vec<f64>, bool)> = Vec::with_capacity(n);
    let (mut have_min, mut have_maj) = (0, 0);
    while rows.len() < n {
        let x: Vec<f64> = (0..m).map(|_| rng.gen::<f64>()).collect();
        let s = score(&x);
        if s > 0.72 && have_min < minority {
            rows.push((x, true));
            have_min += 1;
        } else if s < 0.62 && have_maj < n - minority {
            rows.push((x, false));
            have_maj += 1;
        }
    }
    let mut train = Vec::new();
    let mut test = Vec::new();
    for cls in [true, false] {
        let idx: Vec<usize> = (0..n).filter(|&i| rows[i].1 == cls).collect();
        let k = (idx.len() as f64 * 0.7).round() as usize;
        train.extend_from_slice(&idx[..k]);
        test.extend_from_slice(&idx[k..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    let features = Matrix::from_fn(n, m, |i, j| rows[i].0[j]);
    let labels = Matrix::from_fn(n, 2, |i, k| {
        let minority = rows[i].1;
        if (k == 1) == minority {
            1.0
        } else {
            -1.0
        }
    });
    let ds = MultiLabelDataset::new("imbalanced", features, labels, names("f", m), vec!["majority".into(), "minority".into()])
        .expect("valid synthetic set");
    prepare_split(ds.subset(&train), ds.subset(&test)).expect("split")
}

/// A small multi-label set where each label is a threshold on one feature,
/// with varying positive rates.
pub fn threshold_dataset(n: usize, m: usize, r: usize, seed: u64) -> MultiLabelDataset {
    let mut rng = stream_rng(seed, 77);
    let features = Matrix::from_fn(n, m, |_, _| rng.gen::<f64>());
    let labels = Matrix::from_fn(n, r, |i, k| {
        let cut = 0.3 + 0.5 * k as f64 / r.max(1) as f64;
        if features.get(i, k % m) > cut {
            1.0
        } else {
            -1.0
        }
    });
    MultiLabelDataset::new("threshold", features, labels, names("f", m), names("l", r)).expect("valid")
}

/// Root directory for real datasets, if configured.
pub fn data_root() -> Option<PathBuf> {
    std::env::var_os(dosa::harness::DATA_DIR_ENV).map(PathBuf::from)
}

pub fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}
