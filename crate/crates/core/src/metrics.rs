//! Per-class F1 and its micro, macro, support-weighted (`F_w`) and
//! inverse-support-weighted (`F_iw`) averages over bipolar label matrices.
//! `+1` is the positive class everywhere.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{DosaError, Result};
use crate::losses::check_bipolar;
use crate::numerics::Matrix;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ClassCounts {
    pub tp: Vec<u64>,
    pub fp: Vec<u64>,
    pub fn_: Vec<u64>,
    /// Samples whose true label for the class is `+1`.
    pub support: Vec<u64>,
    pub total_samples: usize,
}

impl ClassCounts {
    pub fn num_classes(&self) -> usize {
        self.tp.len()
    }

    /// `n_k`: share of all samples that are positive for class `k`.
    pub fn proportions(&self) -> Vec<f64> {
        let n = self.total_samples.max(1) as f64;
        self.support.iter().map(|&s| s as f64 / n).collect()
    }

    pub fn restrict(&self, classes: &[usize]) -> ClassCounts {
        ClassCounts {
            tp: classes.iter().map(|&k| self.tp[k]).collect(),
            fp: classes.iter().map(|&k| self.fp[k]).collect(),
            fn_: classes.iter().map(|&k| self.fn_[k]).collect(),
            support: classes.iter().map(|&k| self.support[k]).collect(),
            total_samples: self.total_samples,
        }
    }
}

pub fn class_counts(y_true: &Matrix, y_pred: &Matrix) -> Result<ClassCounts> {
    y_true.check_same_shape(y_pred, "class_counts")?;
    check_bipolar(y_true)?;
    check_bipolar(y_pred)?;
    let r = y_true.cols();
    let mut c = ClassCounts {
        tp: vec![0; r],
        fp: vec![0; r],
        fn_: vec![0; r],
        support: vec![0; r],
        total_samples: y_true.rows(),
    };
    for i in 0..y_true.rows() {
        for k in 0..r {
            let t = y_true.get(i, k) > 0.0;
            let p = y_pred.get(i, k) > 0.0;
            match (t, p) {
                (true, true) => c.tp[k] += 1,
                (false, true) => c.fp[k] += 1,
                (true, false) => c.fn_[k] += 1,
                (false, false) => {}
            }
            if t {
                c.support[k] += 1;
            }
        }
    }
    Ok(c)
}

fn f1(tp: u64, fp: u64, fn_: u64) -> f64 {
    let denom = 2 * tp + fp + fn_;
    if denom == 0 {
        0.0
    } else {
        (2 * tp) as f64 / denom as f64
    }
}

/// `2tp / (2tp + fp + fn)`, zero when the denominator is zero.
pub fn f1_per_class(c: &ClassCounts) -> Vec<f64> {
    (0..c.num_classes())
        .map(|k| f1(c.tp[k], c.fp[k], c.fn_[k]))
        .collect()
}

/// F1 of the counts pooled over classes.
pub fn micro_f1(c: &ClassCounts) -> f64 {
    f1(c.tp.iter().sum(), c.fp.iter().sum(), c.fn_.iter().sum())
}

pub fn macro_f1(c: &ClassCounts) -> f64 {
    let f = f1_per_class(c);
    if f.is_empty() {
        0.0
    } else {
        f.iter().sum::<f64>() / f.len() as f64
    }
}

/// `Σ n_k F_k / Σ n_k`; zero if every weight is zero.
pub fn weighted_average(f: &[f64], n: &[f64]) -> f64 {
    let total: f64 = n.iter().sum();
    if total <= 0.0 {
        return 0.0;
    }
    f.iter().zip(n).map(|(f, n)| f * n).sum::<f64>() / total
}

/// `(Σ F_k / n_k) / (Σ 1 / n_k)` over classes with `n_k > 0`; zero if none.
pub fn inverse_weighted_average(f: &[f64], n: &[f64]) -> f64 {
    let (num, den) = f
        .iter()
        .zip(n)
        .filter(|(_, &n)| n > 0.0)
        .fold((0.0, 0.0), |(num, den), (f, n)| (num + f / n, den + 1.0 / n));
    if den > 0.0 {
        num / den
    } else {
        0.0
    }
}

/// Support-weighted F1, normalised by `Σ n_k`.
pub fn weighted_f1(c: &ClassCounts) -> f64 {
    weighted_average(&f1_per_class(c), &c.proportions())
}

/// Support-weighted F1 without normalisation: `Σ n_k F_k`.
pub fn weighted_f1_raw(c: &ClassCounts) -> f64 {
    f1_per_class(c)
        .iter()
        .zip(c.proportions())
        .map(|(f, n)| f * n)
        .sum()
}

pub fn inverse_weighted_f1(c: &ClassCounts) -> f64 {
    inverse_weighted_average(&f1_per_class(c), &c.proportions())
}

/// Class with the fewest positive samples; lowest index wins ties.
pub fn most_imbalanced_class(c: &ClassCounts) -> Option<usize> {
    c.support
        .iter()
        .enumerate()
        .min_by_key(|&(k, &s)| (s, k))
        .map(|(k, _)| k)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub per_class_f1: Vec<f64>,
    pub micro: f64,
    #[serde(rename = "macro")]
    pub macro_: f64,
    pub weighted: f64,
    pub weighted_raw: f64,
    pub inverse_weighted: f64,
    pub most_imbalanced_class: usize,
    pub most_imbalanced_f1: f64,
    pub counts: ClassCounts,
    pub proportions: Vec<f64>,
    pub notes: Vec<String>,
}

impl MetricReport {
    pub fn from_counts(counts: ClassCounts) -> Self {
        let per_class_f1 = f1_per_class(&counts);
        let proportions = counts.proportions();
        let mut notes = Vec::new();
        for k in 0..counts.num_classes() {
            if 2 * counts.tp[k] + counts.fp[k] + counts.fn_[k] == 0 {
                notes.push(format!("class {k}: no positives predicted or present, F1 set to 0"));
            }
            if counts.support[k] == 0 {
                notes.push(format!("class {k}: zero support, excluded from inverse-weighted F1"));
            }
        }
        if counts.support.iter().all(|&s| s == 0) {
            notes.push("no positive labels in split: weighted and inverse-weighted F1 set to 0".into());
        }
        let most = most_imbalanced_class(&counts).unwrap_or(0);
        Self {
            micro: micro_f1(&counts),
            macro_: macro_f1(&counts),
            weighted: weighted_f1(&counts),
            weighted_raw: weighted_f1_raw(&counts),
            inverse_weighted: inverse_weighted_f1(&counts),
            most_imbalanced_class: most,
            most_imbalanced_f1: per_class_f1.get(most).copied().unwrap_or(0.0),
            per_class_f1,
            proportions,
            counts,
            notes,
        }
    }

    /// Per-class table as CSV: `class,label,support,proportion,tp,fp,fn,f1`.
    pub fn write_class_csv<W: Write>(&self, out: W, label_names: Option<&[String]>) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["class", "label", "support", "proportion", "tp", "fp", "fn", "f1"])?;
        for k in 0..self.per_class_f1.len() {
            let name = label_names
                .and_then(|n| n.get(k).cloned())
                .unwrap_or_else(|| format!("label{k}"));
            w.write_record([
                k.to_string(),
                name,
                self.counts.support[k].to_string(),
                self.proportions[k].to_string(),
                self.counts.tp[k].to_string(),
                self.counts.fp[k].to_string(),
                self.counts.fn_[k].to_string(),
                self.per_class_f1[k].to_string(),
            ])?;
        }
        w.flush().map_err(|e| DosaError::io("<csv>", e))?;
        Ok(())
    }
}

pub fn evaluate(y_true: &Matrix, y_pred: &Matrix) -> Result<MetricReport> {
    Ok(MetricReport::from_counts(class_counts(y_true, y_pred)?))
}

/// Macro F1 over the classes of label blocks `0..=up_to`, on every sample.
/// Columns of `y_true`/`y_pred` are indexed by the class ids in `blocks`.
pub fn combined_evaluation(
    y_true: &Matrix,
    y_pred: &Matrix,
    blocks: &[Vec<usize>],
    up_to: usize,
) -> Result<f64> {
    if up_to >= blocks.len() {
        return Err(DosaError::Index {
            index: up_to,
            len: blocks.len(),
        });
    }
    let classes: Vec<usize> = blocks[..=up_to].iter().flatten().copied().collect();
    if let Some(&bad) = classes.iter().find(|&&k| k >= y_true.cols()) {
        return Err(DosaError::Index {
            index: bad,
            len: y_true.cols(),
        });
    }
    let counts = class_counts(y_true, y_pred)?.restrict(&classes);
    Ok(macro_f1(&counts))
}
