//! Multi-label dataset ingestion, feature scaling, train/test splitting and
//! task-sequence construction.

mod arff;
mod tasks;

pub use arff::parse_arff;
pub use tasks::{
    label_blocks, split_test_tasks, split_test_tasks_with_blocks, split_train_tasks,
    split_train_tasks_with_blocks, validate_tasks, TaskCheck, TaskSpec, TaskViolation,
};

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{DosaError, Result};
use crate::losses::check_bipolar;
use crate::numerics::{stream_rng, Matrix};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelPosition {
    #[default]
    Trailing,
    Leading,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NominalEncoding {
    #[default]
    OneHot,
    Integer,
}

/// Sidecar JSON describing which columns are labels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetDescriptor {
    #[serde(default)]
    pub name: String,
    pub label_count: usize,
    #[serde(default)]
    pub label_position: LabelPosition,
    #[serde(default)]
    pub nominal: NominalEncoding,
}

impl DatasetDescriptor {
    /// `data/flags.arff` → `data/flags.json`.
    pub fn sidecar_path(data_path: &Path) -> PathBuf {
        data_path.with_extension("json")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| DosaError::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MultiLabelDataset {
    pub name: String,
    pub features: Matrix,
    /// Bipolar, one column per label.
    pub labels: Matrix,
    pub feature_names: Vec<String>,
    pub label_names: Vec<String>,
    /// Positions that were missing in the source file, currently imputed.
    #[serde(default)]
    missing: Vec<(usize, usize)>,
}

impl MultiLabelDataset {
    pub fn new(
        name: impl Into<String>,
        features: Matrix,
        labels: Matrix,
        feature_names: Vec<String>,
        label_names: Vec<String>,
    ) -> Result<Self> {
        let ds = Self {
            name: name.into(),
            features,
            labels,
            feature_names,
            label_names,
            missing: Vec::new(),
        };
        ds.validate()?;
        Ok(ds)
    }

    /// Builds a dataset from rows where `None` marks a missing feature.
    /// Missing entries are filled with the column mean of present values.
    pub(crate) fn from_optional_rows(
        name: String,
        rows: Vec<Vec<Option<f64>>>,
        labels: Vec<Vec<f64>>,
        feature_names: Vec<String>,
        label_names: Vec<String>,
    ) -> Result<Self> {
        let n = rows.len();
        let m = feature_names.len();
        let mut missing = Vec::new();
        let mut data = Vec::with_capacity(n * m);
        for (i, row) in rows.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                match v {
                    Some(x) => data.push(*x),
                    None => {
                        missing.push((i, j));
                        data.push(0.0);
                    }
                }
            }
        }
        let features = Matrix::new(n, m, data)?;
        let labels = Matrix::from_rows(&labels)?;
        let mut ds = Self {
            name,
            features,
            labels,
            feature_names,
            label_names,
            missing,
        };
        let all: Vec<usize> = (0..n).collect();
        ds.impute_missing(&all);
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        let (n, m) = self.features.shape();
        if n == 0 || m == 0 || self.labels.cols() == 0 {
            return Err(DosaError::Config(format!(
                "dataset '{}' is empty: n={n}, m={m}, r={}",
                self.name,
                self.labels.cols()
            )));
        }
        if self.labels.rows() != n {
            return Err(DosaError::Dimension {
                op: "dataset",
                left: self.features.shape(),
                right: self.labels.shape(),
            });
        }
        if self.feature_names.len() != m || self.label_names.len() != self.labels.cols() {
            return Err(DosaError::Config(format!(
                "dataset '{}' has {} feature / {} label names for {m} / {} columns",
                self.name,
                self.feature_names.len(),
                self.label_names.len(),
                self.labels.cols()
            )));
        }
        if !self.features.is_finite() {
            return Err(DosaError::NonFinite(format!("features of '{}'", self.name)));
        }
        check_bipolar(&self.labels)
    }

    pub fn num_samples(&self) -> usize {
        self.features.rows()
    }

    pub fn num_features(&self) -> usize {
        self.features.cols()
    }

    pub fn num_labels(&self) -> usize {
        self.labels.cols()
    }

    pub fn missing(&self) -> &[(usize, usize)] {
        &self.missing
    }

    /// Re-imputes every missing entry with the mean of that feature over the
    /// present values in `rows` (typically the training split).
    pub fn impute_missing(&mut self, rows: &[usize]) {
        if self.missing.is_empty() {
            return;
        }
        let is_missing: std::collections::HashSet<(usize, usize)> = self.missing.iter().copied().collect();
        let mut cols: BTreeMap<usize, (f64, usize)> = BTreeMap::new();
        for &(_, j) in &self.missing {
            cols.entry(j).or_insert((0.0, 0));
        }
        for &i in rows {
            for (&j, acc) in cols.iter_mut() {
                if !is_missing.contains(&(i, j)) {
                    acc.0 += self.features.get(i, j);
                    acc.1 += 1;
                }
            }
        }
        for &(i, j) in &self.missing {
            let (sum, count) = cols[&j];
            let mean = if count > 0 { sum / count as f64 } else { 0.0 };
            self.features.set(i, j, mean);
        }
    }

    /// Rows `indices` as a new dataset (missing markers carried over).
    pub fn subset(&self, indices: &[usize]) -> MultiLabelDataset {
        let pos: BTreeMap<usize, usize> = indices.iter().enumerate().map(|(k, &i)| (i, k)).collect();
        let missing = self
            .missing
            .iter()
            .filter_map(|&(i, j)| pos.get(&i).map(|&k| (k, j)))
            .collect();
        MultiLabelDataset {
            name: self.name.clone(),
            features: self.features.select_rows(indices),
            labels: self.labels.select_rows(indices),
            feature_names: self.feature_names.clone(),
            label_names: self.label_names.clone(),
            missing,
        }
    }

    /// Fraction of samples positive for each label.
    pub fn positive_rates(&self) -> Vec<f64> {
        let n = self.num_samples() as f64;
        (0..self.num_labels())
            .map(|k| self.labels.column(k).iter().filter(|&&v| v > 0.0).count() as f64 / n)
            .collect()
    }
}

pub fn load_arff(path: &Path, desc: &DatasetDescriptor) -> Result<MultiLabelDataset> {
    let text = std::fs::read_to_string(path).map_err(|e| DosaError::io(path, e))?;
    let mut desc = desc.clone();
    if desc.name.is_empty() {
        desc.name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
    }
    parse_arff(&text, &desc)
}

/// CSV with a header row; labels are `{0,1}` or `{-1,1}`; `?` or empty marks
/// a missing feature value.
pub fn load_csv(path: &Path, desc: &DatasetDescriptor) -> Result<MultiLabelDataset> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => DosaError::io(path, io),
        other => DosaError::Parse {
            line: 0,
            message: format!("{other:?}"),
        },
    })?;
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    let q = desc.label_count;
    if q == 0 || q >= header.len() {
        return Err(DosaError::Config(format!(
            "label_count {q} is incompatible with {} columns",
            header.len()
        )));
    }
    let is_label = |j: usize| match desc.label_position {
        LabelPosition::Trailing => j >= header.len() - q,
        LabelPosition::Leading => j < q,
    };
    let feature_names = (0..header.len()).filter(|&j| !is_label(j)).map(|j| header[j].clone()).collect();
    let label_names = (0..header.len()).filter(|&j| is_label(j)).map(|j| header[j].clone()).collect();

    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let rec = rec?;
        if rec.len() != header.len() {
            return Err(DosaError::Parse {
                line,
                message: format!("expected {} fields, found {}", header.len(), rec.len()),
            });
        }
        let mut frow = Vec::new();
        let mut lrow = Vec::new();
        for (j, field) in rec.iter().enumerate() {
            let field = field.trim();
            if is_label(j) {
                lrow.push(match field {
                    "1" | "1.0" | "+1" => 1.0,
                    "0" | "0.0" | "-1" | "-1.0" => -1.0,
                    other => {
                        return Err(DosaError::Parse {
                            line,
                            message: format!("label value '{other}' is not binary"),
                        })
                    }
                });
            } else if field.is_empty() || field == "?" {
                frow.push(None);
            } else {
                let x: f64 = field.parse().map_err(|_| DosaError::Parse {
                    line,
                    message: format!("'{field}' is not numeric"),
                })?;
                frow.push(Some(x));
            }
        }
        rows.push(frow);
        labels.push(lrow);
    }
    let name = if desc.name.is_empty() {
        path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
    } else {
        desc.name.clone()
    };
    MultiLabelDataset::from_optional_rows(name, rows, labels, feature_names, label_names)
}

/// Loads by extension (`.arff` or `.csv`). The descriptor is taken from the
/// argument, or from the sidecar `<stem>.json` when `None`. A sidecar that
/// disagrees with an explicit descriptor on the label layout is an error.
pub fn load_dataset(path: &Path, desc: Option<&DatasetDescriptor>) -> Result<MultiLabelDataset> {
    let owned;
    let desc = match desc {
        Some(d) => {
            let sidecar = DatasetDescriptor::sidecar_path(path);
            if sidecar.is_file() {
                let side = DatasetDescriptor::load(&sidecar)?;
                if side.label_count != d.label_count || side.label_position != d.label_position {
                    return Err(DosaError::Config(format!(
                        "{} declares {} {:?} labels, config says {} {:?}",
                        sidecar.display(),
                        side.label_count,
                        side.label_position,
                        d.label_count,
                        d.label_position
                    )));
                }
            }
            d
        }
        None => {
            owned = DatasetDescriptor::load(&DatasetDescriptor::sidecar_path(path))?;
            &owned
        }
    };
    match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
        Some("arff") => load_arff(path, desc),
        Some("csv") => load_csv(path, desc),
        other => Err(DosaError::Config(format!(
            "unsupported dataset extension {other:?} for {}",
            path.display()
        ))),
    }
}

/// Writes the normalised cache: `<dir>/<name>.csv` (features then bipolar
/// labels) and `<dir>/<name>.json` descriptor. Returns the CSV path.
pub fn write_normalized(ds: &MultiLabelDataset, dir: &Path) -> Result<PathBuf> {
    std::fs::create_dir_all(dir).map_err(|e| DosaError::io(dir, e))?;
    let csv_path = dir.join(format!("{}.csv", ds.name));
    let mut w = csv::Writer::from_path(&csv_path).map_err(|e| DosaError::Parse {
        line: 0,
        message: e.to_string(),
    })?;
    w.write_record(ds.feature_names.iter().chain(&ds.label_names))?;
    for i in 0..ds.num_samples() {
        let rec: Vec<String> = ds
            .features
            .row(i)
            .iter()
            .map(|v| v.to_string())
            .chain(ds.labels.row(i).iter().map(|&v| if v > 0.0 { "1" } else { "-1" }.to_string()))
            .collect();
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| DosaError::io(&csv_path, e))?;
    let desc = DatasetDescriptor {
        name: ds.name.clone(),
        label_count: ds.num_labels(),
        label_position: LabelPosition::Trailing,
        nominal: NominalEncoding::OneHot,
    };
    let desc_path = DatasetDescriptor::sidecar_path(&csv_path);
    std::fs::write(&desc_path, serde_json::to_string_pretty(&desc)?).map_err(|e| DosaError::io(&desc_path, e))?;
    Ok(csv_path)
}

/// Per-feature min-max scaler fitted on training data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureScaler {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl FeatureScaler {
    pub fn fit(features: &Matrix) -> Self {
        let m = features.cols();
        let mut min = vec![f64::INFINITY; m];
        let mut max = vec![f64::NEG_INFINITY; m];
        for r in 0..features.rows() {
            for (j, &v) in features.row(r).iter().enumerate() {
                min[j] = min[j].min(v);
                max[j] = max[j].max(v);
            }
        }
        Self { min, max }
    }

    /// `(x - min) / (max - min)` clipped to `[0, 1]`; constant features map to 0.
    pub fn transform(&self, features: &Matrix) -> Result<Matrix> {
        if features.cols() != self.min.len() {
            return Err(DosaError::Dimension {
                op: "FeatureScaler::transform",
                left: features.shape(),
                right: (1, self.min.len()),
            });
        }
        Ok(Matrix::from_fn(features.rows(), features.cols(), |r, j| {
            let span = self.max[j] - self.min[j];
            if span > 0.0 {
                ((features.get(r, j) - self.min[j]) / span).clamp(0.0, 1.0)
            } else {
                0.0
            }
        }))
    }
}

/// Train/test split stratified by label cardinality (number of positive
/// labels per sample). Each stratum contributes `round(train_fraction * len)`
/// samples to training. Both index lists are returned sorted.
pub fn train_test_split(ds: &MultiLabelDataset, train_fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(DosaError::Config(format!(
            "train fraction must be in (0, 1), got {train_fraction}"
        )));
    }
    let mut strata: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for i in 0..ds.num_samples() {
        let card = ds.labels.row(i).iter().filter(|&&v| v > 0.0).count();
        strata.entry(card).or_default().push(i);
    }
    let mut rng = stream_rng(seed, 0x5917);
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (_, mut rows) in strata {
        rows.shuffle(&mut rng);
        let k = (train_fraction * rows.len() as f64).round() as usize;
        train.extend_from_slice(&rows[..k]);
        test.extend_from_slice(&rows[k..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    if train.is_empty() || test.is_empty() {
        return Err(DosaError::Config(format!(
            "split of {} samples left an empty side",
            ds.num_samples()
        )));
    }
    Ok((train, test))
}

/// A dataset split into scaled train/test parts.
#[derive(Clone, Debug)]
pub struct PreparedSplit {
    pub train: MultiLabelDataset,
    pub test: MultiLabelDataset,
    pub scaler: FeatureScaler,
}

/// Imputes with train means, fits the scaler on train, and scales both sides.
pub fn prepare_split(mut train: MultiLabelDataset, mut test: MultiLabelDataset) -> Result<PreparedSplit> {
    if train.num_features() != test.num_features() || train.num_labels() != test.num_labels() {
        return Err(DosaError::Dimension {
            op: "prepare_split",
            left: (train.num_features(), train.num_labels()),
            right: (test.num_features(), test.num_labels()),
        });
    }
    let all_train: Vec<usize> = (0..train.num_samples()).collect();
    train.impute_missing(&all_train);
    if !test.missing.is_empty() {
        // test gaps take the train mean, not the test mean
        let means: Vec<f64> = (0..train.num_features())
            .map(|j| {
                let missing: std::collections::HashSet<usize> =
                    train.missing.iter().filter(|m| m.1 == j).map(|m| m.0).collect();
                let vals: Vec<f64> = (0..train.num_samples())
                    .filter(|i| !missing.contains(i))
                    .map(|i| train.features.get(i, j))
                    .collect();
                if vals.is_empty() {
                    0.0
                } else {
                    vals.iter().sum::<f64>() / vals.len() as f64
                }
            })
            .collect();
        for &(i, j) in &test.missing {
            test.features.set(i, j, means[j]);
        }
    }
    let scaler = FeatureScaler::fit(&train.features);
    train.features = scaler.transform(&train.features)?;
    test.features = scaler.transform(&test.features)?;
    Ok(PreparedSplit { train, test, scaler })
}
