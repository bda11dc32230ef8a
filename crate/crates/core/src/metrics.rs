//! Segmentation accuracy: per-class confusion counts and Dice, IoU, recall
//! and precision.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::io::{read_volume, split_volume_name, FormatError};
use crate::parallel::with_pool;
use crate::volume::Volume;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("shape mismatch: prediction {pred:?}, ground truth {gt:?}")]
    ShapeMismatch { pred: [usize; 3], gt: [usize; 3] },
    #[error("label {value} outside [0, {num_classes})")]
    LabelOutOfRange { value: f64, num_classes: usize },
    #[error("num_classes must be at least 1")]
    NoClasses,
    #[error("{}: {source}", path.display())]
    Format {
        path: PathBuf,
        #[source]
        source: FormatError,
    },
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// One-vs-rest voxel tallies for a single class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCounts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

impl ClassCounts {
    fn add(&mut self, o: &ClassCounts) {
        self.tp += o.tp;
        self.fp += o.fp;
        self.fn_ += o.fn_;
        self.tn += o.tn;
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub classes: Vec<ClassCounts>,
}

impl ConfusionCounts {
    pub fn zeros(num_classes: usize) -> Self {
        ConfusionCounts {
            classes: vec![ClassCounts::default(); num_classes],
        }
    }

    pub fn merge(&mut self, other: &ConfusionCounts) {
        for (a, b) in self.classes.iter_mut().zip(&other.classes) {
            a.add(b);
        }
    }
}

fn class_index(value: f64, num_classes: usize) -> Result<usize, MetricsError> {
    if value >= 0.0 && value < num_classes as f64 && value.fract() == 0.0 {
        Ok(value as usize)
    } else {
        Err(MetricsError::LabelOutOfRange { value, num_classes })
    }
}

/// Per-class counts of `pred` against `gt`.
pub fn confusion(pred: &Volume, gt: &Volume, num_classes: usize) -> Result<ConfusionCounts, MetricsError> {
    if num_classes == 0 {
        return Err(MetricsError::NoClasses);
    }
    if pred.size() != gt.size() {
        return Err(MetricsError::ShapeMismatch {
            pred: pred.size(),
            gt: gt.size(),
        });
    }
    // Joint histogram: joint[p * n + g].
    let n = num_classes;
    let mut joint = vec![0u64; n * n];
    for i in 0..pred.len() {
        let p = class_index(pred.data().get_f64(i), n)?;
        let g = class_index(gt.data().get_f64(i), n)?;
        joint[p * n + g] += 1;
    }
    let total = pred.len() as u64;
    let classes = (0..n)
        .map(|c| {
            let tp = joint[c * n + c];
            let pred_c: u64 = joint[c * n..(c + 1) * n].iter().sum();
            let gt_c: u64 = (0..n).map(|p| joint[p * n + c]).sum();
            let (fp, fn_) = (pred_c - tp, gt_c - tp);
            ClassCounts {
                tp,
                fp,
                fn_,
                tn: total - tp - fp - fn_,
            }
        })
        .collect();
    Ok(ConfusionCounts { classes })
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den != 0).then(|| num as f64 / den as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub dice: Option<f64>,
    pub iou: Option<f64>,
    pub recall: Option<f64>,
    pub precision: Option<f64>,
    /// Ground-truth voxels of this class.
    pub support: u64,
}

impl ClassMetrics {
    pub fn from_counts(c: &ClassCounts) -> Self {
        ClassMetrics {
            dice: ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn_),
            iou: ratio(c.tp, c.tp + c.fp + c.fn_),
            recall: ratio(c.tp, c.tp + c.fn_),
            precision: ratio(c.tp, c.tp + c.fp),
            support: c.tp + c.fn_,
        }
    }

    fn values(&self) -> [Option<f64>; 4] {
        [self.dice, self.iou, self.recall, self.precision]
    }
}

/// Means of the four metrics, each over its defined entries only.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct MeanMetrics {
    pub dice: Option<f64>,
    pub iou: Option<f64>,
    pub recall: Option<f64>,
    pub precision: Option<f64>,
}

impl MeanMetrics {
    fn of<'a>(rows: impl Iterator<Item = [Option<f64>; 4]> + Clone + 'a) -> Self {
        let mean = |k: usize| {
            let vals: Vec<f64> = rows.clone().filter_map(|r| r[k]).collect();
            (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
        };
        MeanMetrics {
            dice: mean(0),
            iou: mean(1),
            recall: mean(2),
            precision: mean(3),
        }
    }

    fn values(&self) -> [Option<f64>; 4] {
        [self.dice, self.iou, self.recall, self.precision]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub classes: Vec<ClassMetrics>,
    /// Mean over classes 1.. (background excluded).
    pub mean: MeanMetrics,
    /// Mean over all classes including background.
    pub mean_with_background: MeanMetrics,
    pub samples: usize,
}

pub fn metrics_from_counts(c: &ConfusionCounts) -> MetricsReport {
    let classes: Vec<ClassMetrics> = c.classes.iter().map(ClassMetrics::from_counts).collect();
    MetricsReport {
        mean: MeanMetrics::of(classes.iter().skip(1).map(ClassMetrics::values)),
        mean_with_background: MeanMetrics::of(classes.iter().map(ClassMetrics::values)),
        classes,
        samples: 1,
    }
}

/// Mean over samples of each per-sample quantity, skipping nulls.
fn sample_mean(reports: &[&MetricsReport], num_classes: usize) -> MetricsReport {
    let classes = (0..num_classes)
        .map(|c| {
            let m = MeanMetrics::of(reports.iter().map(move |r| r.classes[c].values()));
            ClassMetrics {
                dice: m.dice,
                iou: m.iou,
                recall: m.recall,
                precision: m.precision,
                support: reports.iter().map(|r| r.classes[c].support).sum(),
            }
        })
        .collect();
    MetricsReport {
        classes,
        mean: MeanMetrics::of(reports.iter().map(|r| r.mean.values())),
        mean_with_background: MeanMetrics::of(reports.iter().map(|r| r.mean_with_background.values())),
        samples: reports.len(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Convention {
    pub aggregate: String,
    pub pooled: String,
    pub mean: String,
    pub mean_with_background: String,
    pub undefined: String,
}

impl Default for Convention {
    fn default() -> Self {
        Convention {
            aggregate: "mean over samples of per-sample values".into(),
            pooled: "metrics of confusion counts summed over samples".into(),
            mean: "mean over classes excluding class 0".into(),
            mean_with_background: "mean over all classes".into(),
            undefined: "0/0 is null and excluded from means".into(),
        }
    }
}

/// Contents of `metrics.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMetrics {
    pub num_classes: usize,
    pub per_sample: BTreeMap<String, MetricsReport>,
    pub aggregate: MetricsReport,
    pub pooled: MetricsReport,
    pub counts: ConfusionCounts,
    pub convention: Convention,
    /// Predictions without ground truth.
    pub missing_gt: Vec<String>,
    /// Ground truth without predictions.
    pub missing_pred: Vec<String>,
}

impl DatasetMetrics {
    /// Combines per-sample counts. Input order does not matter.
    pub fn from_counts(num_classes: usize, per_sample: BTreeMap<String, ConfusionCounts>) -> Self {
        let mut pooled = ConfusionCounts::zeros(num_classes);
        for c in per_sample.values() {
            pooled.merge(c);
        }
        let reports: BTreeMap<String, MetricsReport> =
            per_sample.iter().map(|(k, c)| (k.clone(), metrics_from_counts(c))).collect();
        let refs: Vec<&MetricsReport> = reports.values().collect();
        let mut pooled_report = metrics_from_counts(&pooled);
        pooled_report.samples = reports.len();
        DatasetMetrics {
            num_classes,
            aggregate: sample_mean(&refs, num_classes),
            pooled: pooled_report,
            counts: pooled,
            per_sample: reports,
            convention: Convention::default(),
            missing_gt: Vec::new(),
            missing_pred: Vec::new(),
        }
    }

    /// Aligned plain-text table, metrics as percentages with two decimals.
    pub fn table(&self) -> String {
        let pct = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{:.2}", x * 100.0));
        let mut rows: Vec<[String; 6]> = vec![["sample", "class", "dice", "iou", "recall", "precision"].map(String::from)];
        let mut push = |name: &str, class: String, v: [Option<f64>; 4]| {
            rows.push([name.to_string(), class, pct(v[0]), pct(v[1]), pct(v[2]), pct(v[3])]);
        };
        for (stem, r) in &self.per_sample {
            for (c, m) in r.classes.iter().enumerate().skip(1) {
                push(stem, c.to_string(), m.values());
            }
            push(stem, "mean".into(), r.mean.values());
        }
        for (c, m) in self.aggregate.classes.iter().enumerate() {
            push("aggregate", c.to_string(), m.values());
        }
        push("aggregate", "mean".into(), self.aggregate.mean.values());
        push("aggregate", "mean+bg".into(), self.aggregate.mean_with_background.values());
        push("pooled", "mean".into(), self.pooled.mean.values());
        let widths: Vec<usize> = (0..6).map(|k| rows.iter().map(|r| r[k].len()).max().unwrap_or(0)).collect();
        let mut out = String::new();
        for r in &rows {
            let _ = write!(out, "{:<w$}", r[0], w = widths[0]);
            for k in 1..6 {
                let _ = write!(out, "  {:>w$}", r[k], w = widths[k]);
            }
            out.push('\n');
        }
        out
    }
}

fn label_files(dir: &Path) -> Result<BTreeMap<String, PathBuf>, MetricsError> {
    // A native dataset root keeps its labels under label/.
    let dir = if dir.join("label").is_dir() { dir.join("label") } else { dir.to_path_buf() };
    let io = |e| MetricsError::Io {
        path: dir.clone(),
        source: e,
    };
    let mut out = BTreeMap::new();
    for entry in std::fs::read_dir(&dir).map_err(io)? {
        let path = entry.map_err(io)?.path();
        if let Some((stem, _)) = path.file_name().and_then(|n| n.to_str()).and_then(split_volume_name) {
            out.insert(stem.to_string(), path.clone());
        }
    }
    Ok(out)
}

fn read(path: &Path) -> Result<Volume, MetricsError> {
    read_volume(path).map_err(|e| MetricsError::Format {
        path: path.to_path_buf(),
        source: e,
    })
}

/// Pairs prediction and ground-truth files by stem and scores them.
pub fn evaluate_dataset(
    pred_dir: &Path,
    gt_dir: &Path,
    num_classes: usize,
    workers: usize,
) -> Result<DatasetMetrics, MetricsError> {
    let preds = label_files(pred_dir)?;
    let gts = label_files(gt_dir)?;
    let stems: Vec<&String> = preds.keys().filter(|s| gts.contains_key(*s)).collect();
    let counts: Vec<(String, ConfusionCounts)> = with_pool(workers, || {
        stems
            .par_iter()
            .map(|s| {
                let c = confusion(&read(&preds[*s])?, &read(&gts[*s])?, num_classes)?;
                Ok(((*s).clone(), c))
            })
            .collect::<Result<_, MetricsError>>()
    })?;
    let mut report = DatasetMetrics::from_counts(num_classes, counts.into_iter().collect());
    report.missing_gt = preds.keys().filter(|s| !gts.contains_key(*s)).cloned().collect();
    report.missing_pred = gts.keys().filter(|s| !preds.contains_key(*s)).cloned().collect();
    Ok(report)
}
