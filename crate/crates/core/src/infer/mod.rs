//! Sliding-window volumetric inference.
//!
//! Windows are laid out with [`crate::preprocess::patch_positions`] on every axis. Extraction,
//! prediction and accumulation run as pipeline stages joined by bounded
//! channels; results are folded in window order, so the output does not
//! depend on the number of workers.

use std::collections::BTreeMap;
use std::sync::mpsc::{sync_channel, Receiver};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::preprocess::intensity::Normalization;
use crate::preprocess::{PatchGrid, PreprocessError};
use crate::volume::{Volume, VolumeError, VoxelBuffer};

#[cfg(feature = "onnx")]
mod onnx;
mod spec;
mod threshold;

#[cfg(feature = "onnx")]
pub use onnx::{IoSpec, OnnxPredictor};
pub use spec::PredictorSpec;
pub use threshold::ThresholdPredictor;

#[derive(Debug, Error)]
pub enum InferError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("cannot load model: {0}")]
    ModelLoad(String),
    #[error("input shape mismatch: model expects {expected}, got {actual}")]
    InputShape { expected: String, actual: String },
    #[error("predictor returned {actual} values, expected {expected}")]
    OutputShape { expected: usize, actual: usize },
    #[error("prediction failed: {0}")]
    Predict(String),
    #[error(transparent)]
    Preprocess(#[from] PreprocessError),
    #[error(transparent)]
    Volume(#[from] VolumeError),
}

#[cfg(feature = "onnx")]
impl InferError {
    pub(crate) fn predict(e: impl std::fmt::Display) -> Self {
        InferError::Predict(format!("{e:#}"))
    }
}

/// A network forward pass over one patch.
pub trait PatchPredictor: Send + Sync {
    fn num_classes(&self) -> usize;

    /// `patch` holds `size` voxels in `[Z, Y, X]` order. Returns class-major
    /// probabilities: `num_classes` blocks of `patch.len()` values.
    fn predict(&self, patch: &[f32], size: [usize; 3]) -> Result<Vec<f32>, InferError>;
}

/// In-place softmax over the class axis of class-major values.
pub fn softmax_classes(values: &mut [f32], classes: usize) {
    let n = values.len() / classes;
    for i in 0..n {
        let max = (0..classes).map(|c| values[c * n + i]).fold(f32::NEG_INFINITY, f32::max);
        let mut sum = 0.0f32;
        for c in 0..classes {
            let e = (values[c * n + i] - max).exp();
            values[c * n + i] = e;
            sum += e;
        }
        for c in 0..classes {
            values[c * n + i] /= sum;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregation {
    Mean,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlidingWindowConfig {
    pub patch_size: [usize; 3],
    pub stride: [usize; 3],
    pub aggregation: Aggregation,
    pub normalization: Normalization,
    /// Keep the per-class probability volumes in the result.
    pub keep_probabilities: bool,
    /// Prediction threads; 0 means all cores.
    pub workers: usize,
    /// Capacity of each inter-stage queue.
    pub queue_depth: usize,
}

impl SlidingWindowConfig {
    pub fn new(patch_size: [usize; 3], stride: [usize; 3]) -> Self {
        SlidingWindowConfig {
            patch_size,
            stride,
            aggregation: Aggregation::Mean,
            normalization: Normalization::None,
            keep_probabilities: false,
            workers: 1,
            queue_depth: 4,
        }
    }

    /// Checks `0 < stride <= patch` on every axis.
    pub fn validate(&self) -> Result<(), InferError> {
        if (0..3).any(|a| self.patch_size[a] == 0 || self.stride[a] == 0 || self.stride[a] > self.patch_size[a]) {
            return Err(InferError::InvalidConfig(format!(
                "need 0 < stride <= patch, got patch {:?} stride {:?}",
                self.patch_size, self.stride
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct InferResult {
    /// Argmax labels on the input grid.
    pub labels: Volume,
    /// Mean per-class probabilities, when requested.
    pub probabilities: Option<Vec<Volume>>,
    /// Predictor invocations.
    pub windows: usize,
    /// Zero padding `[before, after]` per axis applied to undersized inputs.
    pub padding: [[usize; 2]; 3],
}

struct Job {
    index: usize,
    offset: [usize; 3],
    patch: Vec<f32>,
}

type Done = (usize, [usize; 3], Result<Vec<f32>, InferError>);

fn extract(values: &[f32], size: [usize; 3], offset: [usize; 3], patch: [usize; 3]) -> Vec<f32> {
    let mut out = Vec::with_capacity(patch.iter().product());
    for z in offset[0]..offset[0] + patch[0] {
        for y in offset[1]..offset[1] + patch[1] {
            let row = (z * size[1] + y) * size[2] + offset[2];
            out.extend_from_slice(&values[row..row + patch[2]]);
        }
    }
    out
}

fn pad(values: Vec<f32>, size: [usize; 3], padding: [[usize; 2]; 3]) -> (Vec<f32>, [usize; 3]) {
    if padding.iter().all(|p| p == &[0, 0]) {
        return (values, size);
    }
    let out_size = [0, 1, 2].map(|a| size[a] + padding[a][0] + padding[a][1]);
    let mut out = vec![0.0f32; out_size.iter().product()];
    for z in 0..size[0] {
        for y in 0..size[1] {
            let src = (z * size[1] + y) * size[2];
            let dst = ((z + padding[0][0]) * out_size[1] + y + padding[1][0]) * out_size[2] + padding[2][0];
            out[dst..dst + size[2]].copy_from_slice(&values[src..src + size[2]]);
        }
    }
    (out, out_size)
}

struct Accumulator {
    size: [usize; 3],
    classes: usize,
    sum: Vec<f32>,
    count: Vec<u32>,
}

impl Accumulator {
    fn add(&mut self, offset: [usize; 3], patch: [usize; 3], probs: &[f32]) {
        let pn: usize = patch.iter().product();
        let n: usize = self.size.iter().product();
        let mut k = 0;
        for z in 0..patch[0] {
            for y in 0..patch[1] {
                let row = ((offset[0] + z) * self.size[1] + offset[1] + y) * self.size[2] + offset[2];
                for x in 0..patch[2] {
                    let i = row + x;
                    self.count[i] += 1;
                    for c in 0..self.classes {
                        self.sum[c * n + i] += probs[c * pn + k];
                    }
                    k += 1;
                }
            }
        }
    }
}

/// Runs `predictor` over `v` window by window and averages overlapping
/// probabilities. Labels carry the input geometry exactly.
pub fn sliding_window_infer(
    v: &Volume,
    predictor: &dyn PatchPredictor,
    cfg: &SlidingWindowConfig,
) -> Result<InferResult, InferError> {
    sliding_window_infer_with_progress(v, predictor, cfg, &mut |_, _| {})
}

/// As [`sliding_window_infer`], calling `progress(done, total)` after each
/// window is accumulated.
pub fn sliding_window_infer_with_progress(
    v: &Volume,
    predictor: &dyn PatchPredictor,
    cfg: &SlidingWindowConfig,
    progress: &mut dyn FnMut(usize, usize),
) -> Result<InferResult, InferError> {
    cfg.validate()?;
    let classes = predictor.num_classes();
    if classes == 0 {
        return Err(InferError::InvalidConfig("predictor reports zero classes".into()));
    }
    let normalized = cfg.normalization.apply(v)?;
    let values = match normalized.into_data() {
        VoxelBuffer::Float32(d) => d,
        other => other.to_f32_vec(),
    };
    let size = v.size();
    let patch = cfg.patch_size;
    let padding = [0, 1, 2].map(|a| {
        let missing = patch[a].saturating_sub(size[a]);
        [missing / 2, missing - missing / 2]
    });
    let (values, padded) = pad(values, size, padding);
    let grid = PatchGrid::new(padded, patch, cfg.stride)?;
    let positions: Vec<[usize; 3]> = grid.positions().collect();
    let total = positions.len();
    let pn: usize = patch.iter().product();
    let n: usize = padded.iter().product();
    let mut acc = Accumulator {
        size: padded,
        classes,
        sum: vec![0.0; classes * n],
        count: vec![0; n],
    };
    let workers = crate::parallel::resolve_workers(cfg.workers).min(total).max(1);
    let depth = cfg.queue_depth.max(1);

    std::thread::scope(|s| -> Result<(), InferError> {
        let (job_tx, job_rx) = sync_channel::<Job>(depth);
        let (done_tx, done_rx) = sync_channel::<Done>(depth);
        let values = &values;
        let positions = &positions;
        s.spawn(move || {
            for (index, &offset) in positions.iter().enumerate() {
                let patch = extract(values, padded, offset, patch);
                if job_tx.send(Job { index, offset, patch }).is_err() {
                    break;
                }
            }
        });
        let job_rx = Arc::new(Mutex::new(job_rx));
        for _ in 0..workers {
            let job_rx = Arc::clone(&job_rx);
            let done_tx = done_tx.clone();
            s.spawn(move || worker(&job_rx, &done_tx, predictor, patch, classes * pn));
        }
        drop(done_tx);

        // Reorder buffer: fold results strictly in window order.
        let mut pending: BTreeMap<usize, ([usize; 3], Vec<f32>)> = BTreeMap::new();
        let mut next = 0;
        for (index, offset, result) in done_rx.iter() {
            pending.insert(index, (offset, result?));
            while let Some((offset, probs)) = pending.remove(&next) {
                acc.add(offset, patch, &probs);
                next += 1;
                progress(next, total);
            }
        }
        if next != total {
            return Err(InferError::Predict(format!("{next} of {total} windows completed")));
        }
        Ok(())
    })?;

    let out_n = v.len();
    let mut labels = Vec::with_capacity(out_n);
    let mut probs: Vec<Vec<f32>> = if cfg.keep_probabilities {
        vec![Vec::with_capacity(out_n); classes]
    } else {
        Vec::new()
    };
    for z in 0..size[0] {
        for y in 0..size[1] {
            for x in 0..size[2] {
                let i = ((z + padding[0][0]) * padded[1] + y + padding[1][0]) * padded[2] + x + padding[2][0];
                let count = acc.count[i] as f32;
                let mut best = 0;
                let mut best_p = f32::NEG_INFINITY;
                for c in 0..classes {
                    let p = acc.sum[c * n + i] / count;
                    // Strictly greater keeps the lowest index on ties.
                    if p > best_p {
                        best = c;
                        best_p = p;
                    }
                    if let Some(pc) = probs.get_mut(c) {
                        pc.push(p);
                    }
                }
                labels.push(best);
            }
        }
    }
    let label_data = if classes <= 256 {
        VoxelBuffer::Uint8(labels.into_iter().map(|c| c as u8).collect())
    } else {
        VoxelBuffer::Uint16(labels.into_iter().map(|c| c as u16).collect())
    };
    let geometry = *v.geometry();
    let probabilities = if cfg.keep_probabilities {
        Some(
            probs
                .into_iter()
                .map(|p| Volume::new(geometry, VoxelBuffer::Float32(p)))
                .collect::<Result<Vec<_>, _>>()?,
        )
    } else {
        None
    };
    Ok(InferResult {
        labels: Volume::new(geometry, label_data)?,
        probabilities,
        windows: total,
        padding,
    })
}

fn worker(
    jobs: &Mutex<Receiver<Job>>,
    done: &std::sync::mpsc::SyncSender<Done>,
    predictor: &dyn PatchPredictor,
    patch: [usize; 3],
    expected: usize,
) {
    loop {
        let job = match jobs.lock() {
            Ok(rx) => rx.recv(),
            Err(_) => return,
        };
        let Ok(job) = job else { return };
        let result = predictor.predict(&job.patch, patch).and_then(|out| {
            if out.len() == expected {
                Ok(out)
            } else {
                Err(InferError::OutputShape {
                    expected,
                    actual: out.len(),
                })
            }
        });
        if done.send((job.index, job.offset, result)).is_err() {
            return;
        }
    }
}
