//! Dataset-level drivers: apply one operation to every sample of a native
//! dataset, write a new dataset with fresh `meta.json`, and record the run
//! in `process_config.json`.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Mutex;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::dataset::{
    build_meta, prepare_empty_dir, scan_pairs, verify_meta, CropMetaFile, CropMetaRecord, DatasetError, ProcessConfig,
    RemapMetaFile, RemapRecord, SamplePair, IMAGE_DIR, LABEL_DIR, REMAP_META_FILE,
};
use crate::io::{read_volume, split_volume_name, write_volume, WriteOptions};
use crate::orientation::{is_oblique, reorient, OrientationCode};
use crate::parallel::with_pool;
use crate::preprocess::augment::{augment_pair, Drawn, Transform};
use crate::preprocess::labels::{label_classes, remap_labels, LabelMap};
use crate::preprocess::{resample, split_patches, PreprocessError, ResampleSpec, ResampleTarget};
use crate::volume::Volume;

/// What happened to each sample of a batch run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BatchReport {
    pub processed: Vec<String>,
    pub skipped: BTreeMap<String, String>,
    pub failed: BTreeMap<String, String>,
    pub warnings: Vec<String>,
    /// Files written under `image/`.
    pub outputs: usize,
}

impl BatchReport {
    pub fn has_failures(&self) -> bool {
        !self.failed.is_empty()
    }
}

enum Outcome {
    Done { outputs: usize, warnings: Vec<String> },
    Skipped(String),
}

fn extension(path: &Path) -> &'static str {
    path.file_name()
        .and_then(|n| n.to_str())
        .and_then(split_volume_name)
        .map_or(".mha", |(_, e)| e)
}

fn read(path: &Path) -> Result<Volume, String> {
    read_volume(path).map_err(|e| format!("{}: {e}", path.display()))
}

fn read_pair(p: &SamplePair) -> Result<(Volume, Option<Volume>), String> {
    Ok((read(&p.image_path)?, p.label_path.as_deref().map(read).transpose()?))
}

/// Writes `image` (and `label`) under `out_root` as `<stem><ext>`, keeping
/// each source file's extension.
fn write_pair(
    out_root: &Path,
    pair: &SamplePair,
    stem: &str,
    image: &Volume,
    label: Option<&Volume>,
    opts: WriteOptions,
) -> Result<(), String> {
    let dst = out_root.join(IMAGE_DIR).join(format!("{stem}{}", extension(&pair.image_path)));
    write_volume(image, &dst, opts).map_err(|e| format!("{}: {e}", dst.display()))?;
    if let (Some(l), Some(lp)) = (label, &pair.label_path) {
        let dst = out_root.join(LABEL_DIR).join(format!("{stem}{}", extension(lp)));
        write_volume(l, &dst, opts).map_err(|e| format!("{}: {e}", dst.display()))?;
    }
    Ok(())
}

fn oblique_warning(stem: &str, v: &Volume) -> Option<String> {
    is_oblique(v.direction()).then(|| format!("{stem}: oblique direction cosines"))
}

/// Scans, runs `f` on every pair with `workers` threads, rebuilds metadata,
/// verifies it and writes `process_config.json`.
fn run<F>(
    root: &Path,
    out_root: &Path,
    workers: usize,
    operation: &str,
    params: serde_json::Value,
    f: F,
) -> Result<BatchReport, DatasetError>
where
    F: Fn(&SamplePair) -> Result<Outcome, String> + Sync,
{
    let scan = scan_pairs(root)?;
    prepare_empty_dir(out_root)?;
    for dir in [IMAGE_DIR, LABEL_DIR] {
        let d = out_root.join(dir);
        std::fs::create_dir_all(&d).map_err(|e| DatasetError::io(&d, e))?;
    }
    let outcomes: Vec<(String, Result<Outcome, String>)> = with_pool(workers, || {
        scan.pairs.par_iter().map(|p| (p.stem.clone(), f(p))).collect()
    });
    let mut report = BatchReport::default();
    report
        .warnings
        .extend(scan.unmatched_labels.iter().map(|s| format!("{s}: label without image")));
    for (stem, outcome) in outcomes {
        match outcome {
            Ok(Outcome::Done { outputs, warnings }) => {
                report.outputs += outputs;
                report.warnings.extend(warnings);
                report.processed.push(stem);
            }
            Ok(Outcome::Skipped(reason)) => {
                log::warn!("skipping {stem}: {reason}");
                report.warnings.push(format!("{stem}: skipped, {reason}"));
                report.skipped.insert(stem, reason);
            }
            Err(e) => {
                log::error!("{stem}: {e}");
                report.failed.insert(stem, e);
            }
        }
    }
    let label_dir = out_root.join(LABEL_DIR);
    if std::fs::read_dir(&label_dir).map(|mut d| d.next().is_none()).unwrap_or(false) {
        let _ = std::fs::remove_dir(&label_dir);
    }
    build_meta(out_root, workers)?;
    let mismatches = verify_meta(out_root, workers)?;
    if let Some(m) = mismatches.first() {
        return Err(DatasetError::Inconsistent(format!("{}: {}", m.stem, m.detail)));
    }
    let mut config = ProcessConfig::new(operation, params, root);
    config.warnings = report.warnings.clone();
    config.write(out_root)?;
    Ok(report)
}

/// Resamples every image (trilinear) and label (nearest) to `target`.
pub fn resample_dataset(
    root: &Path,
    out_root: &Path,
    target: ResampleTarget,
    workers: usize,
    opts: WriteOptions,
) -> Result<BatchReport, DatasetError> {
    let params = json!({"target": target, "image_interpolation": "trilinear", "label_interpolation": "nearest"});
    run(root, out_root, workers, "resample", params, |p| {
        let (image, label) = read_pair(p)?;
        let err = |e: PreprocessError| e.to_string();
        let image_out = resample(&image, &ResampleSpec::image(target)).map_err(err)?;
        let label_out = label
            .as_ref()
            .map(|l| resample(l, &ResampleSpec::label(target)))
            .transpose()
            .map_err(err)?;
        write_pair(out_root, p, &p.stem, &image_out, label_out.as_ref(), opts)?;
        Ok(Outcome::Done {
            outputs: 1,
            warnings: oblique_warning(&p.stem, &image).into_iter().collect(),
        })
    })
}

/// Splits every sample into patches and writes `crop_meta.json`. Samples
/// smaller than the patch on any axis are skipped with a warning.
pub fn patch_dataset(
    root: &Path,
    out_root: &Path,
    patch_size: [usize; 3],
    stride: [usize; 3],
    workers: usize,
    opts: WriteOptions,
) -> Result<(BatchReport, CropMetaFile), DatasetError> {
    let records: Mutex<Vec<CropMetaRecord>> = Mutex::new(Vec::new());
    let params = json!({"patch_size": patch_size, "patch_stride": stride});
    let report = run(root, out_root, workers, "patch", params, |p| {
        let (image, label) = read_pair(p)?;
        let patches = match split_patches(&p.stem, &image, label.as_ref(), patch_size, stride) {
            Ok(ps) => ps,
            Err(e @ PreprocessError::TooSmall { .. }) => return Ok(Outcome::Skipped(e.to_string())),
            Err(e) => return Err(e.to_string()),
        };
        let count = patches.len();
        let mut recs = Vec::with_capacity(count);
        for patch in patches {
            write_pair(out_root, p, &patch.record.patch_stem, &patch.image, patch.label.as_ref(), opts)?;
            recs.push(patch.record);
        }
        records.lock().map_err(|e| e.to_string())?.extend(recs);
        Ok(Outcome::Done {
            outputs: count,
            warnings: Vec::new(),
        })
    })?;
    let crop_meta = CropMetaFile {
        source_dataset: root.display().to_string(),
        patch_size,
        patch_stride: stride,
        patches: records
            .into_inner()
            .unwrap_or_default()
            .into_iter()
            .map(|r| (r.patch_stem.clone(), r))
            .collect(),
    };
    crop_meta.write(out_root)?;
    Ok((report, crop_meta))
}

/// Reorients every pair to `target` by axis permutation and flips.
pub fn orient_dataset(
    root: &Path,
    out_root: &Path,
    target: OrientationCode,
    workers: usize,
    opts: WriteOptions,
) -> Result<BatchReport, DatasetError> {
    let params = json!({"target": target.to_string()});
    run(root, out_root, workers, "orient", params, |p| {
        let (image, label) = read_pair(p)?;
        let image_out = reorient(&image, target).map_err(|e| e.to_string())?;
        let label_out = label
            .as_ref()
            .map(|l| reorient(l, target))
            .transpose()
            .map_err(|e| e.to_string())?;
        write_pair(out_root, p, &p.stem, &image_out, label_out.as_ref(), opts)?;
        Ok(Outcome::Done {
            outputs: 1,
            warnings: oblique_warning(&p.stem, &image).into_iter().collect(),
        })
    })
}

/// Applies `map` to every label; images are copied unchanged. Writes
/// `remap_meta.json`.
pub fn remap_dataset(
    root: &Path,
    out_root: &Path,
    map: &LabelMap,
    workers: usize,
    opts: WriteOptions,
) -> Result<(BatchReport, RemapMetaFile), DatasetError> {
    let records: Mutex<BTreeMap<String, RemapRecord>> = Mutex::new(BTreeMap::new());
    let params = json!({"mapping": map});
    let report = run(root, out_root, workers, "remap", params, |p| {
        let image_dst = out_root.join(IMAGE_DIR).join(format!("{}{}", p.stem, extension(&p.image_path)));
        std::fs::copy(&p.image_path, &image_dst).map_err(|e| format!("{}: {e}", image_dst.display()))?;
        if let Some(lp) = &p.label_path {
            let label = read(lp)?;
            let out = remap_labels(&label, map).map_err(|e| e.to_string())?;
            let dst = out_root.join(LABEL_DIR).join(format!("{}{}", p.stem, extension(lp)));
            write_volume(&out, &dst, opts).map_err(|e| format!("{}: {e}", dst.display()))?;
            records.lock().map_err(|e| e.to_string())?.insert(
                p.stem.clone(),
                RemapRecord {
                    source_stem: p.stem.clone(),
                    classes_before: label_classes(&label),
                    classes_after: label_classes(&out),
                },
            );
        }
        Ok(Outcome::Done {
            outputs: 1,
            warnings: Vec::new(),
        })
    })?;
    let meta = RemapMetaFile {
        source_dataset: root.display().to_string(),
        mapping: map.mapping.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
        samples: records.into_inner().unwrap_or_default(),
    };
    crate::dataset::write_json(&out_root.join(REMAP_META_FILE), &meta)?;
    Ok((report, meta))
}

/// Applies `transforms` in order to every pair. Draws depend only on
/// `(seed, stem, transform)`, so results do not depend on `workers`.
pub fn augment_dataset(
    root: &Path,
    out_root: &Path,
    transforms: &[Transform],
    seed: u64,
    workers: usize,
    opts: WriteOptions,
) -> Result<(BatchReport, BTreeMap<String, Vec<Drawn>>), DatasetError> {
    let drawn: Mutex<BTreeMap<String, Vec<Drawn>>> = Mutex::new(BTreeMap::new());
    let params = json!({"transforms": transforms, "seed": seed});
    let report = run(root, out_root, workers, "augment", params, |p| {
        let (mut image, mut label) = read_pair(p)?;
        let mut draws = Vec::with_capacity(transforms.len());
        for t in transforms {
            let out = augment_pair(&image, label.as_ref(), t, seed, &p.stem).map_err(|e| e.to_string())?;
            image = out.image;
            label = out.label;
            draws.push(out.drawn);
        }
        write_pair(out_root, p, &p.stem, &image, label.as_ref(), opts)?;
        drawn.lock().map_err(|e| e.to_string())?.insert(p.stem.clone(), draws);
        Ok(Outcome::Done {
            outputs: 1,
            warnings: Vec::new(),
        })
    })?;
    let drawn = drawn.into_inner().unwrap_or_default();
    crate::dataset::write_json(&out_root.join("augment_meta.json"), &json!({"seed": seed, "samples": drawn}))?;
    Ok((report, drawn))
}
