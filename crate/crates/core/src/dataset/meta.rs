use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::records::{MetaErrorEntry, MetaFile, MetaRecord, META_FILE};
use super::scan::{scan_pairs, SamplePair};
use super::DatasetError;
use crate::io::{read_header, read_volume};
use crate::orientation::orientation_of;
use crate::parallel::with_pool;
use crate::preprocess::labels::label_classes;

fn relative(root: &Path, path: &Path) -> String {
    path.strip_prefix(root)
        .unwrap_or(path)
        .components()
        .map(|c| c.as_os_str().to_string_lossy())
        .collect::<Vec<_>>()
        .join("/")
}

fn record_for(root: &Path, pair: &SamplePair) -> Result<MetaRecord, MetaErrorEntry> {
    let fail = |path: &Path, error: String| MetaErrorEntry {
        stem: pair.stem.clone(),
        path: relative(root, path),
        error,
    };
    let header = read_header(&pair.image_path).map_err(|e| fail(&pair.image_path, e.to_string()))?;
    let g = header.geometry;
    let orientation = orientation_of(&g.direction).map_err(|e| fail(&pair.image_path, e.to_string()))?;
    let mut label_classes_out = None;
    if let Some(lp) = &pair.label_path {
        let label = read_volume(lp).map_err(|e| fail(lp, e.to_string()))?;
        if label.size() != g.size {
            return Err(fail(
                lp,
                format!("label size {:?} differs from image size {:?}", label.size(), g.size),
            ));
        }
        label_classes_out = Some(label_classes(&label));
    }
    Ok(MetaRecord {
        stem: pair.stem.clone(),
        image: relative(root, &pair.image_path),
        label: pair.label_path.as_deref().map(|p| relative(root, p)),
        size: g.size,
        spacing: g.spacing,
        origin: g.origin,
        orientation: orientation.to_string(),
        element_type: header.element_type,
        label_classes: label_classes_out,
    })
}

/// Reads every pair's header (and label payload for the class list) using
/// `workers` threads.
pub fn meta_records(
    root: &Path,
    workers: usize,
) -> Result<(BTreeMap<String, MetaRecord>, Vec<MetaErrorEntry>), DatasetError> {
    let scan = scan_pairs(root)?;
    let results: Vec<_> = with_pool(workers, || {
        scan.pairs.par_iter().map(|p| record_for(root, p)).collect()
    });
    let mut samples = BTreeMap::new();
    let mut errors = Vec::new();
    for r in results {
        match r {
            Ok(rec) => {
                samples.insert(rec.stem.clone(), rec);
            }
            Err(e) => {
                log::warn!("{}: {}", e.path, e.error);
                errors.push(e);
            }
        }
    }
    Ok((samples, errors))
}

/// Scans `root` and writes `meta.json` there.
pub fn build_meta(root: &Path, workers: usize) -> Result<MetaFile, DatasetError> {
    let (samples, errors) = meta_records(root, workers)?;
    let meta = MetaFile::new(samples, errors);
    meta.write(root)?;
    Ok(meta)
}

pub fn read_or_build_meta(root: &Path, workers: usize) -> Result<MetaFile, DatasetError> {
    if root.join(META_FILE).is_file() {
        MetaFile::read(root)
    } else {
        build_meta(root, workers)
    }
}

/// One disagreement between `meta.json` and the files.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mismatch {
    pub stem: String,
    pub detail: String,
}

/// Re-reads the dataset and reports every record that differs from
/// `meta.json`. An empty list means the metadata is consistent.
pub fn verify_meta(root: &Path, workers: usize) -> Result<Vec<Mismatch>, DatasetError> {
    let stored = MetaFile::read(root)?;
    let (fresh, fresh_errors) = meta_records(root, workers)?;
    let mut out = Vec::new();
    for (stem, rec) in &stored.samples {
        match fresh.get(stem) {
            None => out.push(Mismatch {
                stem: stem.clone(),
                detail: "listed in meta.json but not readable on disk".into(),
            }),
            Some(f) if f != rec => out.push(Mismatch {
                stem: stem.clone(),
                detail: format!("stored {rec:?}, found {f:?}"),
            }),
            Some(_) => {}
        }
    }
    for stem in fresh.keys().filter(|s| !stored.samples.contains_key(*s)) {
        out.push(Mismatch {
            stem: stem.clone(),
            detail: "present on disk but missing from meta.json".into(),
        });
    }
    for e in fresh_errors {
        if !stored.errors.iter().any(|s| s.stem == e.stem) && !stored.samples.contains_key(&e.stem) {
            out.push(Mismatch {
                stem: e.stem,
                detail: format!("unreadable and not listed: {}", e.error),
            });
        }
    }
    Ok(out)
}
