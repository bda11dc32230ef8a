use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use super::DatasetError;
use crate::io::split_volume_name;

pub const IMAGE_DIR: &str = "image";
pub const LABEL_DIR: &str = "label";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SamplePair {
    pub stem: String,
    pub image_path: PathBuf,
    pub label_path: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ScanResult {
    pub pairs: Vec<SamplePair>,
    /// Label stems without a matching image.
    pub unmatched_labels: Vec<String>,
}

/// Volume files in `dir` keyed by stem, in byte-wise order.
fn volumes_by_stem(dir: &Path) -> Result<BTreeMap<String, PathBuf>, DatasetError> {
    let mut out = BTreeMap::new();
    let entries = std::fs::read_dir(dir).map_err(|e| DatasetError::io(dir, e))?;
    for entry in entries {
        let entry = entry.map_err(|e| DatasetError::io(dir, e))?;
        let path = entry.path();
        if !path.is_file() {
            continue;
        }
        let Some(name) = entry.file_name().to_str().map(str::to_owned) else {
            log::warn!("skipping non UTF-8 file name {}", path.display());
            continue;
        };
        let Some((stem, _)) = split_volume_name(&name) else {
            continue;
        };
        if out.insert(stem.to_string(), path).is_some() {
            return Err(DatasetError::DuplicateStem(stem.to_string(), dir.display().to_string()));
        }
    }
    Ok(out)
}

/// Matches `image/` and `label/` files of a native dataset by stem.
pub fn scan_pairs(root: &Path) -> Result<ScanResult, DatasetError> {
    let image_dir = root.join(IMAGE_DIR);
    if !image_dir.is_dir() {
        return Err(DatasetError::MissingImageDir(image_dir));
    }
    let images = volumes_by_stem(&image_dir)?;
    let label_dir = root.join(LABEL_DIR);
    let mut labels = if label_dir.is_dir() {
        volumes_by_stem(&label_dir)?
    } else {
        BTreeMap::new()
    };
    let pairs = images
        .into_iter()
        .map(|(stem, image_path)| SamplePair {
            label_path: labels.remove(&stem),
            stem,
            image_path,
        })
        .collect();
    let unmatched_labels: Vec<String> = labels.into_keys().collect();
    if !unmatched_labels.is_empty() {
        log::warn!("labels without images: {}", unmatched_labels.join(", "));
    }
    Ok(ScanResult {
        pairs,
        unmatched_labels,
    })
}
