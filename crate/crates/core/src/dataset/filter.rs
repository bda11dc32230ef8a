use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::meta::read_or_build_meta;
use super::records::{MetaFile, MetaRecord, ProcessConfig};
use super::{prepare_empty_dir, DatasetError};

/// Constraints a sample must meet to survive filtering.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterCriteria {
    pub min_size: [usize; 3],
    pub min_spacing: Option<[f64; 3]>,
    pub max_spacing: Option<[f64; 3]>,
}

impl FilterCriteria {
    pub fn min_size(min_size: [usize; 3]) -> Self {
        FilterCriteria {
            min_size,
            min_spacing: None,
            max_spacing: None,
        }
    }

    /// `None` when the record passes, otherwise the reason it does not.
    pub fn reject_reason(&self, r: &MetaRecord) -> Option<String> {
        if (0..3).any(|a| r.size[a] < self.min_size[a]) {
            return Some(format!("size {:?} below minimum {:?}", r.size, self.min_size));
        }
        if let Some(min) = self.min_spacing {
            if (0..3).any(|a| r.spacing[a] < min[a]) {
                return Some(format!("spacing {:?} below minimum {min:?}", r.spacing));
            }
        }
        if let Some(max) = self.max_spacing {
            if (0..3).any(|a| r.spacing[a] > max[a]) {
                return Some(format!("spacing {:?} above maximum {max:?}", r.spacing));
            }
        }
        None
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FilterReport {
    pub kept: Vec<String>,
    pub dropped: BTreeMap<String, String>,
    /// Files copied because a link could not be created.
    pub copied: Vec<String>,
}

/// Links `src` at `dst`, copying when the platform or filesystem refuses.
/// Returns true if a copy was made.
fn link_or_copy(src: &Path, dst: &Path) -> Result<bool, DatasetError> {
    let abs = std::fs::canonicalize(src).map_err(|e| DatasetError::io(src, e))?;
    #[cfg(unix)]
    {
        if std::os::unix::fs::symlink(&abs, dst).is_ok() {
            return Ok(false);
        }
    }
    std::fs::copy(&abs, dst).map_err(|e| DatasetError::io(dst, e))?;
    Ok(true)
}

/// Builds a view of `root` under `out_root` containing only samples that
/// meet `criteria`, as links to the original files, with its own
/// `meta.json`.
pub fn filter_symlink(
    root: &Path,
    out_root: &Path,
    criteria: &FilterCriteria,
    workers: usize,
) -> Result<FilterReport, DatasetError> {
    let meta = read_or_build_meta(root, workers)?;
    prepare_empty_dir(out_root)?;
    let mut report = FilterReport::default();
    let mut kept = BTreeMap::new();
    for (stem, rec) in &meta.samples {
        if let Some(reason) = criteria.reject_reason(rec) {
            log::info!("dropping {stem}: {reason}");
            report.dropped.insert(stem.clone(), reason);
            continue;
        }
        for rel in std::iter::once(&rec.image).chain(rec.label.as_ref()) {
            let dst = out_root.join(rel);
            if let Some(parent) = dst.parent() {
                std::fs::create_dir_all(parent).map_err(|e| DatasetError::io(parent, e))?;
            }
            if link_or_copy(&root.join(rel), &dst)? {
                report.copied.push(rel.clone());
            }
        }
        report.kept.push(stem.clone());
        kept.insert(stem.clone(), rec.clone());
    }
    std::fs::create_dir_all(out_root.join(super::IMAGE_DIR)).map_err(|e| DatasetError::io(out_root, e))?;
    MetaFile::new(kept, Vec::new()).write(out_root)?;
    let mut config = ProcessConfig::new(
        "filter_symlink",
        serde_json::to_value(criteria).unwrap_or_default(),
        root,
    );
    config.warnings = report.copied.iter().map(|c| format!("copied instead of linked: {c}")).collect();
    config.write(out_root)?;
    Ok(report)
}
