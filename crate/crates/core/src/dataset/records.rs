use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::DatasetError;
use crate::json;
use crate::volume::ElementType;

pub const META_FILE: &str = "meta.json";
pub const CROP_META_FILE: &str = "crop_meta.json";
pub const REMAP_META_FILE: &str = "remap_meta.json";
pub const PROCESS_CONFIG_FILE: &str = "process_config.json";

pub const TOOL: &str = "voxkit";
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Per-sample geometry summary stored in `meta.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetaRecord {
    pub stem: String,
    /// Image path relative to the dataset root.
    pub image: String,
    pub label: Option<String>,
    pub size: [usize; 3],
    pub spacing: [f64; 3],
    pub origin: [f64; 3],
    pub orientation: String,
    pub element_type: ElementType,
    /// Sorted distinct label values; absent for unlabeled samples.
    pub label_classes: Option<Vec<i64>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetaErrorEntry {
    pub stem: String,
    pub path: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Generator {
    pub tool: String,
    pub version: String,
    pub timestamp: u64,
}

impl Generator {
    pub fn current() -> Self {
        Generator {
            tool: TOOL.into(),
            version: VERSION.into(),
            timestamp: json::timestamp(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetaFile {
    pub samples: BTreeMap<String, MetaRecord>,
    pub errors: Vec<MetaErrorEntry>,
    pub generator: Generator,
}

impl MetaFile {
    pub fn new(samples: BTreeMap<String, MetaRecord>, errors: Vec<MetaErrorEntry>) -> Self {
        MetaFile {
            samples,
            errors,
            generator: Generator::current(),
        }
    }

    pub fn read(root: &Path) -> Result<Self, DatasetError> {
        read_json(&root.join(META_FILE))
    }

    pub fn write(&self, root: &Path) -> Result<(), DatasetError> {
        write_json(&root.join(META_FILE), self)
    }
}

/// Where one patch came from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CropMetaRecord {
    pub patch_stem: String,
    pub source_stem: String,
    pub index_offset: [usize; 3],
    pub patch_size: [usize; 3],
    pub stride: [usize; 3],
    pub source_size: [usize; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CropMetaFile {
    pub source_dataset: String,
    pub patch_size: [usize; 3],
    pub patch_stride: [usize; 3],
    pub patches: BTreeMap<String, CropMetaRecord>,
}

impl CropMetaFile {
    pub fn read(root: &Path) -> Result<Self, DatasetError> {
        read_json(&root.join(CROP_META_FILE))
    }

    pub fn write(&self, root: &Path) -> Result<(), DatasetError> {
        write_json(&root.join(CROP_META_FILE), self)
    }
}

/// Label remapping provenance, one record per relabelled sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemapMetaFile {
    pub source_dataset: String,
    pub mapping: BTreeMap<String, i64>,
    pub samples: BTreeMap<String, RemapRecord>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RemapRecord {
    pub source_stem: String,
    pub classes_before: Vec<i64>,
    pub classes_after: Vec<i64>,
}

/// The processing configuration written next to every batch output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProcessConfig {
    pub operation: String,
    pub params: serde_json::Value,
    pub tool: String,
    pub version: String,
    pub source_dataset: String,
    pub warnings: Vec<String>,
}

impl ProcessConfig {
    pub fn new(operation: &str, params: serde_json::Value, source: &Path) -> Self {
        ProcessConfig {
            operation: operation.into(),
            params,
            tool: TOOL.into(),
            version: VERSION.into(),
            source_dataset: source.display().to_string(),
            warnings: Vec::new(),
        }
    }

    pub fn write(&self, root: &Path) -> Result<(), DatasetError> {
        write_json(&root.join(PROCESS_CONFIG_FILE), self)
    }
}

pub(crate) fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, DatasetError> {
    let text = std::fs::read_to_string(path).map_err(|e| DatasetError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| DatasetError::Json {
        path: path.to_path_buf(),
        source: e,
    })
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), DatasetError> {
    json::write_json(path, value).map_err(|e| DatasetError::io(path, e))
}
