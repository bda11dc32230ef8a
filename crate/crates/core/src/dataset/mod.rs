//! Pair-centric dataset layout.
//!
//! A native dataset root holds `image/` and an optional `label/` directory
//! whose files are matched by stem, plus `meta.json` describing every pair.

use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::io::FormatError;

mod convert;
mod filter;
mod meta;
mod records;
mod scan;

pub use convert::{convert_layout, detect_layout, Layout, DATASET_MANIFEST};
pub use filter::{filter_symlink, FilterCriteria, FilterReport};
pub use meta::{build_meta, meta_records, read_or_build_meta, verify_meta, Mismatch};
pub use records::{
    CropMetaFile, CropMetaRecord, Generator, MetaErrorEntry, MetaFile, MetaRecord, ProcessConfig, RemapMetaFile,
    RemapRecord, CROP_META_FILE, META_FILE, PROCESS_CONFIG_FILE, REMAP_META_FILE, TOOL, VERSION,
};
pub(crate) use records::write_json;
pub use scan::{scan_pairs, ScanResult, SamplePair, IMAGE_DIR, LABEL_DIR};

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}: {source}", path.display())]
    Format {
        path: PathBuf,
        #[source]
        source: FormatError,
    },
    #[error("{}: invalid JSON: {source}", path.display())]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("missing image directory {}", .0.display())]
    MissingImageDir(PathBuf),
    #[error("stem {0:?} appears more than once in {1}")]
    DuplicateStem(String, String),
    #[error("output directory {} is not empty", .0.display())]
    OutputNotEmpty(PathBuf),
    #[error("unknown layout {0:?}")]
    UnknownLayout(String),
    #[error("cannot recognise the layout of {}", .0.display())]
    UnrecognisedLayout(PathBuf),
    #[error("meta.json disagrees with the files: {0}")]
    Inconsistent(String),
}

impl DatasetError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        DatasetError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub(crate) fn format(path: &Path, source: FormatError) -> Self {
        DatasetError::Format {
            path: path.to_path_buf(),
            source,
        }
    }
}

/// Creates `dir` (and parents), failing if it already has entries.
pub fn prepare_empty_dir(dir: &Path) -> Result<(), DatasetError> {
    if dir.exists() {
        let mut entries = std::fs::read_dir(dir).map_err(|e| DatasetError::io(dir, e))?;
        if entries.next().is_some() {
            return Err(DatasetError::OutputNotEmpty(dir.to_path_buf()));
        }
    }
    std::fs::create_dir_all(dir).map_err(|e| DatasetError::io(dir, e))
}
