use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::meta::build_meta;
use super::records::{write_json, ProcessConfig};
use super::scan::{scan_pairs, IMAGE_DIR, LABEL_DIR};
use super::{prepare_empty_dir, DatasetError};
use crate::io::{read_volume, split_volume_name};
use crate::preprocess::labels::label_classes;

pub const DATASET_MANIFEST: &str = "dataset.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Layout {
    /// `image/` and `label/` matched by stem.
    Native,
    /// `imagesTr/`, `labelsTr/`, `imagesTs/` and a `dataset.json` manifest.
    Decathlon,
    /// One directory per sample holding `image.<ext>` and `label.<ext>`.
    ChannelFilePairs,
}

impl FromStr for Layout {
    type Err = DatasetError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "native" => Ok(Layout::Native),
            "decathlon" | "decathlon-style" | "monai" => Ok(Layout::Decathlon),
            "channel-file-pairs" | "torchio" => Ok(Layout::ChannelFilePairs),
            other => Err(DatasetError::UnknownLayout(other.to_string())),
        }
    }
}

#[derive(Debug)]
struct SampleFiles {
    stem: String,
    image: PathBuf,
    label: Option<PathBuf>,
}

fn extension_of(path: &Path) -> &'static str {
    path.file_name()
        .and_then(|n| n.to_str())
        .and_then(split_volume_name)
        .map_or(".mha", |(_, ext)| ext)
}

fn volumes_in(dir: &Path) -> Result<BTreeMap<String, PathBuf>, DatasetError> {
    let mut out = BTreeMap::new();
    if !dir.is_dir() {
        return Ok(out);
    }
    for entry in std::fs::read_dir(dir).map_err(|e| DatasetError::io(dir, e))? {
        let path = entry.map_err(|e| DatasetError::io(dir, e))?.path();
        if let Some((stem, _)) = path.file_name().and_then(|n| n.to_str()).and_then(split_volume_name) {
            out.insert(stem.to_string(), path.clone());
        }
    }
    Ok(out)
}

fn sorted_subdirs(root: &Path) -> Result<Vec<PathBuf>, DatasetError> {
    let mut dirs = Vec::new();
    for entry in std::fs::read_dir(root).map_err(|e| DatasetError::io(root, e))? {
        let path = entry.map_err(|e| DatasetError::io(root, e))?.path();
        if path.is_dir() {
            dirs.push(path);
        }
    }
    dirs.sort();
    Ok(dirs)
}

/// Guesses the layout of an existing dataset from its directory names.
pub fn detect_layout(root: &Path) -> Result<Layout, DatasetError> {
    if root.join(IMAGE_DIR).is_dir() {
        return Ok(Layout::Native);
    }
    if root.join("imagesTr").is_dir() || root.join("imagesTs").is_dir() {
        return Ok(Layout::Decathlon);
    }
    for dir in sorted_subdirs(root)? {
        if volumes_in(&dir)?.contains_key("image") {
            return Ok(Layout::ChannelFilePairs);
        }
    }
    Err(DatasetError::UnrecognisedLayout(root.to_path_buf()))
}

fn collect(root: &Path, layout: Layout) -> Result<Vec<SampleFiles>, DatasetError> {
    let mut out = Vec::new();
    match layout {
        Layout::Native => {
            for p in scan_pairs(root)?.pairs {
                out.push(SampleFiles {
                    stem: p.stem,
                    image: p.image_path,
                    label: p.label_path,
                });
            }
        }
        Layout::Decathlon => {
            let mut labels = volumes_in(&root.join("labelsTr"))?;
            for sub in ["imagesTr", "imagesTs"] {
                for (stem, image) in volumes_in(&root.join(sub))? {
                    let label = labels.remove(&stem);
                    out.push(SampleFiles { stem, image, label });
                }
            }
            out.sort_by(|a, b| a.stem.cmp(&b.stem));
        }
        Layout::ChannelFilePairs => {
            for dir in sorted_subdirs(root)? {
                let mut files = volumes_in(&dir)?;
                let Some(image) = files.remove("image") else {
                    continue;
                };
                let stem = dir.file_name().and_then(|n| n.to_str()).unwrap_or_default().to_string();
                out.push(SampleFiles {
                    stem,
                    image,
                    label: files.remove("label"),
                });
            }
        }
    }
    Ok(out)
}

fn copy(src: &Path, dst: &Path) -> Result<(), DatasetError> {
    if let Some(parent) = dst.parent() {
        std::fs::create_dir_all(parent).map_err(|e| DatasetError::io(parent, e))?;
    }
    std::fs::copy(src, dst).map_err(|e| DatasetError::io(src, e))?;
    Ok(())
}

fn decathlon_manifest(root: &Path, out_root: &Path, samples: &[SampleFiles]) -> Result<serde_json::Value, DatasetError> {
    let mut training = Vec::new();
    let mut test = Vec::new();
    let mut classes = BTreeSet::new();
    for s in samples {
        let ext = extension_of(&s.image);
        match &s.label {
            Some(l) => {
                let label = read_volume(l).map_err(|e| DatasetError::format(l, e))?;
                classes.extend(label_classes(&label));
                training.push(json!({
                    "image": format!("./imagesTr/{}{ext}", s.stem),
                    "label": format!("./labelsTr/{}{}", s.stem, extension_of(l)),
                }));
            }
            None => test.push(json!(format!("./imagesTs/{}{ext}", s.stem))),
        }
    }
    let labels: BTreeMap<String, String> = classes
        .into_iter()
        .map(|c| (c.to_string(), if c == 0 { "background".into() } else { format!("class_{c}") }))
        .collect();
    let name = root
        .canonicalize()
        .ok()
        .and_then(|p| p.file_name().map(|n| n.to_string_lossy().into_owned()))
        .unwrap_or_else(|| out_root.display().to_string());
    Ok(json!({
        "name": name,
        "tensorImageSize": "3D",
        "modality": {"0": "image"},
        "labels": labels,
        "numTraining": training.len(),
        "numTest": test.len(),
        "training": training,
        "test": test,
    }))
}

/// Copies a dataset into another layout. The source layout is detected;
/// files are copied byte for byte.
pub fn convert_layout(root: &Path, out_root: &Path, target: Layout, workers: usize) -> Result<usize, DatasetError> {
    let source = detect_layout(root)?;
    let samples = collect(root, source)?;
    prepare_empty_dir(out_root)?;
    for s in &samples {
        let ext = extension_of(&s.image);
        let (image_dst, label_dst) = match target {
            Layout::Native => (
                out_root.join(IMAGE_DIR).join(format!("{}{ext}", s.stem)),
                s.label
                    .as_ref()
                    .map(|l| out_root.join(LABEL_DIR).join(format!("{}{}", s.stem, extension_of(l)))),
            ),
            Layout::Decathlon => {
                let sub = if s.label.is_some() { "imagesTr" } else { "imagesTs" };
                (
                    out_root.join(sub).join(format!("{}{ext}", s.stem)),
                    s.label
                        .as_ref()
                        .map(|l| out_root.join("labelsTr").join(format!("{}{}", s.stem, extension_of(l)))),
                )
            }
            Layout::ChannelFilePairs => (
                out_root.join(&s.stem).join(format!("image{ext}")),
                s.label
                    .as_ref()
                    .map(|l| out_root.join(&s.stem).join(format!("label{}", extension_of(l)))),
            ),
        };
        copy(&s.image, &image_dst)?;
        if let (Some(src), Some(dst)) = (&s.label, &label_dst) {
            copy(src, dst)?;
        }
    }
    match target {
        Layout::Native => {
            std::fs::create_dir_all(out_root.join(IMAGE_DIR)).map_err(|e| DatasetError::io(out_root, e))?;
            build_meta(out_root, workers)?;
        }
        Layout::Decathlon => {
            let manifest = decathlon_manifest(root, out_root, &samples)?;
            write_json(&out_root.join(DATASET_MANIFEST), &manifest)?;
        }
        Layout::ChannelFilePairs => {}
    }
    ProcessConfig::new(
        "convert",
        json!({"source_layout": source, "target_layout": target}),
        root,
    )
    .write(out_root)?;
    Ok(samples.len())
}
