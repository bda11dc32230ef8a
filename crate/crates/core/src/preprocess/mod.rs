//! Geometric and intensity transforms on volumes.

use thiserror::Error;

use crate::volume::VolumeError;

pub mod augment;
pub mod intensity;
pub mod labels;
pub mod patch;
pub mod resample;

pub use augment::{augment_pair, Transform};
pub use intensity::{instance_normalize, window_level, Normalization};
pub use labels::{remap_labels, LabelMap};
pub use patch::{assemble_patches, crop, patch_positions, patch_stem, split_patches, Patch, PatchGrid, Reduce};
pub use resample::{resample, resampled_geometry, Interpolation, ResampleSpec, ResampleTarget};

#[derive(Debug, Error)]
pub enum PreprocessError {
    #[error("invalid parameters: {0}")]
    InvalidSpec(String),
    #[error("trilinear interpolation requested on a label volume")]
    TrilinearOnLabel,
    #[error("{} length {length} is smaller than patch {patch}", axis_name(*.axis))]
    TooSmall {
        axis: Option<usize>,
        length: usize,
        patch: usize,
    },
    #[error("shape mismatch: expected {expected:?}, found {actual:?}")]
    ShapeMismatch {
        expected: [usize; 3],
        actual: [usize; 3],
    },
    #[error("window width must be positive, got {0}")]
    InvalidWindow(f64),
    #[error("label volume must have an integer element type, found {0}")]
    NotIntegerLabels(String),
    #[error("label value {0} does not fit the output element type")]
    LabelOutOfRange(i64),
    #[error("gamma needs intensities in [0, 1], found range [{min}, {max}]")]
    GammaRange { min: f64, max: f64 },
    #[error("exact rotation by {turns} quarter turns needs a square plane, found {a}x{b}")]
    AxesIncompatible { turns: u8, a: usize, b: usize },
    #[error("no patches to assemble")]
    EmptyPatches,
    #[error(transparent)]
    Volume(#[from] VolumeError),
}

fn axis_name(axis: Option<usize>) -> &'static str {
    match axis {
        Some(0) => "Z",
        Some(1) => "Y",
        Some(2) => "X",
        _ => "axis",
    }
}
