use serde::{Deserialize, Serialize};

use super::PreprocessError;
use crate::volume::{Volume, VoxelBuffer};

/// Maps `[center - width/2, center + width/2]` linearly onto `[0, 1]`,
/// clamping outside. Output is float32.
pub fn window_level(v: &Volume, center: f64, width: f64) -> Result<Volume, PreprocessError> {
    if !(width.is_finite() && width > 0.0) {
        return Err(PreprocessError::InvalidWindow(width));
    }
    let lo = center - width / 2.0;
    let out: Vec<f32> = v
        .data()
        .to_f64_vec()
        .into_iter()
        .map(|x| ((x - lo) / width).clamp(0.0, 1.0) as f32)
        .collect();
    Ok(v.with_data(VoxelBuffer::Float32(out))?)
}

/// Zero mean, unit standard deviation (population), as float32. The
/// standard deviation is floored at 1e-8 so constant input maps to zeros.
pub fn instance_normalize(v: &Volume) -> Result<Volume, PreprocessError> {
    let x = v.data().to_f64_vec();
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|&a| (a - mean) * (a - mean)).sum::<f64>() / n;
    let std = var.sqrt().max(1e-8);
    let out = x.iter().map(|&a| ((a - mean) / std) as f32).collect();
    Ok(v.with_data(VoxelBuffer::Float32(out))?)
}

/// Intensity preprocessing applied before prediction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Normalization {
    None,
    WindowLevel { center: f64, width: f64 },
    Instance,
}

impl Normalization {
    pub fn apply(&self, v: &Volume) -> Result<Volume, PreprocessError> {
        match *self {
            Normalization::None => Ok(v.with_data(VoxelBuffer::Float32(v.data().to_f32_vec()))?),
            Normalization::WindowLevel { center, width } => window_level(v, center, width),
            Normalization::Instance => instance_normalize(v),
        }
    }
}
