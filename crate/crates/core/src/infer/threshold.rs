use super::{InferError, PatchPredictor};

/// Two-class predictor: class 1 where `lo <= x <= hi`, class 0 elsewhere.
/// Looks at each voxel alone, so its sliding-window result equals
/// thresholding the whole volume.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThresholdPredictor {
    pub lo: f32,
    pub hi: f32,
}

impl ThresholdPredictor {
    pub fn new(lo: f32, hi: f32) -> Result<Self, InferError> {
        if lo.is_nan() || hi.is_nan() || lo > hi {
            return Err(InferError::InvalidConfig(format!("threshold window [{lo}, {hi}]")));
        }
        Ok(ThresholdPredictor { lo, hi })
    }

    #[inline]
    pub fn inside(&self, x: f32) -> bool {
        self.lo <= x && x <= self.hi
    }
}

impl PatchPredictor for ThresholdPredictor {
    fn num_classes(&self) -> usize {
        2
    }

    fn predict(&self, patch: &[f32], _size: [usize; 3]) -> Result<Vec<f32>, InferError> {
        let n = patch.len();
        let mut out = vec![0.0f32; 2 * n];
        for (i, &x) in patch.iter().enumerate() {
            let fg = self.inside(x);
            out[i] = if fg { 0.0 } else { 1.0 };
            out[n + i] = if fg { 1.0 } else { 0.0 };
        }
        Ok(out)
    }
}
