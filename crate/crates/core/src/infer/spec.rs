use serde::{Deserialize, Serialize};

use super::{InferError, PatchPredictor, ThresholdPredictor};

/// Which predictor to build; shared by the CLI and the service so both run
/// the same code.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "predictor", rename_all = "lowercase")]
pub enum PredictorSpec {
    Threshold {
        lo: f32,
        hi: f32,
    },
    #[cfg(feature = "onnx")]
    Onnx {
        model: std::path::PathBuf,
        io_spec: super::IoSpec,
    },
}

impl PredictorSpec {
    /// Names accepted in the `predictor` field.
    pub fn available() -> Vec<&'static str> {
        let mut v = vec!["threshold"];
        if cfg!(feature = "onnx") {
            v.push("onnx");
        }
        v
    }

    #[cfg_attr(not(feature = "onnx"), allow(unused_variables))]
    pub fn build(&self, patch_size: [usize; 3]) -> Result<Box<dyn PatchPredictor>, InferError> {
        match self {
            PredictorSpec::Threshold { lo, hi } => Ok(Box::new(ThresholdPredictor::new(*lo, *hi)?)),
            #[cfg(feature = "onnx")]
            PredictorSpec::Onnx { model, io_spec } => {
                Ok(Box::new(super::OnnxPredictor::load(model, io_spec.clone(), patch_size)?))
            }
        }
    }
}
