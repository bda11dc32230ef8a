use std::path::Path;

use serde::{Deserialize, Serialize};
use tract_onnx::prelude::*;
use tract_onnx::tract_hir::infer::Factoid;

use super::{softmax_classes, InferError, PatchPredictor};

/// How to feed and read an ONNX segmentation graph.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IoSpec {
    /// Graph input name; the first input when absent.
    #[serde(default)]
    pub input_name: Option<String>,
    /// Graph output name; the first output when absent.
    #[serde(default)]
    pub output_name: Option<String>,
    /// The output holds logits to be normalised over the class axis.
    #[serde(default)]
    pub apply_softmax: bool,
    pub class_count: usize,
}

impl IoSpec {
    pub fn read(path: &Path) -> Result<Self, InferError> {
        let text = std::fs::read_to_string(path).map_err(|e| InferError::ModelLoad(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| InferError::ModelLoad(format!("{}: {e}", path.display())))
    }
}

type Plan = TypedRunnableModel<TypedModel>;

/// Runs an ONNX graph with an `NCDHW` float32 input of shape
/// `[1, 1, Z, Y, X]` and an `NCDHW` output of `[1, C, Z, Y, X]`.
pub struct OnnxPredictor {
    plan: Plan,
    spec: IoSpec,
    patch_size: [usize; 3],
}

impl std::fmt::Debug for OnnxPredictor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("OnnxPredictor")
            .field("spec", &self.spec)
            .field("patch_size", &self.patch_size)
            .finish()
    }
}

fn load_err(e: impl std::fmt::Display) -> InferError {
    InferError::ModelLoad(format!("{e:#}"))
}

impl OnnxPredictor {
    /// Loads `model_path` and specialises it for patches of `patch_size`.
    pub fn load(model_path: &Path, spec: IoSpec, patch_size: [usize; 3]) -> Result<Self, InferError> {
        if !model_path.is_file() {
            return Err(InferError::ModelLoad(format!("model file {} not found", model_path.display())));
        }
        if spec.class_count == 0 {
            return Err(InferError::InvalidConfig("class_count must be positive".into()));
        }
        let mut model = tract_onnx::onnx().model_for_path(model_path).map_err(load_err)?;

        if let Some(name) = &spec.input_name {
            let outlet = model
                .input_outlets()
                .map_err(load_err)?
                .iter()
                .copied()
                .find(|o| model.node(o.node).name == *name)
                .ok_or_else(|| InferError::ModelLoad(format!("graph has no input named {name:?}")))?;
            model.set_input_outlets(&[outlet]).map_err(load_err)?;
        }
        if let Some(name) = &spec.output_name {
            model.set_output_names([name.as_str()]).map_err(load_err)?;
        }

        let wanted = [1, 1, patch_size[0], patch_size[1], patch_size[2]];
        let declared = model.input_fact(0).map_err(load_err)?.shape.clone();
        let dims: Vec<Option<usize>> = declared
            .dims()
            .map(|d| d.concretize().and_then(|t| t.as_i64()).map(|v| v as usize))
            .collect();
        if !declared.is_open() && dims.len() != 5 {
            return Err(InferError::InputShape {
                expected: format!("rank {}", dims.len()),
                actual: format!("{wanted:?}"),
            });
        }
        if dims.iter().zip(wanted).any(|(d, w)| d.is_some_and(|d| d != w)) {
            let shown: Vec<String> = dims.iter().map(|d| d.map_or("?".into(), |v| v.to_string())).collect();
            return Err(InferError::InputShape {
                expected: format!("[{}]", shown.join(", ")),
                actual: format!("{wanted:?}"),
            });
        }

        let plan = model
            .with_input_fact(0, f32::fact(wanted).into())
            .map_err(load_err)?
            .into_optimized()
            .map_err(load_err)?
            .into_runnable()
            .map_err(load_err)?;
        Ok(OnnxPredictor { plan, spec, patch_size })
    }

    pub fn io_spec(&self) -> &IoSpec {
        &self.spec
    }
}

impl PatchPredictor for OnnxPredictor {
    fn num_classes(&self) -> usize {
        self.spec.class_count
    }

    fn predict(&self, patch: &[f32], size: [usize; 3]) -> Result<Vec<f32>, InferError> {
        if size != self.patch_size {
            return Err(InferError::InputShape {
                expected: format!("{:?}", self.patch_size),
                actual: format!("{size:?}"),
            });
        }
        let input = Tensor::from_shape(&[1, 1, size[0], size[1], size[2]], patch).map_err(InferError::predict)?;
        let outputs = self.plan.run(tvec!(input.into())).map_err(InferError::predict)?;
        let out = outputs[0].to_array_view::<f32>().map_err(InferError::predict)?;
        let expected = [1, self.spec.class_count, size[0], size[1], size[2]];
        if out.shape() != expected {
            return Err(InferError::OutputShape {
                expected: expected.iter().product(),
                actual: out.len(),
            });
        }
        let mut values: Vec<f32> = out.iter().copied().collect();
        if self.spec.apply_softmax {
            softmax_classes(&mut values, self.spec.class_count);
        }
        Ok(values)
    }
}
