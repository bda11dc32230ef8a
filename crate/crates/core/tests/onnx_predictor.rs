#![cfg(feature = "onnx")]

use std::path::PathBuf;

use voxkit_core::infer::{
    sliding_window_infer, InferError, IoSpec, OnnxPredictor, PatchPredictor, SlidingWindowConfig, ThresholdPredictor,
};
use voxkit_core::{Geometry, Volume};

fn asset(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/assets").join(name)
}

fn logits_spec() -> IoSpec {
    IoSpec::read(&asset("io_spec_logits.json")).unwrap()
}

fn ct(size: [usize; 3]) -> Volume {
    let n: usize = size.iter().product();
    // Values straddle the [0, 100] window, including both bounds.
    let vals: Vec<i16> = (0..n).map(|i| [-1000, -1, 0, 50, 100, 101, 400][(i * 31 + i / 7) % 7]).collect();
    Volume::from_vec(Geometry::new(size, [1.0, 0.9, 0.9]), vals).unwrap()
}

#[test]
fn dynamic_graph_reproduces_threshold() {
    let v = ct([20, 18, 17]);
    let cfg = SlidingWindowConfig::new([8, 8, 8], [4, 4, 4]);
    let onnx = OnnxPredictor::load(&asset("threshold_dynamic.onnx"), logits_spec(), cfg.patch_size).unwrap();
    let threshold = ThresholdPredictor::new(0.0, 100.0).unwrap();
    let a = sliding_window_infer(&v, &onnx, &cfg).unwrap();
    let b = sliding_window_infer(&v, &threshold, &cfg).unwrap();
    assert_eq!(a.labels, b.labels);
}

#[test]
fn probability_graph_without_softmax() {
    let v = ct([10, 10, 10]);
    let cfg = SlidingWindowConfig::new([6, 6, 6], [3, 3, 3]);
    let spec = IoSpec {
        input_name: None,
        output_name: None,
        apply_softmax: false,
        class_count: 2,
    };
    let onnx = OnnxPredictor::load(&asset("threshold_probs_dynamic.onnx"), spec, cfg.patch_size).unwrap();
    let threshold = ThresholdPredictor::new(0.0, 100.0).unwrap();
    assert_eq!(
        sliding_window_infer(&v, &onnx, &cfg).unwrap().labels,
        sliding_window_infer(&v, &threshold, &cfg).unwrap().labels
    );
}

#[test]
fn fixed_graph_rejects_other_patch_size() {
    let err = OnnxPredictor::load(&asset("threshold_fixed16.onnx"), logits_spec(), [8, 8, 8]).unwrap_err();
    match err {
        InferError::InputShape { expected, actual } => {
            assert!(expected.contains("16"), "{expected}");
            assert!(actual.contains('8'), "{actual}");
        }
        other => panic!("unexpected {other}"),
    }
    assert!(OnnxPredictor::load(&asset("threshold_fixed16.onnx"), logits_spec(), [16, 16, 16]).is_ok());
}

#[test]
fn missing_model_is_load_error() {
    let err = OnnxPredictor::load(&asset("nope.onnx"), logits_spec(), [8, 8, 8]).unwrap_err();
    assert!(matches!(err, InferError::ModelLoad(_)));
}

#[test]
fn unknown_input_name() {
    let mut spec = logits_spec();
    spec.input_name = Some("ct".into());
    assert!(matches!(
        OnnxPredictor::load(&asset("threshold_dynamic.onnx"), spec, [8, 8, 8]),
        Err(InferError::ModelLoad(_))
    ));
}

#[test]
fn patch_output_equals_threshold_probabilities() {
    let size = [6, 6, 6];
    let spec = IoSpec {
        input_name: None,
        output_name: None,
        apply_softmax: false,
        class_count: 2,
    };
    let onnx = OnnxPredictor::load(&asset("threshold_probs_dynamic.onnx"), spec, size).unwrap();
    let x = ct(size).data().to_f32_vec();
    let threshold = ThresholdPredictor::new(0.0, 100.0).unwrap();
    assert_eq!(onnx.predict(&x, size).unwrap(), threshold.predict(&x, size).unwrap());
    assert!(matches!(onnx.predict(&x[..125], [5, 5, 5]), Err(InferError::InputShape { .. })));
}
