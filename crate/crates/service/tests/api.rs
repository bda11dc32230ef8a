use std::time::Duration;

use axum::body::{to_bytes, Body};
use axum::http::{Request, StatusCode};
use axum::Router;
use serde_json::{json, Value};
use tower::ServiceExt;
use voxkit_core::infer::{sliding_window_infer, SlidingWindowConfig, ThresholdPredictor};
use voxkit_core::io::write_mha_bytes;
use voxkit_core::{Geometry, Volume};
use voxkit_service::{router, AppState, ServiceConfig, PALETTE};

fn app() -> Router {
    router(AppState::new(ServiceConfig::default()))
}

fn ramp(size: [usize; 3]) -> Volume {
    let n = size.iter().product::<usize>();
    let data: Vec<f64> = (0..n).map(|i| ((i * 37) % 200) as f64 - 50.0).collect();
    let mut g = Geometry::new(size, [0.8, 0.7, 1.5]);
    g.origin = [3.0, -2.0, 10.0];
    Volume::from_vec(g, data).unwrap()
}

async fn send(app: &Router, req: Request<Body>) -> (StatusCode, Vec<u8>) {
    let res = app.clone().oneshot(req).await.unwrap();
    let status = res.status();
    let body = to_bytes(res.into_body(), usize::MAX).await.unwrap();
    (status, body.to_vec())
}

async fn get(app: &Router, uri: &str) -> (StatusCode, Vec<u8>) {
    send(app, Request::get(uri).body(Body::empty()).unwrap()).await
}

async fn post_json(app: &Router, uri: &str, body: Value) -> (StatusCode, Value) {
    let req = Request::post(uri)
        .header("content-type", "application/json")
        .body(Body::from(body.to_string()))
        .unwrap();
    let (s, b) = send(app, req).await;
    (s, serde_json::from_slice(&b).unwrap_or(Value::Null))
}

async fn upload(app: &Router, v: &Volume) -> String {
    let req = Request::post("/volumes?filename=ct.mha")
        .body(Body::from(write_mha_bytes(v, false).unwrap()))
        .unwrap();
    let (status, body) = send(app, req).await;
    assert_eq!(status, StatusCode::CREATED);
    let body: Value = serde_json::from_slice(&body).unwrap();
    body["id"].as_str().unwrap().to_string()
}

async fn wait_job(app: &Router, id: &str) -> Value {
    for _ in 0..2000 {
        let (status, body) = get(app, &format!("/jobs/{id}")).await;
        assert_eq!(status, StatusCode::OK);
        let job: Value = serde_json::from_slice(&body).unwrap();
        if job["state"] == "done" || job["state"] == "failed" {
            return job;
        }
        tokio::time::sleep(Duration::from_millis(5)).await;
    }
    panic!("job {id} did not finish");
}

fn decode_png(bytes: &[u8]) -> (png::OutputInfo, Vec<u8>) {
    let mut reader = png::Decoder::new(bytes).read_info().unwrap();
    let mut buf = vec![0; reader.output_buffer_size()];
    let info = reader.next_frame(&mut buf).unwrap();
    buf.truncate(info.buffer_size());
    (info, buf)
}

#[tokio::test]
async fn health_lists_predictors() {
    let (status, body) = get(&app(), "/health").await;
    assert_eq!(status, StatusCode::OK);
    let body: Value = serde_json::from_slice(&body).unwrap();
    assert_eq!(body["status"], "ok");
    assert!(body["predictors"].as_array().unwrap().contains(&json!("threshold")));
}

#[tokio::test]
async fn upload_reports_geometry() {
    let app = app();
    let v = ramp([5, 6, 7]);
    let id = upload(&app, &v).await;
    let (status, body) = get(&app, &format!("/volumes/{id}")).await;
    assert_eq!(status, StatusCode::OK);
    let meta: Value = serde_json::from_slice(&body).unwrap();
    assert_eq!(meta["size"], json!([5, 6, 7]));
    assert_eq!(meta["spacing"], json!([0.8, 0.7, 1.5]));
    assert_eq!(meta["origin"], json!([3.0, -2.0, 10.0]));
    assert_eq!(meta["orientation"], "SPL");
    assert_eq!(meta["filename"], "ct.mha");
}

#[tokio::test]
async fn garbage_upload_is_a_parse_error() {
    let app = app();
    let (status, body) = send(&app, Request::post("/volumes").body(Body::from("not a volume")).unwrap()).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let body: Value = serde_json::from_slice(&body).unwrap();
    assert_eq!(body["error"], "UnknownFormat");
}

#[tokio::test]
async fn unknown_ids_are_not_found() {
    let app = app();
    for uri in ["/volumes/v999", "/volumes/v999/slice", "/jobs/j1", "/masks/m1", "/masks/m1/slice"] {
        let (status, body) = get(&app, uri).await;
        assert_eq!(status, StatusCode::NOT_FOUND, "{uri}");
        let body: Value = serde_json::from_slice(&body).unwrap();
        assert_eq!(body["error"], "NotFound");
    }
}

#[tokio::test]
async fn slices_have_plane_dimensions() {
    let app = app();
    let v = ramp([4, 5, 6]);
    let id = upload(&app, &v).await;
    for (axis, w, h) in [("z", 6, 5), ("y", 6, 4), ("x", 5, 4)] {
        let (status, bytes) = get(&app, &format!("/volumes/{id}/slice?axis={axis}&index=1")).await;
        assert_eq!(status, StatusCode::OK);
        let (info, _) = decode_png(&bytes);
        assert_eq!((info.width, info.height), (w, h), "axis {axis}");
        assert_eq!(info.color_type, png::ColorType::Grayscale);
    }
    let (status, _) = get(&app, &format!("/volumes/{id}/slice?axis=z&index=4")).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    let (status, _) = get(&app, &format!("/volumes/{id}/slice?axis=q")).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn slice_window_matches_definition() {
    let app = app();
    let g = Geometry::new([1, 1, 4], [1.0; 3]);
    let v = Volume::from_vec(g, vec![-100.0, 0.0, 25.0, 100.0]).unwrap();
    let id = upload(&app, &v).await;
    let (_, bytes) = get(&app, &format!("/volumes/{id}/slice?axis=z&index=0&wl=0&ww=100")).await;
    let (_, pixels) = decode_png(&bytes);
    // window [-50, 50]: clamp((x + 50) / 100) * 255
    assert_eq!(pixels, vec![0, 128, 191, 255]);
}

#[tokio::test]
async fn threshold_job_mask_matches_library() {
    let app = app();
    let v = ramp([12, 10, 9]);
    let id = upload(&app, &v).await;
    let (status, job) = post_json(
        &app,
        &format!("/volumes/{id}/segment"),
        json!({"predictor": "threshold", "lo": 0.0, "hi": 80.0, "patch_size": [8, 8, 8], "stride": [4, 4, 4]}),
    )
    .await;
    assert_eq!(status, StatusCode::ACCEPTED);
    assert_eq!(job["state"], "queued");
    let done = wait_job(&app, job["id"].as_str().unwrap()).await;
    assert_eq!(done["state"], "done", "{done}");
    assert_eq!(done["progress"], 1.0);
    let mask_id = done["mask_id"].as_str().unwrap();
    let (status, served) = get(&app, &format!("/masks/{mask_id}")).await;
    assert_eq!(status, StatusCode::OK);

    let expected = sliding_window_infer(
        &v,
        &ThresholdPredictor::new(0.0, 80.0).unwrap(),
        &SlidingWindowConfig::new([8, 8, 8], [4, 4, 4]),
    )
    .unwrap();
    assert_eq!(served, write_mha_bytes(&expected.labels, true).unwrap());

    let (status, bytes) = get(&app, &format!("/masks/{mask_id}/slice?axis=z&index=0")).await;
    assert_eq!(status, StatusCode::OK);
    let (info, rgba) = decode_png(&bytes);
    assert_eq!(info.color_type, png::ColorType::Rgba);
    let labels = expected.labels.data().to_f64_vec();
    for (i, px) in rgba.chunks(4).enumerate() {
        if labels[i] == 0.0 {
            assert_eq!(px[3], 0);
        } else {
            assert_eq!(px, [PALETTE[1][0], PALETTE[1][1], PALETTE[1][2], 255]);
        }
    }
}

#[tokio::test]
async fn bad_segment_requests_are_rejected() {
    let app = app();
    let id = upload(&app, &ramp([4, 4, 4])).await;
    let uri = format!("/volumes/{id}/segment");
    let (status, body) = post_json(&app, &uri, json!({"predictor": "magic", "patch_size": [4, 4, 4], "stride": [4, 4, 4]})).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(body["error"], "UnknownPredictor");
    let (status, _) = post_json(&app, &uri, json!({"predictor": "threshold", "lo": 0, "hi": 1, "patch_size": [4, 4, 4], "stride": [5, 4, 4]})).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let (status, _) = post_json(&app, &uri, json!({"predictor": "threshold", "patch_size": [4, 4, 4], "stride": [4, 4, 4]})).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let (status, _) = post_json(&app, "/volumes/v999/segment", json!({"predictor": "threshold", "lo": 0, "hi": 1, "patch_size": [4, 4, 4], "stride": [4, 4, 4]})).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

#[cfg(feature = "onnx")]
#[tokio::test]
async fn missing_model_fails_the_job() {
    let app = app();
    let id = upload(&app, &ramp([4, 4, 4])).await;
    let (status, job) = post_json(
        &app,
        &format!("/volumes/{id}/segment"),
        json!({"predictor": "onnx", "model": "/nonexistent/model.onnx", "io_spec": {"class_count": 2},
               "patch_size": [4, 4, 4], "stride": [4, 4, 4]}),
    )
    .await;
    assert_eq!(status, StatusCode::ACCEPTED);
    let done = wait_job(&app, job["id"].as_str().unwrap()).await;
    assert_eq!(done["state"], "failed");
    assert!(done["error"].as_str().unwrap().contains("model"));
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn concurrent_requests_keep_volumes_apart() {
    let app = app();
    let mut tasks = Vec::new();
    for k in 0..16usize {
        let app = app.clone();
        tasks.push(tokio::spawn(async move {
            let size = [2 + k % 3, 3 + k % 4, 4 + k % 5];
            let v = ramp(size);
            let id = upload(&app, &v).await;
            let (status, body) = get(&app, &format!("/volumes/{id}")).await;
            assert_eq!(status, StatusCode::OK);
            let meta: Value = serde_json::from_slice(&body).unwrap();
            assert_eq!(meta["size"], json!(size));
            let (status, job) = post_json(
                &app,
                &format!("/volumes/{id}/segment"),
                json!({"predictor": "threshold", "lo": 0.0, "hi": 50.0, "patch_size": [2, 2, 2], "stride": [1, 2, 2]}),
            )
            .await;
            assert_eq!(status, StatusCode::ACCEPTED);
            let done = wait_job(&app, job["id"].as_str().unwrap()).await;
            assert_eq!(done["volume_id"], json!(id));
            let (_, served) = get(&app, &format!("/masks/{}", done["mask_id"].as_str().unwrap())).await;
            let expected = sliding_window_infer(
                &v,
                &ThresholdPredictor::new(0.0, 50.0).unwrap(),
                &SlidingWindowConfig::new([2, 2, 2], [1, 2, 2]),
            )
            .unwrap();
            assert_eq!(served, write_mha_bytes(&expected.labels, true).unwrap());
        }));
    }
    for t in tasks {
        t.await.unwrap();
    }
}
