use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde::Deserialize;
use serde_json::{json, Value};
use voxkit_core::infer::PredictorSpec;
use voxkit_core::io::{read_volume_bytes, write_mha_bytes};

use crate::error::ApiError;
use crate::render::{mask_slice_png, slice_png, Axis};
use crate::state::{AppState, SegmentRequest, SegmentationJob, VolumeMeta};

pub async fn health() -> Json<Value> {
    Json(json!({
        "status": "ok",
        "version": crate::VERSION,
        "predictors": PredictorSpec::available(),
    }))
}

#[derive(Debug, Deserialize)]
pub struct UploadQuery {
    filename: Option<String>,
}

pub async fn upload(
    State(state): State<AppState>,
    Query(q): Query<UploadQuery>,
    body: Bytes,
) -> Result<(StatusCode, Json<Value>), ApiError> {
    let volume = tokio::task::spawn_blocking(move || read_volume_bytes(&body))
        .await
        .map_err(|e| ApiError::internal(e.to_string()))?
        .map_err(|e| ApiError::bad_request(e.name(), e.to_string()))?;
    let (id, meta) = state.insert_volume(volume, q.filename);
    Ok((StatusCode::CREATED, Json(json!({"id": id, "meta": meta}))))
}

pub async fn volume_meta(State(state): State<AppState>, Path(id): Path<String>) -> Result<Json<VolumeMeta>, ApiError> {
    Ok(Json(state.volume(&id)?.meta.clone()))
}

#[derive(Debug, Deserialize)]
pub struct SliceQuery {
    axis: Option<String>,
    /// Defaults to the middle slice.
    index: Option<usize>,
    /// Window centre and width; the full intensity range when absent.
    wl: Option<f64>,
    ww: Option<f64>,
}

fn parse_axis(raw: Option<&str>) -> Result<Axis, ApiError> {
    raw.unwrap_or("z")
        .parse()
        .map_err(|e: String| ApiError::bad_request("InvalidRequest", e))
}

fn png(bytes: Vec<u8>) -> Response {
    ([(header::CONTENT_TYPE, "image/png")], bytes).into_response()
}

fn out_of_range(message: String) -> ApiError {
    ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "IndexOutOfRange", message)
}

pub async fn volume_slice(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Query(q): Query<SliceQuery>,
) -> Result<Response, ApiError> {
    let stored = state.volume(&id)?;
    let axis = parse_axis(q.axis.as_deref())?;
    let index = q.index.unwrap_or(stored.meta.size[axis.index()] / 2);
    let (lo, hi) = (stored.meta.min, stored.meta.max);
    let width = q.ww.unwrap_or(if hi > lo { hi - lo } else { 1.0 });
    let center = q.wl.unwrap_or((lo + hi) / 2.0);
    if !(width.is_finite() && width > 0.0) {
        return Err(ApiError::bad_request("InvalidRequest", format!("window width must be positive, got {width}")));
    }
    let bytes = tokio::task::spawn_blocking(move || slice_png(&stored.volume, axis, index, center, width))
        .await
        .map_err(|e| ApiError::internal(e.to_string()))?
        .map_err(out_of_range)?;
    Ok(png(bytes))
}

pub async fn segment(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Json(request): Json<SegmentRequest>,
) -> Result<(StatusCode, Json<SegmentationJob>), ApiError> {
    let job = state.submit(&id, request)?;
    Ok((StatusCode::ACCEPTED, Json(job)))
}

pub async fn job(State(state): State<AppState>, Path(id): Path<String>) -> Result<Json<SegmentationJob>, ApiError> {
    Ok(Json(state.job(&id)?))
}

/// The mask as a compressed MetaImage, byte-identical to what the CLI
/// writes for the same labels.
pub async fn mask(State(state): State<AppState>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let mask = state.mask(&id)?;
    let bytes = tokio::task::spawn_blocking(move || write_mha_bytes(&mask, true))
        .await
        .map_err(|e| ApiError::internal(e.to_string()))?
        .map_err(|e| ApiError::internal(e.to_string()))?;
    Ok(([(header::CONTENT_TYPE, "application/octet-stream")], bytes).into_response())
}

#[derive(Debug, Deserialize)]
pub struct MaskSliceQuery {
    axis: Option<String>,
    index: Option<usize>,
}

pub async fn mask_slice(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Query(q): Query<MaskSliceQuery>,
) -> Result<Response, ApiError> {
    let mask = state.mask(&id)?;
    let axis = parse_axis(q.axis.as_deref())?;
    let index = q.index.unwrap_or(mask.size()[axis.index()] / 2);
    let bytes = mask_slice_png(&mask, axis, index).map_err(out_of_range)?;
    Ok(png(bytes))
}
