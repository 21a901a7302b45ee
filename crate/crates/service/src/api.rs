use std::sync::Arc;

use axum::extract::{Path, Query, State};
use axum::http::header;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use chrono::{DateTime, Utc};
use image::codecs::png::PngEncoder;
use image::{ExtendedColorType, ImageEncoder};
use serde::{Deserialize, Serialize};
use tilescan_core::benchmark::{coverage, new_detections, table1_report, FacilityType, Table1Report, COVERAGE_RADIUS_KM};
use tilescan_core::geo::{BoundingRegion, TILE_PIXELS};
use tilescan_core::pipeline::DetectionId;
use tilescan_core::scoring::protocol::{feature_map_path, read_feature_map};
use tilescan_core::scoring::compute_cam;
use tilescan_core::store::{verified_geojson, ReviewAction, ReviewEvent, ReviewStatus, ReviewedDetection, ReviewedType};

use crate::error::ApiError;
use crate::schema::openapi_document;
use crate::AppState;

pub const DEFAULT_PAGE_SIZE: usize = 100;
pub const MAX_PAGE_SIZE: usize = 1000;

type Shared = State<Arc<AppState>>;
type ApiResult<T> = Result<T, ApiError>;

pub(crate) fn routes() -> Router<Arc<AppState>> {
    Router::new()
        .route("/detections", get(list_detections))
        .route("/detections/{id}", get(get_detection))
        .route("/detections/{id}/image", get(detection_image))
        .route("/detections/{id}/cam", get(detection_cam))
        .route("/detections/{id}/review", post(review))
        .route("/reports/table1", get(table1))
        .route("/exports/verified.geojson", get(verified_export))
        .route("/openapi.json", get(|| async { Json(openapi_document()) }))
}

#[derive(Debug, Default, Deserialize)]
struct ListQuery {
    status: Option<String>,
    #[serde(rename = "type")]
    facility_type: Option<String>,
    bbox: Option<String>,
    page: Option<usize>,
    page_size: Option<usize>,
}

/// One page of detections, ordered by id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionPage {
    /// Rows matching the filters, across all pages.
    pub total: usize,
    /// 1-based.
    pub page: usize,
    pub page_size: usize,
    pub items: Vec<ReviewedDetection>,
}

fn parse_facility_type(s: &str) -> ApiResult<FacilityType> {
    serde_json::from_value(serde_json::Value::String(s.to_owned()))
        .map_err(|_| ApiError::bad_request(format!("unknown facility type {s:?}")))
}

async fn list_detections(State(state): Shared, Query(q): Query<ListQuery>) -> ApiResult<Json<DetectionPage>> {
    let status: Option<ReviewStatus> = q
        .status
        .as_deref()
        .map(|s| s.parse().map_err(|_| ApiError::bad_request(format!("unknown status {s:?}"))))
        .transpose()?;
    let facility_type = q.facility_type.as_deref().map(parse_facility_type).transpose()?;
    let bbox: Option<BoundingRegion> = q
        .bbox
        .as_deref()
        .map(|s| s.parse().map_err(|e| ApiError::bad_request(format!("bbox: {e}"))))
        .transpose()?;
    let page = q.page.unwrap_or(1);
    if page == 0 {
        return Err(ApiError::bad_request("page is 1-based"));
    }
    let page_size = q.page_size.unwrap_or(DEFAULT_PAGE_SIZE).clamp(1, MAX_PAGE_SIZE);

    let store = state.store();
    let matching: Vec<&ReviewedDetection> = store
        .rows()
        .filter(|r| status.is_none_or(|s| r.status == s))
        .filter(|r| facility_type.is_none_or(|t| r.rolled_up_type() == Some(t)))
        .filter(|r| bbox.is_none_or(|b| b.contains(r.detection.centroid)))
        .collect();
    let items = matching
        .iter()
        .skip((page - 1).saturating_mul(page_size))
        .take(page_size)
        .map(|r| (*r).clone())
        .collect();
    Ok(Json(DetectionPage {
        total: matching.len(),
        page,
        page_size,
        items,
    }))
}

fn find(state: &AppState, id: u32) -> ApiResult<ReviewedDetection> {
    state
        .store()
        .get(DetectionId(id))
        .cloned()
        .ok_or_else(|| ApiError::not_found(format!("unknown detection {id}")))
}

async fn get_detection(State(state): Shared, Path(id): Path<u32>) -> ApiResult<Json<ReviewedDetection>> {
    find(&state, id).map(Json)
}

fn png(pixels: &[u8], color: ExtendedColorType) -> ApiResult<Response> {
    let mut buf = Vec::new();
    let side = TILE_PIXELS as u32;
    PngEncoder::new(&mut buf)
        .write_image(pixels, side, side, color)
        .map_err(|e| ApiError::new(axum::http::StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?;
    Ok(([(header::CONTENT_TYPE, "image/png")], buf).into_response())
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> ApiResult<T> + Send + 'static) -> ApiResult<T> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::new(axum::http::StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?
}

async fn detection_image(State(state): Shared, Path(id): Path<u32>) -> ApiResult<Response> {
    let row = find(&state, id)?;
    blocking(move || {
        let source = state
            .imagery
            .as_ref()
            .ok_or_else(|| ApiError::conflict("no tile imagery configured"))?;
        let tile = row.detection.peak_tile;
        if !source.contains(tile) {
            return Err(ApiError::not_found(format!("no imagery for tile {}", tile.file_stem())));
        }
        png(source.fetch(tile)?.pixels(), ExtendedColorType::Rgb8)
    })
    .await
}

async fn detection_cam(State(state): Shared, Path(id): Path<u32>) -> ApiResult<Response> {
    let row = find(&state, id)?;
    blocking(move || {
        let cam = state
            .cam
            .as_ref()
            .ok_or_else(|| ApiError::conflict("no feature maps configured"))?;
        let d = &row.detection;
        let path = std::iter::once(d.peak_tile)
            .chain(d.member_tiles.iter().copied())
            .map(|t| feature_map_path(&cam.feature_maps, t))
            .find(|p| p.is_file())
            .ok_or_else(|| ApiError::conflict(format!("no feature map for detection {id}")))?;
        let map = compute_cam(&read_feature_map(&path)?, &cam.weights)?;
        png(&map.to_gray_bytes(), ExtendedColorType::L8)
    })
    .await
}

/// Body of `POST /detections/{id}/review`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReviewRequest {
    pub action: ReviewAction,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub facility_type: Option<ReviewedType>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tank_count: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reviewer: Option<String>,
    /// Defaults to the server clock.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timestamp: Option<DateTime<Utc>>,
}

async fn review(
    State(state): Shared,
    Path(id): Path<u32>,
    Json(req): Json<ReviewRequest>,
) -> ApiResult<Json<ReviewedDetection>> {
    blocking(move || {
        let mut store = state.store.write().unwrap_or_else(|e| e.into_inner());
        let row = store
            .get(DetectionId(id))
            .ok_or_else(|| ApiError::not_found(format!("unknown detection {id}")))?;
        // never stamp a review earlier than the previous one for this detection
        let timestamp = req
            .timestamp
            .unwrap_or_else(|| row.reviewed_at.map_or_else(Utc::now, |last| last.max(Utc::now())));
        let event = ReviewEvent {
            detection_id: DetectionId(id),
            action: req.action,
            facility_type: req.facility_type,
            tank_count: req.tank_count,
            reviewer: req.reviewer.unwrap_or_else(|| "anonymous".into()),
            timestamp,
        };
        Ok(Json(store.apply_review(event)?))
    })
    .await
}

async fn table1(State(state): Shared) -> ApiResult<Json<Table1Report>> {
    let bench = state
        .benchmark
        .as_ref()
        .ok_or_else(|| ApiError::conflict("benchmark datasets not loaded"))?;
    let detected = state.store().detected_facilities();
    let cov = coverage(&bench.combined, &detected, COVERAGE_RADIUS_KM);
    let new = new_detections(&bench.combined, &detected, &bench.training_locations, COVERAGE_RADIUS_KM);
    Ok(Json(table1_report(&detected, &cov, &new)))
}

async fn verified_export(State(state): Shared) -> Response {
    let store = state.store();
    let fc = verified_geojson(&store.verified_facilities());
    ([(header::CONTENT_TYPE, "application/geo+json")], fc.to_string()).into_response()
}
