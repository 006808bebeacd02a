use std::path::{Component, Path as FsPath};
use std::sync::{Arc, Mutex};

use axum::extract::{DefaultBodyLimit, Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::Engine;
use satsynth::image::sha256_hex;
use satsynth::ingest::{palette_violations, GeoCoordinate, LayerPalette, SourceTag, TilePair, TileStore};
use satsynth::maskgen::{Mask, MaskGenerator};
use satsynth::pipelines::{EditSession, ManipulationClass};
use serde::Deserialize;
use serde_json::json;

use crate::jobs::{check_palette, decode_mask, decode_rgb, procedural_reference, Work};
use crate::store::is_digest;
use crate::types::{
    CreateSession, Job, JobError, JobKind, JobRequest, JobStatus, Meta, PaletteEntry, SessionRecord, SessionView,
    SubmitEdit,
};
use crate::{now_ms, Service, SessionSlot};

const BODY_LIMIT: usize = 64 << 20;

#[derive(Debug)]
pub enum ApiError {
    NotFound { what: &'static str, id: String },
    UnknownCity { name: String, known: Vec<String> },
    BadRequest { category: &'static str, message: String },
    Internal(String),
}

impl ApiError {
    fn bad(category: &'static str, message: impl Into<String>) -> Self {
        ApiError::BadRequest { category, message: message.into() }
    }
}

impl From<std::io::Error> for ApiError {
    fn from(e: std::io::Error) -> Self {
        ApiError::Internal(e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let (status, body) = match self {
            ApiError::NotFound { what, id } => (
                StatusCode::NOT_FOUND,
                json!({"category": "not_found", "message": format!("unknown {what} '{id}'")}),
            ),
            ApiError::UnknownCity { name, known } => (
                StatusCode::UNPROCESSABLE_ENTITY,
                json!({
                    "category": "unknown_city",
                    "message": format!("unknown city '{name}'; known: {}", known.join(", ")),
                    "city": name,
                    "known": known,
                }),
            ),
            ApiError::BadRequest { category, message } => {
                (StatusCode::BAD_REQUEST, json!({"category": category, "message": message}))
            }
            ApiError::Internal(message) => {
                (StatusCode::INTERNAL_SERVER_ERROR, json!({"category": "internal", "message": message}))
            }
        };
        (status, Json(json!({ "error": body }))).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

pub fn router(svc: Service) -> Router {
    Router::new()
        .route("/v1/meta", get(meta))
        .route("/v1/sessions", post(create_session))
        .route("/v1/sessions/{id}", get(get_session))
        .route("/v1/sessions/{id}/edits", post(submit_edit))
        .route("/v1/jobs", post(submit_job))
        .route("/v1/jobs/{id}", get(get_job))
        .route("/v1/artifacts/{digest}", get(get_artifact))
        .layer(DefaultBodyLimit::max(BODY_LIMIT))
        .with_state(svc)
}

async fn meta(State(svc): State<Service>) -> Json<Meta> {
    let m = svc.models();
    let palette = LayerPalette::default();
    Json(Meta {
        api_version: "v1".into(),
        cities: m.image.class_names.clone(),
        manipulation_classes: ManipulationClass::ALL.to_vec(),
        palette_version: palette.version.clone(),
        palette: palette.colors.iter().map(|&(layer, rgb)| PaletteEntry { layer, rgb }).collect(),
        checkpoint_hash: m.checkpoint_hash.clone(),
        resolution: m.image.resolution(),
        basemap_model: m.basemap.is_some(),
        edit_margin: svc.config().edit_margin,
        workers: svc.config().workers,
    })
}

fn check_city(svc: &Service, city: &str) -> ApiResult<()> {
    let known = &svc.models().image.class_names;
    if known.iter().any(|c| c == city) {
        Ok(())
    } else {
        Err(ApiError::UnknownCity { name: city.into(), known: known.clone() })
    }
}

fn relative_inside(rel: &str) -> bool {
    let p = FsPath::new(rel);
    !rel.is_empty() && p.components().all(|c| matches!(c, Component::Normal(_)))
}

async fn create_session(
    State(svc): State<Service>,
    Json(req): Json<CreateSession>,
) -> ApiResult<(StatusCode, Json<serde_json::Value>)> {
    check_city(&svc, &req.city)?;
    let seed = req.seed.unwrap_or(0);
    let r = svc.models().image.resolution();
    let reference = match &req.reference {
        Some(rel) => {
            if !relative_inside(rel) {
                return Err(ApiError::bad("reference", format!("reference '{rel}' must be a path inside the data root")));
            }
            let (mut pair, _) = TileStore::load_dir(&svc.config().data_root.join(rel))
                .map_err(|e| ApiError::bad("reference", format!("reference '{rel}': {e}")))?;
            if pair.satellite.dimensions() != (r as u32, r as u32) || pair.basemap.dimensions() != (r as u32, r as u32) {
                return Err(ApiError::bad("shape", format!("reference '{rel}' is not {r}x{r}")));
            }
            let bad = palette_violations(&pair.basemap, &LayerPalette::default());
            if bad > 0 {
                return Err(ApiError::bad("non_palette", format!("reference basemap has {bad} pixels outside the palette")));
            }
            pair.city = req.city.clone();
            pair
        }
        None => procedural_reference(&svc, &req.city, seed, r).map_err(|e| ApiError::Internal(e.to_string()))?,
    };
    let store = &svc.0.store;
    let id = uuid::Uuid::new_v4().simple().to_string();
    let record = SessionRecord {
        id: id.clone(),
        city: req.city.clone(),
        seed,
        coord: reference.coord,
        source: reference.source,
        reference_image: store.put_rgb(&reference.satellite)?,
        reference_basemap: store.put_rgb(&reference.basemap)?,
        stages: Vec::new(),
    };
    store.save_session(&record)?;
    let body = serde_json::to_value(SessionView::of(&record)).map_err(|e| ApiError::Internal(e.to_string()))?;
    let slot = SessionSlot {
        session: Mutex::new(EditSession::new(&id, reference, &req.city, seed)),
        record: Mutex::new(record),
        queue: Mutex::new(None),
    };
    svc.0.sessions.lock().expect("sessions lock").insert(id, Arc::new(slot));
    Ok((StatusCode::CREATED, Json(body)))
}

async fn get_session(State(svc): State<Service>, Path(id): Path<String>) -> ApiResult<Json<serde_json::Value>> {
    let rec = svc.session(&id).ok_or(ApiError::NotFound { what: "session", id })?;
    Ok(Json(serde_json::to_value(SessionView::of(&rec)).map_err(|e| ApiError::Internal(e.to_string()))?))
}

/// Stores a job that failed before reaching a worker.
fn reject(svc: &Service, mut job: Job, err: JobError) -> ApiResult<(StatusCode, Json<Job>)> {
    job.status = JobStatus::Failed;
    job.timeline.finished_ms = Some(now_ms());
    job.error = Some(err);
    svc.put_job(job.clone())?;
    Ok((StatusCode::ACCEPTED, Json(job)))
}

async fn submit_edit(
    State(svc): State<Service>,
    Path(id): Path<String>,
    Json(req): Json<SubmitEdit>,
) -> ApiResult<(StatusCode, Json<Job>)> {
    let slot = svc.slot(&id).ok_or_else(|| ApiError::NotFound { what: "session", id: id.clone() })?;
    let digest = sha256_hex(format!("{id}\n{}", req.basemap_png).as_bytes());
    let job = svc.new_job(JobKind::EditStep, Some(id), digest);
    let size = slot.session.lock().expect("session lock").reference.basemap.dimensions();
    let decoded = decode_rgb("basemap", &req.basemap_png, size).and_then(|img| check_palette("basemap", &img).map(|_| img));
    match decoded {
        Err(e) => reject(&svc, job, e),
        Ok(img) => {
            svc.put_job(job.clone())?;
            svc.enqueue_edit(&slot, job.id.clone(), img);
            Ok((StatusCode::ACCEPTED, Json(job)))
        }
    }
}

fn decode_work(svc: &Service, req: JobRequest) -> Result<Work, JobError> {
    let r = svc.models().image.resolution() as u32;
    let size = (r, r);
    let default_cfg = svc.config().cfg_scale;
    let conditional = svc.models().image.state.conditional();
    Ok(match req {
        JobRequest::Sample { city, seed, basemap_png, cfg_scale } => {
            let basemap = basemap_png.map(|b| decode_rgb("basemap", &b, size)).transpose()?;
            if let Some(b) = &basemap {
                check_palette("basemap", b)?;
            }
            Work::Sample { city, seed, basemap, cfg: cfg_scale.unwrap_or(default_cfg) }
        }
        JobRequest::Inpaint { city, seed, image_png, mask_png, basemap_png, cfg_scale } => {
            let image = decode_rgb("image", &image_png, size)?;
            let mask = decode_mask("mask", &mask_png, size)?;
            let basemap = basemap_png.map(|b| decode_rgb("basemap", &b, size)).transpose()?;
            match &basemap {
                Some(b) => check_palette("basemap", b)?,
                None if conditional => return Err(JobError::new("decode", "the loaded model needs a basemap")),
                None => {}
            }
            Work::Inpaint { city, seed, image, mask, basemap, cfg: cfg_scale.unwrap_or(default_cfg) }
        }
        JobRequest::TwoStage { city, seed, image_png, basemap_png, mask_png, manip_class, cfg_scale } => {
            let satellite = decode_rgb("image", &image_png, size)?;
            let basemap = decode_rgb("basemap", &basemap_png, size)?;
            check_palette("basemap", &basemap)?;
            let bitmap = decode_mask("mask", &mask_png, size)?;
            let mask = Mask::from_bitmap(bitmap, MaskGenerator::Bezier, seed)
                .map_err(|e| JobError::new("mask", e.to_string()))?;
            let truth = TilePair {
                satellite,
                basemap,
                coord: GeoCoordinate { lat: 0.0, lon: 0.0 },
                source: SourceTag::procedural(16),
                city: city.clone(),
            };
            Work::TwoStage { city, seed, truth, mask, class: manip_class, cfg: cfg_scale.unwrap_or(default_cfg) }
        }
    })
}

async fn submit_job(State(svc): State<Service>, Json(req): Json<JobRequest>) -> ApiResult<(StatusCode, Json<Job>)> {
    check_city(&svc, req.city())?;
    if matches!(req, JobRequest::TwoStage { .. }) && svc.models().basemap.is_none() {
        return Err(ApiError::bad("unsupported", "two_stage jobs need a basemap model"));
    }
    let digest = sha256_hex(&serde_json::to_vec(&req).map_err(|e| ApiError::Internal(e.to_string()))?);
    let job = svc.new_job(req.kind(), None, digest);
    match decode_work(&svc, req) {
        Err(e) => reject(&svc, job, e),
        Ok(work) => {
            svc.put_job(job.clone())?;
            svc.spawn_job(job.id.clone(), work);
            Ok((StatusCode::ACCEPTED, Json(job)))
        }
    }
}

async fn get_job(State(svc): State<Service>, Path(id): Path<String>) -> ApiResult<Json<Job>> {
    svc.job(&id).map(Json).ok_or(ApiError::NotFound { what: "job", id })
}

#[derive(Debug, Deserialize)]
struct ArtifactQuery {
    encoding: Option<String>,
}

async fn get_artifact(
    State(svc): State<Service>,
    Path(digest): Path<String>,
    Query(q): Query<ArtifactQuery>,
) -> ApiResult<Response> {
    if !is_digest(&digest) {
        return Err(ApiError::bad("digest", format!("'{digest}' is not a sha-256 hex digest")));
    }
    let bytes = svc.0.store.get(&digest)?.ok_or_else(|| ApiError::NotFound { what: "artifact", id: digest.clone() })?;
    match q.encoding.as_deref() {
        None | Some("raw") => Ok(([(header::CONTENT_TYPE, "image/png")], bytes).into_response()),
        Some("base64") => Ok(Json(json!({
            "digest": digest,
            "media_type": "image/png",
            "png_base64": base64::engine::general_purpose::STANDARD.encode(&bytes),
        }))
        .into_response()),
        Some(other) => Err(ApiError::bad("encoding", format!("unknown encoding '{other}' (raw or base64)"))),
    }
}
