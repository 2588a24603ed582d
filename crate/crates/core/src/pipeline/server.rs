//! HTTP preview service. Sessions hold uploaded frames, a private model copy
//! and the current parameter snapshot; fine-tuning runs on a worker thread
//! while previews keep rendering from the snapshot.

use std::collections::HashMap;
use std::net::SocketAddr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};

use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine as _;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::color_ops::{apply_params, GradingParams, ParamRange, PARAM_NAMES, PARAM_RANGES};
use crate::error::Error;
use crate::imaging::{RgbImage, VideoFrames, DEFAULT_FRAME_RATE};
use crate::lut::{bake_lut, to_cube_string, DEFAULT_LUT_SIZE};
use crate::pipeline::predict_video_params;
use crate::predictor::PredictorModel;
use crate::training::{finetune_with_progress, select_keyframes, LossRecord, TrainConfig};

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "state", rename_all = "snake_case")]
pub enum FinetuneStatus {
    Idle,
    Running { iter: usize, iters: usize },
    Done { iters: usize },
    Failed { reason: String },
}

pub struct Session {
    frames: Vec<RgbImage>,
    keyframes: Vec<usize>,
    style: RgbImage,
    model: Mutex<PredictorModel>,
    params: RwLock<GradingParams>,
    status: Mutex<FinetuneStatus>,
    losses: Mutex<Vec<LossRecord>>,
}

impl Session {
    pub fn params(&self) -> GradingParams {
        *self.params.read().unwrap()
    }
}

pub struct AppState {
    base_model: PredictorModel,
    config: TrainConfig,
    sessions: RwLock<HashMap<String, Arc<Session>>>,
    next_id: AtomicU64,
}

impl AppState {
    pub fn new(base_model: PredictorModel, config: TrainConfig) -> Self {
        Self {
            base_model,
            config,
            sessions: RwLock::new(HashMap::new()),
            next_id: AtomicU64::new(1),
        }
    }

    fn session(&self, id: &str) -> Result<Arc<Session>, ApiError> {
        self.sessions
            .read()
            .unwrap()
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, format!("no session `{id}`")))
    }
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self {
            status,
            message: message.into(),
        }
    }

    fn bad_request(e: impl std::fmt::Display) -> Self {
        Self::new(StatusCode::BAD_REQUEST, e.to_string())
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let status = match e {
            Error::Contract(_) | Error::Format { .. } | Error::Parse { .. } => StatusCode::UNPROCESSABLE_ENTITY,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        Self::new(status, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({ "error": self.message }))).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/schema", get(schema))
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(session_status).delete(delete_session))
        .route("/sessions/{id}/finetune", post(start_finetune))
        .route("/sessions/{id}/params", get(session_params))
        .route("/sessions/{id}/preview", post(preview))
        .route("/sessions/{id}/lut.cube", get(lut_cube))
        .with_state(state)
}

/// Binds `addr` and serves until the process exits.
pub async fn serve(addr: SocketAddr, state: Arc<AppState>) -> crate::error::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr)
        .await
        .map_err(|e| Error::Config(format!("cannot bind {addr}: {e}")))?;
    log::info!("listening on {}", addr);
    axum::serve(listener, router(state))
        .await
        .map_err(|e| Error::Config(format!("server stopped: {e}")))
}

#[derive(Serialize)]
struct ParamSchema {
    name: &'static str,
    #[serde(flatten)]
    range: ParamRange,
}

async fn schema() -> Json<Vec<ParamSchema>> {
    Json(
        PARAM_NAMES
            .iter()
            .zip(PARAM_RANGES)
            .map(|(&name, range)| ParamSchema { name, range })
            .collect(),
    )
}

fn decode_png(b64: &str) -> ApiResult<RgbImage> {
    let bytes = B64.decode(b64.trim()).map_err(ApiError::bad_request)?;
    Ok(RgbImage::decode(&bytes)?)
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreateSession {
    /// Base64 PNG/JPEG.
    pub style: String,
    /// Base64 PNG/JPEG frames, in order.
    pub frames: Vec<String>,
    pub keyframes: Option<usize>,
}

async fn create_session(State(state): State<Arc<AppState>>, Json(req): Json<CreateSession>) -> ApiResult<Response> {
    let style = decode_png(&req.style)?;
    let frames = req.frames.iter().map(|f| decode_png(f)).collect::<ApiResult<Vec<_>>>()?;
    let model = state.base_model.clone();
    let k = req.keyframes.unwrap_or(state.config.keyframes);
    let session = tokio::task::spawn_blocking(move || -> ApiResult<Session> {
        let video = VideoFrames::new(frames, DEFAULT_FRAME_RATE)?;
        let keys = select_keyframes(&video, k.clamp(1, video.len()))?;
        let frames = video.into_frames();
        let key_imgs: Vec<RgbImage> = keys.indices.iter().map(|&i| frames[i].clone()).collect();
        let params = predict_video_params(&model, &key_imgs, &style)?;
        Ok(Session {
            frames,
            keyframes: keys.indices,
            style,
            model: Mutex::new(model),
            params: RwLock::new(params),
            status: Mutex::new(FinetuneStatus::Idle),
            losses: Mutex::new(Vec::new()),
        })
    })
    .await
    .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))??;

    let id = format!("s{:08x}", state.next_id.fetch_add(1, Ordering::Relaxed));
    let body = json!({
        "id": id,
        "params": session.params(),
        "frame_count": session.frames.len(),
        "keyframes": session.keyframes,
    });
    state.sessions.write().unwrap().insert(id, Arc::new(session));
    Ok((StatusCode::CREATED, Json(body)).into_response())
}

async fn session_status(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Json<serde_json::Value>> {
    let s = state.session(&id)?;
    let status = s.status.lock().unwrap().clone();
    let losses = s.losses.lock().unwrap().clone();
    Ok(Json(json!({
        "id": id,
        "status": status,
        "params": s.params(),
        "frame_count": s.frames.len(),
        "keyframes": s.keyframes,
        "losses": losses,
    })))
}

async fn session_params(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Json<GradingParams>> {
    Ok(Json(state.session(&id)?.params()))
}

async fn delete_session(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<StatusCode> {
    match state.sessions.write().unwrap().remove(&id) {
        Some(_) => Ok(StatusCode::NO_CONTENT),
        None => Err(ApiError::new(StatusCode::NOT_FOUND, format!("no session `{id}`"))),
    }
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct FinetuneRequest {
    pub iters: Option<usize>,
}

async fn start_finetune(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    body: Option<Json<FinetuneRequest>>,
) -> ApiResult<Response> {
    let s = state.session(&id)?;
    let mut cfg = state.config.clone();
    if let Some(Json(FinetuneRequest { iters: Some(n) })) = body {
        cfg.iters_finetune = n;
    }
    {
        let mut status = s.status.lock().unwrap();
        if matches!(*status, FinetuneStatus::Running { .. }) {
            return Err(ApiError::new(StatusCode::CONFLICT, "fine-tuning already running"));
        }
        *status = FinetuneStatus::Running {
            iter: 0,
            iters: cfg.iters_finetune,
        };
    }
    s.losses.lock().unwrap().clear();
    let iters = cfg.iters_finetune;
    let worker = s.clone();
    std::thread::spawn(move || run_finetune(&worker, &cfg));
    Ok((
        StatusCode::ACCEPTED,
        Json(json!({ "id": id, "status": FinetuneStatus::Running { iter: 0, iters } })),
    )
        .into_response())
}

fn run_finetune(s: &Session, cfg: &TrainConfig) {
    let model = s.model.lock().unwrap().clone();
    let keys: Vec<RgbImage> = s.keyframes.iter().map(|&i| s.frames[i].clone()).collect();
    let iters = cfg.iters_finetune;
    let result = finetune_with_progress(model, &keys, &s.style, cfg, |r| {
        s.losses.lock().unwrap().push(*r);
        *s.status.lock().unwrap() = FinetuneStatus::Running { iter: r.iter + 1, iters };
        true
    });
    match result {
        Ok(out) => {
            *s.model.lock().unwrap() = out.model;
            *s.params.write().unwrap() = out.params;
            *s.status.lock().unwrap() = FinetuneStatus::Done { iters: out.losses.len() };
        }
        Err(e) => {
            log::warn!("fine-tune failed: {e}");
            *s.status.lock().unwrap() = FinetuneStatus::Failed { reason: e.to_string() };
        }
    }
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct PreviewRequest {
    /// Subset of parameter values replacing the session's current ones.
    #[serde(default)]
    pub params: HashMap<String, f32>,
    #[serde(default)]
    pub frame: usize,
}

async fn preview(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    Json(req): Json<PreviewRequest>,
) -> ApiResult<Response> {
    let s = state.session(&id)?;
    let mut p = s.params();
    for (name, &v) in &req.params {
        p.set(name, v)?;
    }
    p.validate()?;
    if req.frame >= s.frames.len() {
        return Err(ApiError::new(
            StatusCode::UNPROCESSABLE_ENTITY,
            format!("frame {} out of range (0..{})", req.frame, s.frames.len()),
        ));
    }
    let png = tokio::task::spawn_blocking(move || apply_params(&s.frames[req.frame], &p).encode_png())
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))??;
    Ok(([(header::CONTENT_TYPE, "image/png")], png).into_response())
}

#[derive(Deserialize)]
pub struct LutQuery {
    pub size: Option<usize>,
}

async fn lut_cube(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    Query(q): Query<LutQuery>,
) -> ApiResult<Response> {
    let s = state.session(&id)?;
    let lut = bake_lut(&s.params(), q.size.unwrap_or(DEFAULT_LUT_SIZE)).map_err(ApiError::bad_request)?;
    Ok((
        [
            (header::CONTENT_TYPE, "text/plain; charset=utf-8"),
            (header::CONTENT_DISPOSITION, "attachment; filename=\"grade.cube\""),
        ],
        to_cube_string(&lut, "paramgrade"),
    )
        .into_response())
}
