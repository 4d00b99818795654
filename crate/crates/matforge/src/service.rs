//! HTTP API backing the playground.
//!
//! | route                  | body                                   |
//! |------------------------|----------------------------------------|
//! | `POST /api/material`   | `{"prompt"}`                           |
//! | `POST /api/interpolate`| `{"prompt_a", "prompt_b", "t"}`        |
//! | `POST /api/scene`      | `{"paragraph"}`                        |
//! | `GET /api/health`      |                                        |
//!
//! Failures answer `{"error", "code"}`; an unreachable embedding provider
//! gives 503 with `Retry-After`. Other paths are served from the configured
//! static directory.

use std::sync::Arc;
use std::time::Instant;

use axum::body::Bytes;
use axum::extract::State;
use axum::http::{header, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use matforge_core::predict::Predictor;
use matforge_core::{lerp_material, render_sphere, tonemap, MaterialFull, ProviderError};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use tower_http::services::ServeDir;

use crate::app::{App, AppError};
use crate::image::encode_png;
use crate::record::MaterialRecord;
use crate::scene::build_scene;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Timings {
    pub embed: u64,
    pub encode: u64,
    pub post_process: u64,
    pub render: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaterialResponse {
    pub prompt: String,
    pub material: MaterialRecord,
    pub values: Vec<f64>,
    /// Base64 PNG.
    pub preview_png: String,
    /// Microseconds per stage.
    pub timings_us: Timings,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt_a: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt_b: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneEntry {
    pub prompt: String,
    pub file: String,
    pub material: MaterialRecord,
    pub values: Vec<f64>,
    pub mdl: String,
    pub preview_png: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneResponse {
    pub status: String,
    pub materials: Vec<SceneEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HealthResponse {
    pub status: String,
    pub checkpoint_step: u64,
    pub provider: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
    pub code: u16,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct MaterialRequest {
    prompt: String,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct InterpolateRequest {
    prompt_a: String,
    prompt_b: String,
    t: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SceneRequest {
    paragraph: String,
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
    retry_after: Option<u64>,
}

impl ApiError {
    fn bad_request(message: impl Into<String>) -> Self {
        ApiError {
            status: StatusCode::BAD_REQUEST,
            message: message.into(),
            retry_after: None,
        }
    }

    fn from_app(e: AppError, retry_after: u64) -> Self {
        let failed_provider = matches!(
            &e,
            AppError::Core(matforge_core::Error::Provider(ProviderError::Failed(_)))
        );
        let (status, retry_after) = if e.is_unavailable() {
            (StatusCode::SERVICE_UNAVAILABLE, Some(retry_after))
        } else if matches!(e, AppError::Usage(_)) {
            (StatusCode::BAD_REQUEST, None)
        } else if failed_provider {
            (StatusCode::BAD_GATEWAY, None)
        } else {
            (StatusCode::INTERNAL_SERVER_ERROR, None)
        };
        ApiError {
            status,
            message: e.to_string(),
            retry_after,
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = ErrorBody {
            error: self.message,
            code: self.status.as_u16(),
        };
        let mut resp = (self.status, Json(body)).into_response();
        if let Some(secs) = self.retry_after {
            resp.headers_mut()
                .insert(header::RETRY_AFTER, HeaderValue::from(secs));
        }
        resp
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;

fn parse<T: DeserializeOwned>(body: &Bytes) -> Result<T, ApiError> {
    serde_json::from_slice(body)
        .map_err(|e| ApiError::bad_request(format!("malformed request: {e}")))
}

fn micros(since: Instant) -> u64 {
    since.elapsed().as_micros() as u64
}

/// Seconds advertised in `Retry-After`.
fn retry_after(app: &App) -> u64 {
    app.config.retry.max_delay_ms.div_ceil(1000).max(1)
}

/// Runs blocking inference off the async executor.
async fn blocking<T: Send + 'static>(
    app: Arc<App>,
    f: impl FnOnce(&App) -> Result<T, AppError> + Send + 'static,
) -> Result<T, ApiError> {
    let wait = retry_after(&app);
    tokio::task::spawn_blocking(move || f(&app))
        .await
        .map_err(|e| ApiError {
            status: StatusCode::INTERNAL_SERVER_ERROR,
            message: format!("worker failed: {e}"),
            retry_after: None,
        })?
        .map_err(|e| ApiError::from_app(e, wait))
}

/// Base64 PNG of the tonemapped preview.
pub fn preview_png(app: &App, material: &MaterialFull) -> Result<String, AppError> {
    let linear = render_sphere(material, &app.config.render)?;
    let png = encode_png(&tonemap(&linear, app.config.render.exposure))?;
    Ok(STANDARD.encode(png))
}

fn require_prompt(p: &str, name: &str) -> Result<(), AppError> {
    if p.trim().is_empty() {
        return Err(AppError::Usage(format!("{name} is empty")));
    }
    Ok(())
}

/// Predicts a prompt, timing each stage.
pub fn predict_timed(
    app: &App,
    prompt: &str,
    timings: &mut Timings,
) -> Result<MaterialFull, AppError> {
    let start = Instant::now();
    let z = app.predictor.embed(prompt)?;
    timings.embed += micros(start);
    let start = Instant::now();
    let params = app.predictor.encode(&z)?;
    timings.encode += micros(start);
    let start = Instant::now();
    let appearance = app.predictor.appearance(&z)?;
    timings.post_process += micros(start);
    Ok(Predictor::<crate::app::SharedProvider>::assemble(
        params, appearance,
    ))
}

fn respond(
    app: &App,
    prompt: String,
    material: &MaterialFull,
    mut timings: Timings,
) -> Result<MaterialResponse, AppError> {
    let start = Instant::now();
    let preview_png = preview_png(app, material)?;
    timings.render = micros(start);
    Ok(MaterialResponse {
        prompt,
        material: material.into(),
        values: material.to_values().to_vec(),
        preview_png,
        timings_us: timings,
        prompt_a: None,
        prompt_b: None,
        t: None,
    })
}

pub fn material_response(app: &App, prompt: &str) -> Result<MaterialResponse, AppError> {
    require_prompt(prompt, "prompt")?;
    let mut timings = Timings::default();
    let material = predict_timed(app, prompt, &mut timings)?;
    respond(app, prompt.to_string(), &material, timings)
}

pub fn interpolate_response(
    app: &App,
    a: &str,
    b: &str,
    t: f64,
) -> Result<MaterialResponse, AppError> {
    require_prompt(a, "prompt_a")?;
    require_prompt(b, "prompt_b")?;
    if !(0.0..=1.0).contains(&t) {
        return Err(AppError::Usage(format!("t = {t} outside [0, 1]")));
    }
    let mut timings = Timings::default();
    let ma = predict_timed(app, a, &mut timings)?;
    let mb = predict_timed(app, b, &mut timings)?;
    let material = lerp_material(&ma, &mb, t)?;
    let mut resp = respond(app, format!("{a} -> {b} @ {t}"), &material, timings)?;
    resp.prompt_a = Some(a.to_string());
    resp.prompt_b = Some(b.to_string());
    resp.t = Some(t);
    Ok(resp)
}

pub fn scene_response(app: &App, paragraph: &str) -> Result<SceneResponse, AppError> {
    let scene = build_scene(app, paragraph)?;
    let mut materials = Vec::with_capacity(scene.materials.len());
    for m in scene.materials {
        materials.push(SceneEntry {
            preview_png: preview_png(app, &m.material)?,
            material: (&m.material).into(),
            values: m.material.to_values().to_vec(),
            prompt: m.prompt,
            file: m.file,
            mdl: m.mdl,
        });
    }
    Ok(SceneResponse {
        status: scene.status,
        materials,
    })
}

async fn handle_material(State(app): State<Arc<App>>, body: Bytes) -> ApiResult<MaterialResponse> {
    let req: MaterialRequest = parse(&body)?;
    blocking(app, move |app| material_response(app, &req.prompt))
        .await
        .map(Json)
}

async fn handle_interpolate(
    State(app): State<Arc<App>>,
    body: Bytes,
) -> ApiResult<MaterialResponse> {
    let req: InterpolateRequest = parse(&body)?;
    blocking(app, move |app| {
        interpolate_response(app, &req.prompt_a, &req.prompt_b, req.t)
    })
    .await
    .map(Json)
}

async fn handle_scene(State(app): State<Arc<App>>, body: Bytes) -> ApiResult<SceneResponse> {
    let req: SceneRequest = parse(&body)?;
    blocking(app, move |app| scene_response(app, &req.paragraph))
        .await
        .map(Json)
}

async fn handle_health(State(app): State<Arc<App>>) -> Json<HealthResponse> {
    Json(HealthResponse {
        status: "ok".into(),
        checkpoint_step: app.checkpoint_step,
        provider: app.provider().name(),
    })
}

async fn not_found() -> ApiError {
    ApiError {
        status: StatusCode::NOT_FOUND,
        message: "not found".into(),
        retry_after: None,
    }
}

pub fn router(app: Arc<App>) -> Router {
    let static_dir = app.config.paths.static_dir.clone();
    let api = Router::new()
        .route("/api/material", post(handle_material))
        .route("/api/interpolate", post(handle_interpolate))
        .route("/api/scene", post(handle_scene))
        .route("/api/health", get(handle_health))
        .with_state(app);
    match static_dir {
        Some(dir) => {
            api.fallback_service(ServeDir::new(dir).append_index_html_on_directories(true))
        }
        None => api.fallback(not_found),
    }
}

/// Serves until the process is stopped.
pub async fn serve(app: Arc<App>, port: u16) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(("0.0.0.0", port)).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(app)).await
}
