use std::path::PathBuf;
use std::time::Duration;

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{HeaderMap, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post, put};
use axum::{Json, Router};
use dualsmoke_core::guide::{external_guide, BaselineParams, GuideError, ProviderSpec, SketchDoc};
use dualsmoke_core::GridSpec;
use serde::Deserialize;
use serde_json::{json, Value};
use tower_http::services::ServeDir;

use super::session::{Command, Frame, SessionHandle};
use super::App;
use crate::run::{valid_name, Run};

/// Upper bound on a single long-poll wait.
const MAX_POLL: Duration = Duration::from_secs(30);

pub struct ApiError {
    status: StatusCode,
    body: Value,
}

impl ApiError {
    fn new(status: StatusCode, msg: impl std::fmt::Display) -> Self {
        ApiError { status, body: json!({ "error": msg.to_string() }) }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

fn unprocessable(msg: impl std::fmt::Display) -> ApiError {
    ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, msg)
}

fn internal(msg: impl std::fmt::Display) -> ApiError {
    ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, msg)
}

fn parse_body<T: for<'de> Deserialize<'de>>(body: &Bytes) -> ApiResult<T> {
    let text = if body.iter().all(u8::is_ascii_whitespace) { &b"{}"[..] } else { &body[..] };
    serde_json::from_slice(text).map_err(unprocessable)
}

fn lookup(app: &App, id: &str) -> ApiResult<SessionHandle> {
    app.session(id).ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, format!("no session {id}")))
}

fn status_json(h: &SessionHandle) -> Json<Value> {
    Json(serde_json::to_value(h.status()).expect("status serializes"))
}

pub fn router(app: App, static_dir: Option<PathBuf>) -> Router {
    let api = Router::new()
        .route("/sessions", post(create_session).get(list_sessions))
        .route("/sessions/{id}", get(session_status).delete(delete_session))
        .route("/sessions/{id}/status", get(session_status))
        .route("/sessions/{id}/sketch", put(put_sketch).get(get_sketch))
        .route("/sessions/{id}/guide", post(post_guide))
        .route("/sessions/{id}/params", put(put_params))
        .route("/sessions/{id}/start", post(start))
        .route("/sessions/{id}/pause", post(pause))
        .route("/sessions/{id}/reset", post(reset))
        .route("/sessions/{id}/frame", get(frame))
        .route("/sessions/{id}/save", post(save))
        .route("/sketches", get(list_sketches).post(save_sketch))
        .route("/sketches/{name}", get(get_sketch_by_name))
        .route("/runs", get(list_runs))
        .route("/runs/{name}", get(get_run))
        .with_state(app);
    match static_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir).append_index_html_on_directories(true)),
        None => api,
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CreateBody {
    grid: Option<usize>,
    c: Option<f64>,
    sketch: Option<SketchDoc>,
    from_run: Option<String>,
}

async fn create_session(State(app): State<App>, body: Bytes) -> ApiResult<Response> {
    let body: CreateBody = parse_body(&body)?;
    let handle = if let Some(name) = body.from_run {
        if !valid_name(&name) {
            return Err(unprocessable(format!("invalid run name {name:?}")));
        }
        if !app.store.run_path(&name).is_dir() {
            return Err(ApiError::new(StatusCode::NOT_FOUND, format!("no run {name}")));
        }
        let app2 = app.clone();
        tokio::task::spawn_blocking(move || app2.session_from_run(&name))
            .await
            .map_err(internal)?
            .map_err(unprocessable)?
    } else {
        let grid = match (&body.sketch, body.grid) {
            (Some(doc), _) => doc.canvas,
            (None, Some(n)) => GridSpec::square(n).map_err(unprocessable)?,
            (None, None) => app.config.grid_spec(),
        };
        let mut params = app.config.guided_params();
        if let Some(c) = body.c {
            params.c = c;
        }
        let mut run = Run::new(grid, params).map_err(unprocessable)?;
        if let Some(doc) = body.sketch {
            run.set_sketch(doc).map_err(unprocessable)?;
        }
        app.create_session(run)
    };
    Ok((StatusCode::CREATED, status_json(&handle)).into_response())
}

async fn list_sessions(State(app): State<App>) -> Json<Value> {
    Json(json!(app.sessions().iter().map(|h| h.status()).collect::<Vec<_>>()))
}

async fn session_status(State(app): State<App>, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    Ok(status_json(&lookup(&app, &id)?))
}

async fn delete_session(State(app): State<App>, Path(id): Path<String>) -> ApiResult<StatusCode> {
    let h = app.remove_session(&id).ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, format!("no session {id}")))?;
    h.stop();
    Ok(StatusCode::NO_CONTENT)
}

async fn put_sketch(State(app): State<App>, Path(id): Path<String>, body: Bytes) -> ApiResult<Json<Value>> {
    let h = lookup(&app, &id)?;
    let text = std::str::from_utf8(&body).map_err(unprocessable)?;
    let doc = SketchDoc::from_json(text).map_err(unprocessable)?;
    let grid = h.status().grid;
    if [doc.canvas.nx, doc.canvas.ny] != grid {
        return Err(unprocessable(format!(
            "sketch canvas {}x{} does not match session grid {}x{}",
            doc.canvas.nx, doc.canvas.ny, grid[0], grid[1]
        )));
    }
    h.call(|r| Command::SetSketch(doc, r)).await.map_err(unprocessable)?;
    Ok(status_json(&h))
}

async fn get_sketch(State(app): State<App>, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    let h = lookup(&app, &id)?;
    let doc = h.sketch().ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, "session has no sketch"))?;
    Ok(Json(serde_json::to_value(doc).expect("sketch serializes")))
}

#[derive(Deserialize)]
#[serde(tag = "provider", rename_all = "lowercase", deny_unknown_fields)]
enum GuideBody {
    Baseline {
        radius: Option<f64>,
        speed: Option<f64>,
    },
    External {
        command: Option<String>,
        name: Option<String>,
        timeout_secs: Option<f64>,
        /// Install the baseline guide if the provider fails.
        #[serde(default = "yes")]
        fallback: bool,
    },
}

fn yes() -> bool {
    true
}

async fn post_guide(State(app): State<App>, Path(id): Path<String>, body: Bytes) -> ApiResult<Response> {
    let h = lookup(&app, &id)?;
    let body: GuideBody = parse_body(&body)?;
    let sketch = h.sketch().ok_or_else(|| ApiError::new(StatusCode::CONFLICT, "session has no sketch"))?;
    if !sketch.has_smoke() {
        return Err(unprocessable(GuideError::NoSmokeStroke));
    }
    let defaults = app.config.baseline_params();
    match body {
        GuideBody::Baseline { radius, speed } => {
            let p = BaselineParams { radius: radius.unwrap_or(defaults.radius), speed: speed.unwrap_or(defaults.speed) };
            h.call(|r| Command::BaselineGuide(p, r)).await.map_err(unprocessable)?;
            Ok(status_json(&h).into_response())
        }
        GuideBody::External { command, name, timeout_secs, fallback } => {
            let mut spec: ProviderSpec = app
                .config
                .provider_spec(command.as_deref())
                .ok_or_else(|| unprocessable("no provider command given or configured"))?;
            spec.name = name;
            if let Some(t) = timeout_secs {
                spec.timeout = Duration::try_from_secs_f64(t).map_err(unprocessable)?;
            }
            let doc = sketch.clone();
            let result = tokio::task::spawn_blocking(move || external_guide(&doc, &spec)).await.map_err(internal)?;
            match result {
                Ok(guide) => {
                    h.call(|r| Command::ExternalGuide(guide, r)).await.map_err(unprocessable)?;
                    Ok(status_json(&h).into_response())
                }
                Err(e) => {
                    let (stderr, dir) = match &e {
                        GuideError::Provider { stderr, dir, .. } => (stderr.clone(), dir.clone()),
                        GuideError::Timeout { dir, .. } => (String::new(), Some(dir.clone())),
                        _ => (String::new(), None),
                    };
                    log::warn!("session {id}: provider failed: {e}");
                    let applied = fallback && h.call(|r| Command::BaselineGuide(defaults, r)).await.is_ok();
                    let body = json!({
                        "error": e.to_string(),
                        "stderr": stderr,
                        "request_dir": dir,
                        "fallback": applied,
                    });
                    Ok((StatusCode::BAD_GATEWAY, Json(body)).into_response())
                }
            }
        }
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ParamsBody {
    c: f64,
}

async fn put_params(State(app): State<App>, Path(id): Path<String>, body: Bytes) -> ApiResult<Json<Value>> {
    let h = lookup(&app, &id)?;
    let body: ParamsBody = parse_body(&body)?;
    h.call(|r| Command::SetC(body.c, r)).await.map_err(unprocessable)?;
    Ok(status_json(&h))
}

async fn control(app: App, id: String, make: fn(super::session::Reply<()>) -> Command) -> ApiResult<Json<Value>> {
    let h = lookup(&app, &id)?;
    h.call(make).await.map_err(internal)?;
    Ok(status_json(&h))
}

async fn start(State(app): State<App>, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    control(app, id, Command::Start).await
}

async fn pause(State(app): State<App>, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    control(app, id, Command::Pause).await
}

async fn reset(State(app): State<App>, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    control(app, id, Command::Reset).await
}

#[derive(Deserialize)]
struct FrameQuery {
    after: Option<u64>,
    timeout_ms: Option<u64>,
}

fn frame_response(f: &Frame) -> Response {
    let mut headers = HeaderMap::new();
    headers.insert("content-type", HeaderValue::from_static("image/png"));
    headers.insert("cache-control", HeaderValue::from_static("no-store"));
    let mut put = |k: &'static str, v: String| {
        headers.insert(k, HeaderValue::from_str(&v).expect("ascii header"));
    };
    put("x-frame-index", f.index.to_string());
    put("x-density-min", format!("{:e}", f.lo));
    put("x-density-max", format!("{:e}", f.hi));
    put("x-sim-time", format!("{}", f.time));
    put("x-param-c", format!("{}", f.c));
    (StatusCode::OK, headers, f.png.clone()).into_response()
}

async fn frame(State(app): State<App>, Path(id): Path<String>, Query(q): Query<FrameQuery>) -> ApiResult<Response> {
    let h = lookup(&app, &id)?;
    match q.after {
        None => Ok(frame_response(&h.latest())),
        Some(after) => {
            let wait = Duration::from_millis(q.timeout_ms.unwrap_or(10_000)).min(MAX_POLL);
            match h.frame_after(after, wait).await {
                Some(f) => Ok(frame_response(&f)),
                None => Ok(StatusCode::NO_CONTENT.into_response()),
            }
        }
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SaveBody {
    name: Option<String>,
    #[serde(default = "yes")]
    frames: bool,
}

async fn save(State(app): State<App>, Path(id): Path<String>, body: Bytes) -> ApiResult<Response> {
    let h = lookup(&app, &id)?;
    let body: SaveBody = parse_body(&body)?;
    let name = body.name.unwrap_or_else(|| format!("{id}-{}", h.status().frame));
    if !valid_name(&name) {
        return Err(unprocessable(format!("invalid run name {name:?}")));
    }
    let dir = app.store.run_path(&name);
    let record = h.call(|reply| Command::Save { dir, frames: body.frames, reply }).await.map_err(internal)?;
    Ok((StatusCode::CREATED, Json(json!({ "name": name, "record": record }))).into_response())
}

async fn list_sketches(State(app): State<App>) -> Json<Value> {
    Json(json!(app.store.sketch_names()))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SketchEntry {
    name: String,
    sketch: Value,
}

async fn save_sketch(State(app): State<App>, body: Bytes) -> ApiResult<Response> {
    let entry: SketchEntry = parse_body(&body)?;
    if !valid_name(&entry.name) {
        return Err(unprocessable(format!("invalid sketch name {:?}", entry.name)));
    }
    let doc = SketchDoc::from_json(&entry.sketch.to_string()).map_err(unprocessable)?;
    app.store.save_sketch(&entry.name, &doc).map_err(internal)?;
    Ok((StatusCode::CREATED, Json(json!({ "name": entry.name })).into_response()).into_response())
}

async fn get_sketch_by_name(State(app): State<App>, Path(name): Path<String>) -> ApiResult<Json<Value>> {
    let doc = valid_name(&name)
        .then(|| app.store.load_sketch(&name))
        .flatten()
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, format!("no sketch {name}")))?;
    Ok(Json(serde_json::to_value(doc).expect("sketch serializes")))
}

async fn list_runs(State(app): State<App>) -> Json<Value> {
    Json(json!(app.store.run_names()))
}

async fn get_run(State(app): State<App>, Path(name): Path<String>) -> ApiResult<Json<Value>> {
    if !valid_name(&name) {
        return Err(ApiError::new(StatusCode::NOT_FOUND, format!("no run {name}")));
    }
    let record = app.store.load_run(&name).map_err(|e| ApiError::new(StatusCode::NOT_FOUND, e))?;
    Ok(Json(serde_json::to_value(record).expect("record serializes")))
}
