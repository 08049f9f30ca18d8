//! HTTP/JSON front end over the decode engine.
//!
//! Models and sessions live in memory only; restarting the server forgets
//! both. Each session is guarded by its own lock so that steps on one session
//! are serialized while distinct sessions proceed in parallel. Decoding runs
//! on the blocking thread pool.

mod error;
mod store;

pub use error::{parse_body, ApiError};
pub use store::{LoadedModel, Store, DEFAULT_SESSION_CAP};

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::header::CONTENT_TYPE;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use loopforge_core::recon::{oriented_cloud, CloudParams};
use loopforge_core::sequence::to_loopseq_string;
use loopforge_core::LoopToken;
use loopforge_model::decode::{interpolate, sample_latent, LoopSpec, ScriptedEdit, StepRecord, Target};
use loopforge_model::{
    load_checkpoint, DecodeSession, EditScript, Model, ModelConfig, SessionStatus, StopRule,
};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use std::net::SocketAddr;
use std::sync::Arc;
use store::{now_ms, SessionEntry, SharedSession};

pub type AppState = Arc<Store>;

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/models", get(list_models))
        .route("/models/load", post(load_model))
        .route("/models/{id}", get(get_model))
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/step", post(step_session))
        .route("/sessions/{id}/run", post(run_session))
        .route("/sessions/{id}/edits", post(edit_session))
        .route("/sessions/{id}/rewind", post(rewind_session))
        .route("/sessions/{id}/loops", get(session_loops))
        .route("/sessions/{id}/points", get(session_points))
        .route("/interpolate", post(interpolate_handler))
        .with_state(state)
}

/// Binds `addr` and serves until ctrl-c.
pub async fn serve(addr: SocketAddr, state: AppState) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}

type ApiResult<T> = Result<T, ApiError>;

async fn blocking<T, F>(f: F) -> ApiResult<T>
where
    F: FnOnce() -> ApiResult<T> + Send + 'static,
    T: Send + 'static,
{
    tokio::task::spawn_blocking(f).await.map_err(|e| {
        ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string())
    })?
}

async fn health(State(store): State<AppState>) -> Json<Value> {
    Json(json!({
        "status": "ok",
        "models": store.model_ids().len(),
        "sessions": store.session_count(),
    }))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct LoadRequest {
    checkpoint_path: String,
}

#[derive(Serialize)]
struct ModelResource {
    model_id: String,
    checkpoint_path: String,
    step: u64,
    config: ModelConfig,
}

fn model_resource(id: &str, m: &LoadedModel) -> ModelResource {
    ModelResource {
        model_id: id.to_string(),
        checkpoint_path: m.checkpoint_path.clone(),
        step: m.model.step,
        config: m.model.config().clone(),
    }
}

async fn load_model(State(store): State<AppState>, body: Bytes) -> ApiResult<Json<ModelResource>> {
    let req: LoadRequest = parse_body(&body)?;
    let path = req.checkpoint_path.clone();
    let model = blocking(move || {
        load_checkpoint(&path).map_err(|e| {
            ApiError::new(StatusCode::BAD_REQUEST, "bad_checkpoint", e.to_string())
                .with_field("checkpoint_path")
        })
    })
    .await?;
    let loaded = LoadedModel {
        model: Arc::new(model),
        checkpoint_path: req.checkpoint_path,
    };
    let id = store.add_model(loaded);
    let m = store.model(&id).expect("just inserted");
    Ok(Json(model_resource(&id, &m)))
}

async fn list_models(State(store): State<AppState>) -> Json<Value> {
    let models: Vec<ModelResource> = store
        .model_ids()
        .iter()
        .filter_map(|id| store.model(id).map(|m| model_resource(id, &m)))
        .collect();
    Json(json!({ "models": models }))
}

async fn get_model(State(store): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<ModelResource>> {
    let m = store.model(&id).ok_or_else(|| ApiError::not_found("model", &id))?;
    Ok(Json(model_resource(&id, &m)))
}

fn lookup_model(store: &Store, id: &str) -> ApiResult<Arc<Model>> {
    store
        .model(id)
        .map(|m| Arc::clone(&m.model))
        .ok_or_else(|| ApiError::not_found("model", id).with_field("model_id"))
}

fn lookup_session(store: &Store, id: &str) -> ApiResult<SharedSession> {
    store.session(id).ok_or_else(|| ApiError::not_found("session", id))
}

/// Latent code given explicitly or as `{"sample": seed}`.
#[derive(Deserialize)]
#[serde(untagged)]
enum LatentSpec {
    Explicit(Vec<f64>),
    Sampled { sample: u64 },
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CreateSession {
    model_id: String,
    z: Option<LatentSpec>,
    stop_rule: Option<StopRule>,
}

#[derive(Serialize)]
struct TokenView {
    step: usize,
    coords: Vec<f64>,
    level_up: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    flag_prob: Option<f64>,
}

fn token_view(step: usize, tok: &LoopToken, flag_prob: Option<f64>) -> TokenView {
    TokenView {
        step,
        coords: tok.coords.clone(),
        level_up: tok.level_up,
        flag_prob,
    }
}

fn edit_views(edits: &[(usize, loopforge_model::EditOp)]) -> Vec<Value> {
    edits
        .iter()
        .map(|(step, op)| {
            let mut v = serde_json::to_value(op).expect("edit ops serialize");
            v["step"] = json!(step);
            v
        })
        .collect()
}

fn session_view(e: &SessionEntry) -> Value {
    let s = &e.session;
    let emitted: Vec<TokenView> = s
        .emitted()
        .iter()
        .zip(s.flag_probs())
        .enumerate()
        .map(|(i, (t, p))| token_view(i, t, Some(*p)))
        .collect();
    json!({
        "session_id": e.id,
        "model_id": e.model_id,
        "status": s.status(),
        "stop_rule": s.stop_rule(),
        "z": s.z(),
        "seed": s.seed(),
        "emitted": emitted,
        "length": s.emitted().len(),
        "level_ups": s.emitted().iter().filter(|t| t.level_up).count(),
        "frozen_prefix": s.frozen_prefix(),
        "pending_edits": edit_views(&s.pending_edits()),
        "applied_edits": edit_views(s.applied_edits()),
        "created_ms": e.created_ms,
        "updated_ms": e.updated_ms,
    })
}

async fn create_session(State(store): State<AppState>, body: Bytes) -> ApiResult<(StatusCode, Json<Value>)> {
    let req: CreateSession = parse_body(&body)?;
    let model = lookup_model(&store, &req.model_id)?;
    let stop = req
        .stop_rule
        .unwrap_or_else(|| DecodeSession::default_stop(&model));
    let session = match req.z {
        None => DecodeSession::sampled(model, 0, stop),
        Some(LatentSpec::Sampled { sample }) => DecodeSession::sampled(model, sample, stop),
        Some(LatentSpec::Explicit(z)) => {
            let n_z = model.config().latent_dim;
            if z.len() != n_z {
                return Err(ApiError::invalid(format!(
                    "z has length {}, model expects {n_z}",
                    z.len()
                ))
                .with_field("z"));
            }
            DecodeSession::new(model, z, stop)
        }
    }
    .map_err(|e| ApiError::from(e).with_field("stop_rule"))?;
    let entry = store.add_session(&req.model_id, session);
    let view = session_view(&entry.lock().expect("session lock"));
    Ok((StatusCode::CREATED, Json(view)))
}

async fn get_session(State(store): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    let entry = lookup_session(&store, &id)?;
    let view = session_view(&entry.lock().expect("session lock"));
    Ok(Json(view))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct StepRequest {
    #[serde(default = "one")]
    count: usize,
}

fn one() -> usize {
    1
}

fn record_view(r: &StepRecord) -> Value {
    json!({
        "step": r.step,
        "coords": r.token.coords,
        "level_up": r.token.level_up,
        "flag_prob": r.flag_prob,
        "appended": r.appended,
    })
}

fn running(e: &SessionEntry) -> ApiResult<()> {
    match e.session.status() {
        SessionStatus::Running => Ok(()),
        other => Err(ApiError::new(
            StatusCode::CONFLICT,
            "session_state",
            format!("session is {}, not running", other.as_str()),
        )),
    }
}

async fn step_session(
    State(store): State<AppState>,
    Path(id): Path<String>,
    body: Bytes,
) -> ApiResult<Json<Value>> {
    let req: StepRequest = parse_body(&body)?;
    if req.count == 0 {
        return Err(ApiError::invalid("count must be positive").with_field("count"));
    }
    let entry = lookup_session(&store, &id)?;
    blocking(move || {
        let mut e = entry.lock().expect("session lock");
        running(&e)?;
        let records = e.session.step_n(req.count)?;
        e.updated_ms = now_ms();
        let new_tokens: Vec<Value> = records.iter().filter(|r| r.appended).map(record_view).collect();
        Ok(Json(json!({
            "new_tokens": new_tokens,
            "steps": records.iter().map(record_view).collect::<Vec<_>>(),
            "status": e.session.status(),
            "length": e.session.emitted().len(),
        })))
    })
    .await
}

async fn run_session(State(store): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    let entry = lookup_session(&store, &id)?;
    blocking(move || {
        let mut e = entry.lock().expect("session lock");
        running(&e)?;
        e.session.run()?;
        e.updated_ms = now_ms();
        Ok(Json(session_view(&e)))
    })
    .await
}

async fn edit_session(
    State(store): State<AppState>,
    Path(id): Path<String>,
    body: Bytes,
) -> ApiResult<Json<Value>> {
    let script = parse_script(&body)?;
    let entry = lookup_session(&store, &id)?;
    let mut e = entry.lock().expect("session lock");
    let accepted = e.session.apply_script(&script)?;
    e.updated_ms = now_ms();
    Ok(Json(json!({
        "accepted": edit_views(&accepted),
        "session": session_view(&e),
    })))
}

/// Edit scripts come either as `{"edits": [...]}` or as a bare array.
fn parse_script(body: &[u8]) -> ApiResult<EditScript> {
    #[derive(Deserialize)]
    #[serde(deny_unknown_fields)]
    struct Wrapped {
        edits: Vec<Value>,
    }
    let first = body.iter().find(|b| !b.is_ascii_whitespace());
    let raw: Vec<Value> = if first == Some(&b'[') {
        parse_body(body)?
    } else {
        parse_body::<Wrapped>(body)?.edits
    };
    let edits = raw
        .into_iter()
        .enumerate()
        .map(|(i, v)| {
            parse_edit(v).map_err(|mut e| {
                e.field = Some(match e.field.take() {
                    Some(f) => format!("edits[{i}].{f}"),
                    None => format!("edits[{i}]"),
                });
                e
            })
        })
        .collect::<ApiResult<Vec<_>>>()?;
    Ok(EditScript { edits })
}

/// Parses one scripted edit. The op enum is internally tagged, which hides
/// field paths from serde, so each op's arguments are checked on their own
/// struct first.
fn parse_edit(v: Value) -> ApiResult<ScriptedEdit> {
    #[derive(Deserialize)]
    #[allow(dead_code)]
    struct Step {
        step: Target,
    }
    #[derive(Deserialize)]
    #[allow(dead_code)]
    struct Translate {
        dx: f64,
        dy: f64,
    }
    #[derive(Deserialize)]
    #[allow(dead_code)]
    struct Scale {
        s: f64,
    }
    #[derive(Deserialize)]
    #[allow(dead_code)]
    struct Replace {
        points: Vec<[f64; 2]>,
        level_up: bool,
    }
    #[derive(Deserialize)]
    #[allow(dead_code)]
    struct Insert {
        loops: Vec<LoopSpec>,
    }
    #[derive(Deserialize)]
    #[allow(dead_code)]
    struct Freeze {
        t: usize,
    }
    fn check<T: serde::de::DeserializeOwned>(v: &Value) -> ApiResult<()> {
        parse_body::<T>(v.to_string().as_bytes()).map(|_| ())
    }
    check::<Step>(&v)?;
    match v.get("op").and_then(Value::as_str) {
        Some("translate") => check::<Translate>(&v)?,
        Some("scale") => check::<Scale>(&v)?,
        Some("replace") => check::<Replace>(&v)?,
        Some("insert") => check::<Insert>(&v)?,
        Some("freeze_prefix") => check::<Freeze>(&v)?,
        Some(other) => {
            return Err(ApiError::invalid(format!("unknown edit op `{other}`")).with_field("op"))
        }
        None => return Err(ApiError::invalid("edit needs an `op` string").with_field("op")),
    }
    serde_json::from_value(v).map_err(|e| ApiError::invalid(e.to_string()))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RewindRequest {
    to_step: usize,
}

async fn rewind_session(
    State(store): State<AppState>,
    Path(id): Path<String>,
    body: Bytes,
) -> ApiResult<Json<Value>> {
    let req: RewindRequest = parse_body(&body)?;
    let entry = lookup_session(&store, &id)?;
    let mut e = entry.lock().expect("session lock");
    e.session
        .rewind(req.to_step)
        .map_err(|err| ApiError::from(err).with_field("to_step"))?;
    e.updated_ms = now_ms();
    Ok(Json(session_view(&e)))
}

async fn session_loops(State(store): State<AppState>, Path(id): Path<String>) -> ApiResult<Response> {
    let entry = lookup_session(&store, &id)?;
    let e = entry.lock().expect("session lock");
    let text = to_loopseq_string(&e.session.sequence()?).map_err(loopforge_model::ModelError::from)?;
    Ok(([(CONTENT_TYPE, "application/x-ndjson")], text).into_response())
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PointsQuery {
    density: Option<f64>,
    seed: Option<u64>,
}

async fn session_points(
    State(store): State<AppState>,
    Path(id): Path<String>,
    Query(q): Query<PointsQuery>,
) -> ApiResult<Json<Value>> {
    let mut params = CloudParams::default();
    if let Some(d) = q.density {
        if !d.is_finite() || d < 0.0 {
            return Err(ApiError::invalid("density must be a non-negative number").with_field("density"));
        }
        params.cap_density = d;
    }
    params.seed = q.seed.unwrap_or(0);
    let entry = lookup_session(&store, &id)?;
    let seq = entry.lock().expect("session lock").session.sequence()?;
    blocking(move || {
        let cloud = oriented_cloud(&seq, params)
            .map_err(|e| ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "geometry", e.to_string()))?;
        let points: Vec<[f64; 3]> = cloud.points.iter().map(|p| p.to_array()).collect();
        let normals: Vec<[f64; 3]> = cloud.normals.iter().map(|n| n.to_array()).collect();
        Ok(Json(json!({
            "count": points.len(),
            "points": points,
            "normals": normals,
        })))
    })
    .await
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct InterpolateRequest {
    model_id: String,
    z_a: LatentSpec,
    z_b: LatentSpec,
    k: usize,
    stop_rule: Option<StopRule>,
}

fn resolve_latent(spec: LatentSpec, n_z: usize, field: &str) -> ApiResult<Vec<f64>> {
    match spec {
        LatentSpec::Sampled { sample } => Ok(sample_latent(n_z, sample)),
        LatentSpec::Explicit(z) if z.len() == n_z => Ok(z),
        LatentSpec::Explicit(z) => Err(ApiError::invalid(format!(
            "{field} has length {}, model expects {n_z}",
            z.len()
        ))
        .with_field(field)),
    }
}

async fn interpolate_handler(State(store): State<AppState>, body: Bytes) -> ApiResult<Json<Value>> {
    let req: InterpolateRequest = parse_body(&body)?;
    let model = lookup_model(&store, &req.model_id)?;
    let n_z = model.config().latent_dim;
    let z_a = resolve_latent(req.z_a, n_z, "z_a")?;
    let z_b = resolve_latent(req.z_b, n_z, "z_b")?;
    let zs = interpolate(&z_a, &z_b, req.k).map_err(|e| ApiError::from(e).with_field("k"))?;
    let stop = req
        .stop_rule
        .unwrap_or_else(|| DecodeSession::default_stop(&model));
    blocking(move || {
        let mut out = Vec::with_capacity(zs.len());
        for z in zs {
            let (seq, status) = loopforge_model::decode::decode(Arc::clone(&model), z.clone(), stop, None)?;
            let loopseq = to_loopseq_string(&seq).map_err(loopforge_model::ModelError::from)?;
            out.push(json!({ "z": z, "status": status, "loopseq": loopseq }));
        }
        Ok(Json(json!({ "sequences": out })))
    })
    .await
}
