use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use loopforge_core::sequence::{from_loopseq_str, to_loopseq_string};
use loopforge_model::decode::{decode, sample_latent};
use loopforge_model::{save_checkpoint, EditScript, Model, ModelConfig, StopRule};
use loopforge_service::{router, Store};
use serde_json::{json, Value};
use std::sync::Arc;
use tower::ServiceExt;

struct Fixture {
    app: Router,
    _dir: tempfile::TempDir,
    ckpt: String,
    model: Arc<Model>,
}

fn fixture() -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = ModelConfig::tiny();
    cfg.seed = 3;
    let model = Model::new(&cfg).unwrap();
    let path = dir.path().join("tiny.ckpt");
    save_checkpoint(&model, &path).unwrap();
    Fixture {
        app: router(Arc::new(Store::new(4))),
        ckpt: path.to_string_lossy().into_owned(),
        _dir: dir,
        model: Arc::new(model),
    }
}

async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Vec<u8>) {
    let req = Request::builder().method(method).uri(uri);
    let req = match body {
        Some(b) => req
            .header("content-type", "application/json")
            .body(Body::from(b.to_string())),
        None => req.body(Body::empty()),
    }
    .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes().to_vec();
    (status, bytes)
}

async fn call_json(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let (status, bytes) = call(app, method, uri, body).await;
    (status, serde_json::from_slice(&bytes).unwrap_or(Value::Null))
}

async fn load(f: &Fixture) -> String {
    let (s, v) = call_json(&f.app, "POST", "/models/load", Some(json!({"checkpoint_path": f.ckpt}))).await;
    assert_eq!(s, StatusCode::OK, "{v}");
    v["model_id"].as_str().unwrap().to_string()
}

async fn session(f: &Fixture, model_id: &str, z: Value) -> String {
    let (s, v) = call_json(&f.app, "POST", "/sessions", Some(json!({"model_id": model_id, "z": z}))).await;
    assert_eq!(s, StatusCode::CREATED, "{v}");
    v["session_id"].as_str().unwrap().to_string()
}

#[tokio::test]
async fn health_reports_counts() {
    let f = fixture();
    let (s, v) = call_json(&f.app, "GET", "/health", None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["status"], "ok");
    assert_eq!(v["sessions"], 0);
}

#[tokio::test]
async fn loading_twice_gives_two_ids_with_the_same_config() {
    let f = fixture();
    let a = load(&f).await;
    let b = load(&f).await;
    assert_ne!(a, b);
    let (_, ma) = call_json(&f.app, "GET", &format!("/models/{a}"), None).await;
    let (_, mb) = call_json(&f.app, "GET", &format!("/models/{b}"), None).await;
    assert_eq!(ma["config"], mb["config"]);
    assert_eq!(ma["config"], serde_json::to_value(f.model.config()).unwrap());
    let (_, list) = call_json(&f.app, "GET", "/models", None).await;
    assert_eq!(list["models"].as_array().unwrap().len(), 2);
}

#[tokio::test]
async fn bad_checkpoint_path_is_400_with_message() {
    let f = fixture();
    let (s, v) = call_json(&f.app, "POST", "/models/load", Some(json!({"checkpoint_path": "/nonexistent/x.ckpt"}))).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    assert_eq!(v["field"], "checkpoint_path");
    assert!(!v["message"].as_str().unwrap().is_empty());
    let (s, v) = call_json(&f.app, "POST", "/models/load", Some(json!({}))).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(v["field"], "checkpoint_path");
}

#[tokio::test]
async fn malformed_json_is_400() {
    let f = fixture();
    let req = Request::post("/models/load").body(Body::from("{not json")).unwrap();
    let resp = f.app.clone().oneshot(req).await.unwrap();
    assert_eq!(resp.status(), StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn explicit_z_is_accepted_and_wrong_length_rejected() {
    let f = fixture();
    let m = load(&f).await;
    let z = vec![0.25; 8];
    let sid = session(&f, &m, json!(z)).await;
    let (_, v) = call_json(&f.app, "GET", &format!("/sessions/{sid}"), None).await;
    assert_eq!(v["z"], json!(z));
    assert_eq!(v["status"], "running");
    assert_eq!(v["model_id"], m);

    let (s, v) = call_json(&f.app, "POST", "/sessions", Some(json!({"model_id": m, "z": [0.0, 1.0]}))).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(v["field"], "z");
}

#[tokio::test]
async fn unknown_ids_are_404() {
    let f = fixture();
    let (s, v) = call_json(&f.app, "POST", "/sessions", Some(json!({"model_id": "m99"}))).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    assert_eq!(v["code"], "not_found");
    let (s, _) = call_json(&f.app, "GET", "/sessions/s42", None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    let (s, _) = call_json(&f.app, "POST", "/sessions/s42/run", None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn sampled_z_is_reproducible_per_seed() {
    let f = fixture();
    let m = load(&f).await;
    let a = session(&f, &m, json!({"sample": 7})).await;
    let b = session(&f, &m, json!({"sample": 7})).await;
    let c = session(&f, &m, json!({"sample": 8})).await;
    let get = |id: String| {
        let app = f.app.clone();
        async move { call_json(&app, "GET", &format!("/sessions/{id}"), None).await.1 }
    };
    let (va, vb, vc) = (get(a).await, get(b).await, get(c).await);
    assert_eq!(va["z"], vb["z"]);
    assert_ne!(va["z"], vc["z"]);
    assert_eq!(va["z"], json!(sample_latent(8, 7)));
    assert_eq!(va["seed"], 7);
}

#[tokio::test]
async fn step_then_run_then_step_conflicts() {
    let f = fixture();
    let m = load(&f).await;
    let sid = session(&f, &m, json!({"sample": 1})).await;
    let (s, v) = call_json(&f.app, "POST", &format!("/sessions/{sid}/step"), Some(json!({"count": 2}))).await;
    assert_eq!(s, StatusCode::OK, "{v}");
    assert!(v["new_tokens"].as_array().unwrap().len() <= 2);
    let (s, v) = call_json(&f.app, "POST", &format!("/sessions/{sid}/step"), None).await;
    assert_eq!(s, StatusCode::OK, "{v}");

    let (s, v) = call_json(&f.app, "POST", &format!("/sessions/{sid}/run"), None).await;
    assert_eq!(s, StatusCode::OK);
    let status = v["status"].as_str().unwrap();
    assert!(status == "done" || status == "aborted");

    let (s, v) = call_json(&f.app, "POST", &format!("/sessions/{sid}/step"), None).await;
    assert_eq!(s, StatusCode::CONFLICT);
    assert_eq!(v["code"], "session_state");

    let (s, v) = call_json(&f.app, "POST", &format!("/sessions/{sid}/step"), Some(json!({"count": 0}))).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(v["field"], "count");
}

#[tokio::test]
async fn run_matches_direct_decode_and_loops_round_trip() {
    let f = fixture();
    let m = load(&f).await;
    let z: Vec<f64> = (0..8).map(|i| (i as f64 * 0.37).cos()).collect();
    let sid = session(&f, &m, json!(z)).await;
    call_json(&f.app, "POST", &format!("/sessions/{sid}/run"), None).await;
    let (s, bytes) = call(&f.app, "GET", &format!("/sessions/{sid}/loops"), None).await;
    assert_eq!(s, StatusCode::OK);
    let text = String::from_utf8(bytes).unwrap();
    let parsed = from_loopseq_str(&text).unwrap();
    assert_eq!(to_loopseq_string(&parsed).unwrap(), text);

    let stop = loopforge_model::DecodeSession::default_stop(&f.model);
    let (direct, _) = decode(Arc::clone(&f.model), z, stop, None).unwrap();
    assert_eq!(to_loopseq_string(&direct).unwrap(), text);
}

#[tokio::test]
async fn edits_change_downstream_and_match_the_engine() {
    let f = fixture();
    let m = load(&f).await;
    let z = sample_latent(8, 4);
    let stop = StopRule::PlaneCount(4);
    let (s, v) = call_json(
        &f.app,
        "POST",
        "/sessions",
        Some(json!({"model_id": m, "z": z, "stop_rule": {"plane_count": 4}})),
    )
    .await;
    assert_eq!(s, StatusCode::CREATED, "{v}");
    let sid = v["session_id"].as_str().unwrap().to_string();
    let script = json!({"edits": [{"step": 1, "op": "translate", "dx": 0.2, "dy": 0.0}]});
    let (s, v) = call_json(&f.app, "POST", &format!("/sessions/{sid}/edits"), Some(script.clone())).await;
    assert_eq!(s, StatusCode::OK, "{v}");
    assert_eq!(v["accepted"][0]["step"], 1);
    assert_eq!(v["session"]["pending_edits"].as_array().unwrap().len(), 1);
    call_json(&f.app, "POST", &format!("/sessions/{sid}/run"), None).await;
    let (_, bytes) = call(&f.app, "GET", &format!("/sessions/{sid}/loops"), None).await;
    let served = String::from_utf8(bytes).unwrap();

    let parsed = EditScript::from_json(&script.to_string()).unwrap();
    let (edited, _) = decode(Arc::clone(&f.model), z.clone(), stop, Some(&parsed)).unwrap();
    assert_eq!(to_loopseq_string(&edited).unwrap(), served);
    let (clean, _) = decode(Arc::clone(&f.model), z, stop, None).unwrap();
    assert_ne!(to_loopseq_string(&clean).unwrap(), served);
}

#[tokio::test]
async fn malformed_edit_names_the_field() {
    let f = fixture();
    let m = load(&f).await;
    let sid = session(&f, &m, json!({"sample": 2})).await;
    let uri = format!("/sessions/{sid}/edits");
    let cases = [
        (json!([{"step": 0, "op": "translate", "dx": "far", "dy": 0.0}]), "edits[0].dx"),
        (json!({"edits": [{"step": 0, "op": "scale"}]}), "edits[0].s"),
        (json!([{"op": "scale", "s": 2.0}]), "edits[0].step"),
        (json!([{"step": 0, "op": "twist"}]), "edits[0].op"),
        (json!([{"step": 0, "op": "scale", "s": -1.0}]), "s"),
        (json!([{"step": 0, "op": "replace", "points": [[0.0, 0.0]], "level_up": true}]), "points"),
    ];
    for (body, field) in cases {
        let (s, v) = call_json(&f.app, "POST", &uri, Some(body.clone())).await;
        assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY, "{body} -> {v}");
        assert_eq!(v["field"], field, "{body} -> {v}");
    }
}

#[tokio::test]
async fn rewind_to_zero_empties_the_session() {
    let f = fixture();
    let m = load(&f).await;
    let sid = session(&f, &m, json!({"sample": 5})).await;
    call_json(&f.app, "POST", &format!("/sessions/{sid}/step"), Some(json!({"count": 3}))).await;
    call_json(
        &f.app,
        "POST",
        &format!("/sessions/{sid}/edits"),
        Some(json!([{"step": "next", "op": "scale", "s": 1.5}])),
    )
    .await;
    let (s, v) = call_json(&f.app, "POST", &format!("/sessions/{sid}/rewind"), Some(json!({"to_step": 0}))).await;
    assert_eq!(s, StatusCode::OK, "{v}");
    assert_eq!(v["emitted"], json!([]));
    assert_eq!(v["pending_edits"], json!([]));
    assert_eq!(v["status"], "running");
    let (s, v) = call_json(&f.app, "POST", &format!("/sessions/{sid}/rewind"), Some(json!({"to_step": 9}))).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(v["field"], "to_step");
}

#[tokio::test]
async fn points_have_unit_normals() {
    let f = fixture();
    let m = load(&f).await;
    let sid = session(&f, &m, json!({"sample": 6})).await;
    call_json(&f.app, "POST", &format!("/sessions/{sid}/run"), None).await;
    let (s, v) = call_json(&f.app, "GET", &format!("/sessions/{sid}/points?density=50&seed=1"), None).await;
    assert_eq!(s, StatusCode::OK, "{v}");
    let normals = v["normals"].as_array().unwrap();
    assert_eq!(normals.len(), v["points"].as_array().unwrap().len());
    assert!(!normals.is_empty());
    for n in normals {
        let len: f64 = n.as_array().unwrap().iter().map(|c| c.as_f64().unwrap().powi(2)).sum::<f64>().sqrt();
        assert!((len - 1.0).abs() < 1e-6);
    }
    let (s, v) = call_json(&f.app, "GET", &format!("/sessions/{sid}/points?density=-1"), None).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(v["field"], "density");
}

#[tokio::test]
async fn interpolation_endpoints_match_direct_decodes() {
    let f = fixture();
    let m = load(&f).await;
    let (za, zb) = (sample_latent(8, 1), sample_latent(8, 2));
    let (s, v) = call_json(
        &f.app,
        "POST",
        "/interpolate",
        Some(json!({"model_id": m, "z_a": za, "z_b": {"sample": 2}, "k": 2})),
    )
    .await;
    assert_eq!(s, StatusCode::OK, "{v}");
    let seqs = v["sequences"].as_array().unwrap();
    assert_eq!(seqs.len(), 2);
    let stop = loopforge_model::DecodeSession::default_stop(&f.model);
    for (entry, z) in seqs.iter().zip([za, zb]) {
        let (direct, _) = decode(Arc::clone(&f.model), z, stop, None).unwrap();
        assert_eq!(entry["loopseq"].as_str().unwrap(), to_loopseq_string(&direct).unwrap());
    }
    let (s, v) = call_json(&f.app, "POST", "/interpolate", Some(json!({"model_id": m, "z_a": [1.0], "z_b": [1.0], "k": 3}))).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(v["field"], "z_a");
}

#[tokio::test]
async fn oldest_sessions_are_evicted_past_the_cap() {
    let f = fixture();
    let m = load(&f).await;
    let first = session(&f, &m, json!({"sample": 0})).await;
    let second = session(&f, &m, json!({"sample": 0})).await;
    for _ in 0..2 {
        session(&f, &m, json!({"sample": 0})).await;
    }
    // Touch the first so that the second becomes least recently used.
    call_json(&f.app, "GET", &format!("/sessions/{first}"), None).await;
    session(&f, &m, json!({"sample": 0})).await;
    assert_eq!(call_json(&f.app, "GET", &format!("/sessions/{first}"), None).await.0, StatusCode::OK);
    assert_eq!(call_json(&f.app, "GET", &format!("/sessions/{second}"), None).await.0, StatusCode::NOT_FOUND);
    assert_eq!(call_json(&f.app, "GET", "/health", None).await.1["sessions"], 4);
}
