use alae_core::adaptation::AdaptationConfig;
use alae_core::editing::AttributeDirection;
use alae_core::inversion::LatentOptConfig;
use alae_core::model::{ArchConfig, GenerativeAutoencoder};
use alae_core::Image;
use alae_service::{router, AppState, ServiceConfig};
use axum::body::Body;
use axum::http::{Method, Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

fn direction(name: &str, seed: u64, d: usize) -> AttributeDirection {
    let mut s = seed;
    let normal: Vec<f64> = (0..d)
        .map(|_| {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (s >> 11) as f64 / (1u64 << 53) as f64 - 0.5
        })
        .collect();
    AttributeDirection::new(name, normal, 0.1).unwrap()
}

fn app_with(cache_capacity: usize, max_upload_bytes: usize) -> (Router, AppState, tempfile::TempDir) {
    let dir = tempfile::tempdir().unwrap();
    let model = GenerativeAutoencoder::<f32>::new(ArchConfig::tiny16(), 3).unwrap().eval();
    let d = model.d_w();
    let dirs = vec![direction("age", 1, d), direction("smile", 2, d), direction("hair", 3, d)];
    let cfg = ServiceConfig {
        data_dir: Some(dir.path().to_path_buf()),
        cache_capacity,
        max_upload_bytes,
        adaptation: AdaptationConfig {
            steps: 30,
            step_size: 1e-3,
            ..Default::default()
        },
        latent_opt: LatentOptConfig {
            steps: 30,
            ..Default::default()
        },
        ..Default::default()
    };
    let state = AppState::new(model, dirs, cfg).unwrap();
    (router(state.clone()), state, dir)
}

fn app() -> (Router, AppState, tempfile::TempDir) {
    app_with(8, 1 << 20)
}

fn png(seed: u64, size: usize) -> Vec<u8> {
    let mut s = seed;
    Image::from_fn(size, size, |_, _, _| {
        s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        (s >> 11) as f64 / (1u64 << 53) as f64
    })
    .to_png()
    .unwrap()
}

async fn call(app: &Router, method: Method, uri: &str, body: Vec<u8>) -> (StatusCode, Vec<u8>) {
    let req = Request::builder().method(method).uri(uri).body(Body::from(body)).unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes().to_vec();
    (status, bytes)
}

async fn call_json(app: &Router, method: Method, uri: &str, body: Value) -> (StatusCode, Value) {
    let (s, b) = call(app, method, uri, serde_json::to_vec(&body).unwrap()).await;
    (s, serde_json::from_slice(&b).unwrap_or(Value::Null))
}

async fn new_session(app: &Router, image_seed: u64) -> String {
    let (s, v) = call_json(app, Method::POST, "/api/v1/sessions", json!({})).await;
    assert_eq!(s, StatusCode::CREATED);
    let id = v["session_id"].as_str().unwrap().to_string();
    let (s, _) = call(app, Method::PUT, &format!("/api/v1/sessions/{id}/image"), png(image_seed, 16)).await;
    assert_eq!(s, StatusCode::OK);
    id
}

async fn invert(app: &Router, id: &str, body: Value) -> (StatusCode, Value) {
    call_json(app, Method::POST, &format!("/api/v1/sessions/{id}/invert"), body).await
}

/// Polls to completion and returns (final snapshot, polled progress values).
async fn wait_job(app: &Router, job_id: &str) -> (Value, Vec<f64>) {
    let mut progress = Vec::new();
    for _ in 0..6000 {
        let (s, v) = call_json(app, Method::GET, &format!("/api/v1/jobs/{job_id}"), Value::Null).await;
        assert_eq!(s, StatusCode::OK);
        progress.push(v["progress"].as_f64().unwrap());
        match v["status"].as_str().unwrap() {
            "done" | "failed" => return (v, progress),
            _ => tokio::time::sleep(std::time::Duration::from_millis(5)).await,
        }
    }
    panic!("job {job_id} did not finish");
}

async fn adapt(app: &Router, id: &str) -> Value {
    let (s, v) = call_json(app, Method::POST, &format!("/api/v1/sessions/{id}/adapt"), json!({})).await;
    assert_eq!(s, StatusCode::ACCEPTED, "{v}");
    let (job, _) = wait_job(app, v["job_id"].as_str().unwrap()).await;
    assert_eq!(job["status"], "done", "{job}");
    job
}

async fn edit(app: &Router, id: &str, body: Value) -> (StatusCode, Value) {
    call_json(app, Method::POST, &format!("/api/v1/sessions/{id}/edit"), body).await
}

async fn image_bytes(app: &Router, url: &str) -> Vec<u8> {
    let (s, b) = call(app, Method::GET, url, vec![]).await;
    assert_eq!(s, StatusCode::OK);
    b
}

#[tokio::test]
async fn invert_adapt_edit_flow() {
    let (app, _, _dir) = app();
    let id = new_session(&app, 1).await;
    let (s, v) = invert(&app, &id, json!({"method": "encoder"})).await;
    assert_eq!(s, StatusCode::OK);
    assert!(v["latent_id"].is_string());
    let recon = image_bytes(&app, v["recon_image_url"].as_str().unwrap()).await;
    assert_eq!(&recon[1..4], b"PNG");

    let (s, _) = edit(&app, &id, json!({"attribute": "smile", "alpha": 1.0})).await;
    assert_eq!(s, StatusCode::CONFLICT);
    let (s, v) = edit(&app, &id, json!({"attribute": "smile", "alpha": 0.0, "use_base": true})).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(image_bytes(&app, v["image_url"].as_str().unwrap()).await, recon);

    let (s, v) = call_json(&app, Method::POST, &format!("/api/v1/sessions/{id}/adapt"), json!({})).await;
    assert_eq!(s, StatusCode::ACCEPTED);
    let (job, progress) = wait_job(&app, v["job_id"].as_str().unwrap()).await;
    assert_eq!(job["status"], "done");
    assert!(progress.windows(2).all(|p| p[0] <= p[1]), "{progress:?}");
    assert_eq!(*progress.last().unwrap(), 1.0);
    let curve: Vec<f64> = serde_json::from_value(job["loss_curve"].clone()).unwrap();
    assert_eq!(curve.len(), 31);
    assert!(curve.last().unwrap() <= &curve[0]);

    let adapted_recon = image_bytes(&app, job["result"]["recon_image_url"].as_str().unwrap()).await;
    let (s, v) = edit(&app, &id, json!({"attribute": "smile", "alpha": 0.0})).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(image_bytes(&app, v["image_url"].as_str().unwrap()).await, adapted_recon);
    let (_, moved) = edit(&app, &id, json!({"attribute": "smile", "alpha": 3.0})).await;
    assert_ne!(moved["image_id"], v["image_id"]);

    let (s, view) = call_json(&app, Method::GET, &format!("/api/v1/sessions/{id}"), Value::Null).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(view["adapted"], true);
}

#[tokio::test]
async fn random_projection_is_seeded() {
    let (app, _, _dir) = app();
    let id = new_session(&app, 2).await;
    let (_, a) = invert(&app, &id, json!({"method": "random", "seed": 11})).await;
    let (_, b) = invert(&app, &id, json!({"method": "random", "seed": 11})).await;
    let (_, c) = invert(&app, &id, json!({"method": "random", "seed": 12})).await;
    assert_eq!(a["latent_id"], b["latent_id"]);
    assert_ne!(a["latent_id"], c["latent_id"]);
}

#[tokio::test]
async fn latent_opt_runs_as_a_job() {
    let (app, _, _dir) = app();
    let id = new_session(&app, 3).await;
    let (s, v) = invert(&app, &id, json!({"method": "latent_opt", "steps": 20})).await;
    assert_eq!(s, StatusCode::ACCEPTED);
    let (job, progress) = wait_job(&app, v["job_id"].as_str().unwrap()).await;
    assert_eq!(job["status"], "done", "{job}");
    assert_eq!(job["kind"], "latent_opt");
    assert!(progress.windows(2).all(|p| p[0] <= p[1]));
    let (_, view) = call_json(&app, Method::GET, &format!("/api/v1/sessions/{id}"), Value::Null).await;
    assert_eq!(view["latent_id"], job["result"]["latent_id"]);
    assert!(view["running_job"].is_null());
}

#[tokio::test]
async fn adapting_one_session_leaves_another_untouched() {
    let (app, state, _dir) = app();
    let hash = state.base_model().weight_hash();
    let a = new_session(&app, 4).await;
    let b = new_session(&app, 5).await;
    invert(&app, &a, json!({"method": "encoder"})).await;
    let (_, vb) = invert(&app, &b, json!({"method": "encoder"})).await;
    let before = image_bytes(&app, vb["recon_image_url"].as_str().unwrap()).await;
    adapt(&app, &a).await;
    let (_, after) = edit(&app, &b, json!({"attribute": "age", "alpha": 0.0, "use_base": true})).await;
    assert_eq!(image_bytes(&app, after["image_url"].as_str().unwrap()).await, before);
    assert_eq!(state.base_model().weight_hash(), hash);
    let (s, _) = edit(&app, &b, json!({"attribute": "age", "alpha": 0.0})).await;
    assert_eq!(s, StatusCode::CONFLICT);
}

#[tokio::test]
async fn evicted_adapted_models_reload_exactly() {
    let (app, _, dir) = app_with(1, 1 << 20);
    let a = new_session(&app, 6).await;
    let b = new_session(&app, 7).await;
    invert(&app, &a, json!({"method": "encoder"})).await;
    invert(&app, &b, json!({"method": "encoder"})).await;
    let ja = adapt(&app, &a).await;
    adapt(&app, &b).await;
    assert!(dir.path().join("adapted").join(format!("{a}.ckpt")).exists());
    let (_, v) = edit(&app, &a, json!({"attribute": "hair", "alpha": 0.0})).await;
    assert_eq!(v["image_id"], ja["result"]["recon_image_id"]);
}

#[tokio::test]
async fn error_statuses() {
    let (app, _, _dir) = app_with(8, 4096);
    let (s, _) = call(&app, Method::PUT, "/api/v1/sessions/nope/image", png(1, 16)).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    let (s, _) = invert(&app, "nope", json!({"method": "encoder"})).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    let (s, _) = call_json(&app, Method::GET, "/api/v1/jobs/nope", Value::Null).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    let (s, _) = call(&app, Method::GET, "/api/v1/images/nope", vec![]).await;
    assert_eq!(s, StatusCode::NOT_FOUND);

    let (_, v) = call_json(&app, Method::POST, "/api/v1/sessions", json!({})).await;
    let id = v["session_id"].as_str().unwrap().to_string();
    let (s, _) = invert(&app, &id, json!({"method": "encoder"})).await;
    assert_eq!(s, StatusCode::CONFLICT);
    let (s, _) = call(&app, Method::PUT, &format!("/api/v1/sessions/{id}/image"), b"not a png".to_vec()).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    let (s, _) = call(&app, Method::PUT, &format!("/api/v1/sessions/{id}/image"), vec![0u8; 8192]).await;
    assert_eq!(s, StatusCode::PAYLOAD_TOO_LARGE);
    let (s, v) = call_json(&app, Method::PUT, &format!("/api/v1/sessions/{id}/image"), Value::Null).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY, "{v}");
    // Larger uploads are resized to the model size.
    let (s, _) = call(&app, Method::PUT, &format!("/api/v1/sessions/{id}/image"), png(1, 32)).await;
    assert_eq!(s, StatusCode::OK);

    let (s, _) = call(&app, Method::POST, &format!("/api/v1/sessions/{id}/invert"), b"{\"method\":".to_vec()).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    let (s, _) = invert(&app, &id, json!({"method": "telepathy"})).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    let (s, _) = call_json(&app, Method::POST, &format!("/api/v1/sessions/{id}/adapt"), json!({})).await;
    assert_eq!(s, StatusCode::CONFLICT);
    invert(&app, &id, json!({"method": "encoder"})).await;
    let (s, _) = edit(&app, &id, json!({"attribute": "beard", "alpha": 1.0, "use_base": true})).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    let (s, _) = call_json(&app, Method::POST, &format!("/api/v1/sessions/{id}/adapt"), json!({"steps": 0})).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);

    let (s, v) = call_json(&app, Method::POST, &format!("/api/v1/sessions/{id}/adapt"), json!({"steps": 4000})).await;
    assert_eq!(s, StatusCode::ACCEPTED);
    let (s, _) = call_json(&app, Method::POST, &format!("/api/v1/sessions/{id}/adapt"), json!({})).await;
    assert_eq!(s, StatusCode::CONFLICT);
    let (job, _) = wait_job(&app, v["job_id"].as_str().unwrap()).await;
    assert_eq!(job["status"], "done");
}

#[tokio::test]
async fn attributes_and_cors() {
    let (app, _, _dir) = app();
    let (s, v) = call_json(&app, Method::GET, "/api/v1/attributes", Value::Null).await;
    assert_eq!(s, StatusCode::OK);
    let names: Vec<&str> = v.as_array().unwrap().iter().map(|a| a["name"].as_str().unwrap()).collect();
    assert_eq!(names, ["age", "smile", "hair"]);
    assert!(v[0]["train_accuracy"].is_number());

    let req = Request::builder()
        .uri("/api/v1/attributes")
        .header("origin", "http://localhost:5173")
        .body(Body::empty())
        .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    assert_eq!(resp.headers()["access-control-allow-origin"], "*");
}
