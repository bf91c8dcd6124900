use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, Path, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post, put};
use axum::{Json, Router};
use serde::de::DeserializeOwned;
use serde_json::json;
use tower_http::cors::{Any, CorsLayer};

use crate::error::ApiError;
use crate::state::{image_url, AppState, InvertOutcome};

type ApiResult = Result<Response, ApiError>;

fn parse<T: DeserializeOwned>(body: &[u8], empty_ok: bool) -> Result<T, ApiError> {
    let body: &[u8] = if body.iter().all(u8::is_ascii_whitespace) && empty_ok {
        b"{}"
    } else {
        body
    };
    serde_json::from_slice(body).map_err(|e| ApiError::unprocessable(format!("malformed body: {e}")))
}

async fn blocking<R: Send + 'static>(f: impl FnOnce() -> Result<R, ApiError> + Send + 'static) -> Result<R, ApiError> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::internal(format!("worker panicked: {e}")))?
}

async fn create_session(State(st): State<AppState>) -> ApiResult {
    let id = st.create_session();
    Ok((StatusCode::CREATED, Json(json!({ "session_id": id }))).into_response())
}

async fn get_session(State(st): State<AppState>, Path(id): Path<String>) -> ApiResult {
    Ok(Json(st.session(&id)?).into_response())
}

async fn put_image(State(st): State<AppState>, Path(id): Path<String>, body: Bytes) -> ApiResult {
    let sid = id.clone();
    let image_id = blocking(move || st.put_image(&sid, &body)).await?;
    Ok(Json(json!({
        "session_id": id,
        "image_id": image_id,
        "image_url": image_url(&image_id),
    }))
    .into_response())
}

async fn invert(State(st): State<AppState>, Path(id): Path<String>, body: Bytes) -> ApiResult {
    let req = parse(&body, false)?;
    match blocking(move || st.invert(&id, req)).await? {
        InvertOutcome::Done {
            latent_id,
            recon_image_id,
        } => Ok(Json(json!({
            "latent_id": latent_id,
            "recon_image_id": recon_image_id,
            "recon_image_url": image_url(&recon_image_id),
        }))
        .into_response()),
        InvertOutcome::Started { job_id } => Ok((StatusCode::ACCEPTED, Json(json!({ "job_id": job_id }))).into_response()),
    }
}

async fn adapt(State(st): State<AppState>, Path(id): Path<String>, body: Bytes) -> ApiResult {
    let req = parse(&body, true)?;
    let job_id = st.adapt(&id, req)?;
    Ok((StatusCode::ACCEPTED, Json(json!({ "job_id": job_id }))).into_response())
}

async fn edit(State(st): State<AppState>, Path(id): Path<String>, body: Bytes) -> ApiResult {
    let req = parse(&body, false)?;
    let image_id = blocking(move || st.edit(&id, req)).await?;
    Ok(Json(json!({ "image_id": image_id, "image_url": image_url(&image_id) })).into_response())
}

async fn get_job(State(st): State<AppState>, Path(id): Path<String>) -> ApiResult {
    Ok(Json(st.job(&id)?).into_response())
}

async fn attributes(State(st): State<AppState>) -> ApiResult {
    Ok(Json(st.attributes()).into_response())
}

async fn get_image(State(st): State<AppState>, Path(id): Path<String>) -> ApiResult {
    let png = st.image(&id)?;
    Ok(([(header::CONTENT_TYPE, "image/png")], png.as_ref().clone()).into_response())
}

/// All `/api/v1` routes with upload limit and permissive CORS.
pub fn router(state: AppState) -> Router {
    let limit = state.config().max_upload_bytes;
    let cors = CorsLayer::new().allow_origin(Any).allow_methods(Any).allow_headers(Any);
    Router::new()
        .route("/api/v1/sessions", post(create_session))
        .route("/api/v1/sessions/{id}", get(get_session))
        .route("/api/v1/sessions/{id}/image", put(put_image))
        .route("/api/v1/sessions/{id}/invert", post(invert))
        .route("/api/v1/sessions/{id}/adapt", post(adapt))
        .route("/api/v1/sessions/{id}/edit", post(edit))
        .route("/api/v1/jobs/{id}", get(get_job))
        .route("/api/v1/attributes", get(attributes))
        .route("/api/v1/images/{id}", get(get_image))
        .layer(DefaultBodyLimit::max(limit))
        .layer(cors)
        .with_state(state)
}
