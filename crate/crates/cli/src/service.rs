//! HTTP inference service.
//!
//! | route            | response                                     |
//! |------------------|----------------------------------------------|
//! | `GET /health`    | `{"status": "ok", "model_fingerprint": ...}` |
//! | `GET /taxonomy`  | [`TaxonomyPayload`]                          |
//! | `POST /predict`  | [`PredictRequest`] → [`PredictResponse`]     |
//!
//! Errors are `{"error": message, "field": path-or-null}` with status 400
//! for a malformed body, 422 for an invalid expert prefix and 503 when no
//! model is loaded.

use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use hmt_core::{HmtModel, Taxonomy};
use serde::Serialize;
use serde_json::json;
use tower_http::cors::CorsLayer;

use crate::wire::{self, PredictRequest, RequestError, TaxonomyPayload};

#[derive(Clone)]
pub struct AppState {
    model: Option<Arc<HmtModel>>,
    fingerprint: Option<String>,
    taxonomy: Arc<TaxonomyPayload>,
}

impl AppState {
    pub fn new(model: HmtModel) -> Self {
        let taxonomy = Arc::new(TaxonomyPayload::new(model.taxonomy()));
        Self {
            fingerprint: Some(model.digest()),
            model: Some(Arc::new(model)),
            taxonomy,
        }
    }

    /// A service that can describe the taxonomy but not predict.
    pub fn without_model(taxonomy: &Taxonomy) -> Self {
        Self {
            model: None,
            fingerprint: None,
            taxonomy: Arc::new(TaxonomyPayload::new(taxonomy)),
        }
    }
}

#[derive(Debug, Serialize)]
struct ErrorBody {
    error: String,
    field: Option<String>,
}

fn error(status: StatusCode, error: impl Into<String>, field: Option<String>) -> Response {
    (
        status,
        Json(ErrorBody {
            error: error.into(),
            field,
        }),
    )
        .into_response()
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/taxonomy", get(taxonomy))
        .route("/predict", post(predict))
        .layer(CorsLayer::permissive())
        .with_state(state)
}

async fn health(State(state): State<AppState>) -> Response {
    match &state.fingerprint {
        Some(fp) => Json(json!({"status": "ok", "model_fingerprint": fp})).into_response(),
        None => (
            StatusCode::SERVICE_UNAVAILABLE,
            Json(json!({"status": "no model loaded", "model_fingerprint": null})),
        )
            .into_response(),
    }
}

async fn taxonomy(State(state): State<AppState>) -> Json<TaxonomyPayload> {
    Json((*state.taxonomy).clone())
}

async fn predict(State(state): State<AppState>, body: Bytes) -> Response {
    let Some(model) = state.model.clone() else {
        return error(StatusCode::SERVICE_UNAVAILABLE, "no model loaded", None);
    };
    let de = &mut serde_json::Deserializer::from_slice(&body);
    let request: PredictRequest = match serde_path_to_error::deserialize(de) {
        Ok(r) => r,
        Err(e) => {
            let path = e.path().to_string();
            let field = (path != ".").then_some(path);
            return error(StatusCode::BAD_REQUEST, e.into_inner().to_string(), field);
        }
    };
    if request.documents.is_empty() {
        return error(
            StatusCode::BAD_REQUEST,
            "at least one document is required",
            Some("documents".into()),
        );
    }
    let result = tokio::task::spawn_blocking(move || {
        wire::predict(
            &model,
            "request",
            &request.documents,
            &request.expert_prefix,
            request.mode,
            request.top_k,
        )
    })
    .await;
    match result {
        Ok(Ok(response)) => Json(response).into_response(),
        Ok(Err(RequestError::Documents(m))) => {
            error(StatusCode::BAD_REQUEST, m, Some("documents".into()))
        }
        Ok(Err(RequestError::Prefix(m))) => error(
            StatusCode::UNPROCESSABLE_ENTITY,
            m,
            Some("expert_prefix".into()),
        ),
        Ok(Err(RequestError::Internal(m))) => error(StatusCode::INTERNAL_SERVER_ERROR, m, None),
        Err(e) => error(StatusCode::INTERNAL_SERVER_ERROR, e.to_string(), None),
    }
}

/// Binds `addr` and serves until interrupted.
pub async fn serve(state: AppState, addr: &str) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    eprintln!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
