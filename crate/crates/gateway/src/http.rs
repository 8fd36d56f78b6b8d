//! HTTP routes over [`Service`].

use std::convert::Infallible;
use std::future::Future;
use std::sync::Arc;

use axum::body::Body;
use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use futures::StreamExt;
use serde::Deserialize;
use serde_json::json;
use tokio::net::TcpListener;

use crate::service::{AnswerRequest, IngestRequest, ResultQuery, Service, ServiceError, StreamTarget};

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        let status = match self {
            ServiceError::Validation(_) => StatusCode::UNPROCESSABLE_ENTITY,
            ServiceError::NotFound(_) => StatusCode::NOT_FOUND,
            ServiceError::Conflict(_) => StatusCode::CONFLICT,
        };
        (status, Json(json!({ "error": self.to_string() }))).into_response()
    }
}

type Shared = State<Arc<Service>>;

pub fn router(service: Arc<Service>) -> Router {
    Router::new()
        .route("/v1/utterances", post(ingest))
        .route("/v1/games/{id}/result", get(result))
        .route("/v1/games/{id}/answers", post(answer))
        .route("/v1/games/{id}/events", get(game_events))
        .route("/v1/workers/{id}/claim", post(claim))
        .route("/v1/workers/{id}/events", get(worker_events))
        .with_state(service)
}

/// Serves until `shutdown` resolves. Closes due games in the background.
pub async fn serve(
    service: Arc<Service>,
    listener: TcpListener,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    let ticker = service.spawn_ticker();
    let res = axum::serve(listener, router(service)).with_graceful_shutdown(shutdown).await;
    ticker.abort();
    res
}

async fn ingest(State(svc): Shared, Json(req): Json<IngestRequest>) -> Result<Response, ServiceError> {
    let r = svc.ingest(req)?;
    let status = if r.duplicate { StatusCode::OK } else { StatusCode::CREATED };
    Ok((status, Json(r)).into_response())
}

async fn result(State(svc): Shared, Path(id): Path<String>, Query(q): Query<ResultQuery>) -> Result<Response, ServiceError> {
    Ok(Json(svc.result(&id, &q).await?).into_response())
}

async fn answer(State(svc): Shared, Path(id): Path<String>, Json(req): Json<AnswerRequest>) -> Result<Response, ServiceError> {
    Ok(Json(svc.answer(&id, &req)?).into_response())
}

async fn claim(State(svc): Shared, Path(id): Path<String>) -> Result<Response, ServiceError> {
    Ok(Json(svc.claim(&id)?).into_response())
}

#[derive(Debug, Default, Deserialize)]
struct CursorQuery {
    #[serde(default)]
    cursor: usize,
}

fn stream(svc: &Arc<Service>, target: StreamTarget, cursor: usize) -> Result<Response, ServiceError> {
    svc.check_target(&target)?;
    let body = Body::from_stream(svc.event_stream(target, cursor).map(Ok::<_, Infallible>));
    Ok(([(header::CONTENT_TYPE, "application/x-ndjson")], body).into_response())
}

async fn game_events(State(svc): Shared, Path(id): Path<String>, Query(q): Query<CursorQuery>) -> Result<Response, ServiceError> {
    stream(&svc, StreamTarget::Game(id), q.cursor)
}

async fn worker_events(State(svc): Shared, Path(id): Path<String>, Query(q): Query<CursorQuery>) -> Result<Response, ServiceError> {
    stream(&svc, StreamTarget::Worker(id), q.cursor)
}
