use std::collections::HashMap;
use std::net::SocketAddr;
use std::str::FromStr;
use std::sync::Arc;

use axum::extract::{Path, Query, State};
use axum::http::{HeaderValue, Method, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::{Json, Router};
use serde::Serialize;
use tower_http::cors::{AllowOrigin, CorsLayer};

use reprloc_core::localizer::{BoxPolicy, Connectivity, LocalizeParams};
use reprloc_core::representer::Polarity;
use reprloc_core::Error;

use crate::state::ServiceState;

type Shared = Arc<ServiceState>;
type Params = HashMap<String, String>;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ApiError {
    #[serde(skip)]
    pub status: StatusCode,
    pub error: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub field: Option<String>,
}

impl ApiError {
    fn bad(field: &str, message: String) -> Self {
        ApiError {
            status: StatusCode::BAD_REQUEST,
            error: message,
            field: Some(field.to_string()),
        }
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let (status, field) = match &e {
            Error::UnknownImage(_) => (StatusCode::NOT_FOUND, None),
            Error::InvalidParameter { name, .. } if *name == "k" => {
                (StatusCode::PAYLOAD_TOO_LARGE, Some(name.to_string()))
            }
            Error::InvalidParameter { name, .. } => {
                (StatusCode::BAD_REQUEST, Some(name.to_string()))
            }
            Error::PatchOutOfRange { .. } => (StatusCode::BAD_REQUEST, Some("row,col".to_string())),
            Error::ZeroNormQuery { .. } => (StatusCode::BAD_REQUEST, Some("row,col".to_string())),
            Error::NoPredictor(_) => (StatusCode::NOT_FOUND, None),
            _ => (StatusCode::INTERNAL_SERVER_ERROR, None),
        };
        ApiError {
            status,
            error: e.to_string(),
            field,
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self)).into_response()
    }
}

fn param<T: FromStr>(q: &Params, name: &str) -> Result<Option<T>, ApiError>
where
    T::Err: std::fmt::Display,
{
    match q.get(name) {
        None => Ok(None),
        Some(raw) => raw
            .parse()
            .map(Some)
            .map_err(|e| ApiError::bad(name, format!("invalid {name} {raw:?}: {e}"))),
    }
}

fn required<T: FromStr>(q: &Params, name: &str) -> Result<T, ApiError>
where
    T::Err: std::fmt::Display,
{
    param(q, name)?.ok_or_else(|| ApiError::bad(name, format!("missing query parameter {name}")))
}

async fn images(State(s): State<Shared>) -> Json<serde_json::Value> {
    Json(serde_json::json!({ "images": s.images() }))
}

async fn meta(State(s): State<Shared>) -> impl IntoResponse {
    Json(s.meta())
}

async fn activation(State(s): State<Shared>, Path(id): Path<String>) -> Response {
    match s.activation(&id) {
        Ok(a) => Json(a).into_response(),
        Err(e) => ApiError::from(e).into_response(),
    }
}

async fn importance(State(s): State<Shared>, Path(id): Path<String>) -> Response {
    match s.importance(&id) {
        Ok(a) => Json(a).into_response(),
        Err(e) => ApiError::from(e).into_response(),
    }
}

async fn localize(
    State(s): State<Shared>,
    Path(id): Path<String>,
    Query(q): Query<Params>,
) -> Result<Response, ApiError> {
    let theta: f64 = param(&q, "theta")?.unwrap_or(reprloc_core::localizer::DEFAULT_THRESHOLD);
    if !(0.0..=1.0).contains(&theta) {
        return Err(ApiError::bad(
            "theta",
            format!("theta must lie in [0, 1], got {theta}"),
        ));
    }
    let params = LocalizeParams {
        threshold: theta,
        connectivity: param::<Connectivity>(&q, "conn")?.unwrap_or_default(),
        policy: param::<BoxPolicy>(&q, "policy")?.unwrap_or_default(),
    };
    Ok(Json(s.localize(&id, &params)?).into_response())
}

async fn representer(
    State(s): State<Shared>,
    Path(id): Path<String>,
    Query(q): Query<Params>,
) -> Result<Response, ApiError> {
    let row: usize = required(&q, "row")?;
    let col: usize = required(&q, "col")?;
    let k: usize = param(&q, "k")?.unwrap_or(10);
    let polarity: Polarity = param(&q, "polarity")?.unwrap_or(Polarity::Both);
    // Inner products over every training patch: keep them off the reactor.
    let result = tokio::task::spawn_blocking(move || s.representer(&id, row, col, k, polarity))
        .await
        .map_err(|e| ApiError {
            status: StatusCode::INTERNAL_SERVER_ERROR,
            error: e.to_string(),
            field: None,
        })??;
    Ok(Json(result).into_response())
}

async fn not_found() -> ApiError {
    ApiError {
        status: StatusCode::NOT_FOUND,
        error: "no such endpoint".into(),
        field: None,
    }
}

pub fn router(state: Shared) -> Router {
    let origin = match &state.config().allowed_origin {
        Some(o) => match HeaderValue::from_str(o) {
            Ok(v) => AllowOrigin::exact(v),
            Err(_) => AllowOrigin::any(),
        },
        None => AllowOrigin::any(),
    };
    let cors = CorsLayer::new()
        .allow_origin(origin)
        .allow_methods([Method::GET, Method::OPTIONS]);
    Router::new()
        .route("/v1/images", get(images))
        .route("/v1/meta", get(meta))
        .route("/v1/activation/{id}", get(activation))
        .route("/v1/importance/{id}", get(importance))
        .route("/v1/localize/{id}", get(localize))
        .route("/v1/representer/{id}", get(representer))
        .fallback(not_found)
        .layer(cors)
        .with_state(state)
}

/// Serves until Ctrl-C.
pub async fn serve(state: Shared, addr: SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
