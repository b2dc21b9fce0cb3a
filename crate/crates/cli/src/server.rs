//! HTTP inference service over one loaded model.

use std::net::SocketAddr;
use std::sync::Arc;

use axum::extract::multipart::MultipartRejection;
use axum::extract::rejection::QueryRejection;
use axum::extract::{DefaultBodyLimit, Multipart, Query, State};
use axum::http::{header, HeaderMap, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use log::info;
use paramnet_core::analysis::effective_receptive_field;
use paramnet_core::image::{encode_png, Image};
use paramnet_core::model::Model;
use serde::Deserialize;
use serde_json::json;

use crate::service::{
    decode_upload, infer_png, operator_list, parse_params, pick_operator, ServiceError,
};

pub const DEFAULT_MAX_SIDE: usize = 1024;
const BODY_LIMIT: usize = 64 << 20;

#[derive(Clone)]
pub struct AppState {
    pub model: Arc<Model>,
    pub max_side: usize,
    /// Image probed by `GET /rf`.
    pub rf_image: Arc<Image>,
}

impl AppState {
    pub fn new(model: Model, rf_image: Image) -> Self {
        AppState {
            model: Arc::new(model),
            max_side: DEFAULT_MAX_SIDE,
            rf_image: Arc::new(rf_image),
        }
    }
}

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        let msg = self.to_string();
        let (status, body) = match self {
            ServiceError::OutOfBounds {
                field,
                side,
                bound,
                given,
            } => (
                StatusCode::BAD_REQUEST,
                json!({ "field": field, "bound": bound, "side": side, "given": given, "error": msg }),
            ),
            ServiceError::BadRequest(_) => (StatusCode::BAD_REQUEST, json!({ "error": msg })),
            ServiceError::TooLarge { .. } => {
                (StatusCode::PAYLOAD_TOO_LARGE, json!({ "error": msg }))
            }
            ServiceError::NotPng => (StatusCode::UNSUPPORTED_MEDIA_TYPE, json!({ "error": msg })),
            ServiceError::Internal(_) => {
                (StatusCode::INTERNAL_SERVER_ERROR, json!({ "error": msg }))
            }
        };
        (status, Json(body)).into_response()
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/health", get(|| async { "ok" }))
        .route("/operators", get(operators))
        .route("/infer", post(infer))
        .route("/rf", get(rf))
        .layer(DefaultBodyLimit::max(BODY_LIMIT))
        .with_state(state)
}

async fn operators(State(state): State<AppState>) -> impl IntoResponse {
    Json(operator_list(&state.model))
}

fn png_response(bytes: Vec<u8>, extra: HeaderMap) -> Response {
    let mut headers = extra;
    headers.insert(header::CONTENT_TYPE, HeaderValue::from_static("image/png"));
    (StatusCode::OK, headers, bytes).into_response()
}

async fn blocking<T: Send + 'static>(
    f: impl FnOnce() -> Result<T, ServiceError> + Send + 'static,
) -> Result<T, ServiceError> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ServiceError::Internal(e.to_string()))?
}

async fn infer(
    State(state): State<AppState>,
    form: Result<Multipart, MultipartRejection>,
) -> Result<Response, ServiceError> {
    let mut form = form.map_err(|e| ServiceError::BadRequest(e.body_text()))?;
    let (mut image, mut reference, mut operator, mut params) = (None, None, None, None);
    while let Some(field) = form
        .next_field()
        .await
        .map_err(|e| ServiceError::BadRequest(e.to_string()))?
    {
        let name = field.name().unwrap_or_default().to_string();
        let data = field
            .bytes()
            .await
            .map_err(|e| ServiceError::BadRequest(e.to_string()))?;
        match name.as_str() {
            "image" => image = Some(data),
            "reference" => reference = Some(data),
            "operator" => operator = Some(String::from_utf8_lossy(&data).trim().to_string()),
            "params" | "param" => params = Some(String::from_utf8_lossy(&data).to_string()),
            other => {
                return Err(ServiceError::BadRequest(format!(
                    "unexpected field `{other}`"
                )))
            }
        }
    }
    let image = image.ok_or_else(|| ServiceError::BadRequest("missing `image` field".into()))?;
    let params = parse_params(
        &params.ok_or_else(|| ServiceError::BadRequest("missing `params` field".into()))?,
    )?;
    let operator = pick_operator(&state.model, operator.as_deref())?
        .name
        .clone();
    let img = decode_upload(&image, state.max_side)?;
    let reference = reference
        .map(|r| decode_upload(&r, state.max_side))
        .transpose()?;
    let model = state.model.clone();
    let (png, scores) =
        blocking(move || infer_png(&model, &operator, &params, &img, reference.as_ref())).await?;
    let mut headers = HeaderMap::new();
    if let Some(s) = scores {
        let value = |v: f64| HeaderValue::from_str(&format!("{v:.4}")).expect("ascii number");
        headers.insert("x-psnr", value(s.psnr));
        headers.insert("x-ssim", value(s.ssim));
    }
    Ok(png_response(png, headers))
}

#[derive(Debug, Deserialize)]
pub struct RfQuery {
    pub x: usize,
    pub y: usize,
    pub gamma: String,
    pub operator: Option<String>,
}

async fn rf(
    State(state): State<AppState>,
    q: Result<Query<RfQuery>, QueryRejection>,
) -> Result<Response, ServiceError> {
    let Query(q) = q.map_err(|e| ServiceError::BadRequest(e.body_text()))?;
    let params = parse_params(&q.gamma)?;
    let operator = pick_operator(&state.model, q.operator.as_deref())?
        .name
        .clone();
    let (model, img) = (state.model.clone(), state.rf_image.clone());
    let png = blocking(move || {
        let spec = model.operator(&operator)?;
        spec.check_params(&params)?;
        let mask = effective_receptive_field(&model, &operator, &params, &img, (q.x, q.y))?;
        Ok(encode_png(&mask.overlay(&img)?)?)
    })
    .await?;
    Ok(png_response(png, HeaderMap::new()))
}

pub async fn serve(state: AppState, addr: SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(state)).await
}
