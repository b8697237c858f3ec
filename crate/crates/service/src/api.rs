use std::collections::HashMap;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderMap, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Serialize;
use tokio::sync::mpsc;

use regabstract_core::corpus::{load_corpus, AttributeKind, ClinicalDocument};
use regabstract_core::rationale::verify_rationale;

use crate::error::{ServiceError, ServiceResult};
use crate::inference::{extract_all, load_predictors};
use crate::store::{CurationItem, ItemStatus, QueueFilter, Store, VerdictRequest};

pub const DEFAULT_PAGE_SIZE: usize = 50;
const MAX_PAGE_SIZE: usize = 500;
pub const REVIEWER_HEADER: &str = "x-reviewer-id";
pub const TOTAL_COUNT_HEADER: &str = "x-total-count";

#[derive(Clone, Debug)]
pub struct ServiceConfig {
    pub port: u16,
    pub corpus_dir: PathBuf,
    pub checkpoint_dir: Option<PathBuf>,
    pub vocab: Option<PathBuf>,
    pub log_path: PathBuf,
}

#[derive(Serialize)]
struct ErrorBody {
    code: &'static str,
    message: String,
}

struct ApiError(StatusCode, &'static str, String);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (
            self.0,
            Json(ErrorBody {
                code: self.1,
                message: self.2,
            }),
        )
            .into_response()
    }
}

impl From<ServiceError> for ApiError {
    fn from(e: ServiceError) -> Self {
        match e {
            ServiceError::UnknownExtraction(_) => ApiError(StatusCode::NOT_FOUND, "not_found", e.to_string()),
            ServiceError::Invalid(_) => ApiError(StatusCode::UNPROCESSABLE_ENTITY, "invalid_verdict", e.to_string()),
            other => {
                log::error!("{other}");
                ApiError(StatusCode::INTERNAL_SERVER_ERROR, "internal", other.to_string())
            }
        }
    }
}

fn bad_request(message: impl Into<String>) -> ApiError {
    ApiError(StatusCode::BAD_REQUEST, "bad_request", message.into())
}

#[derive(Clone)]
struct AppState {
    store: Arc<Store>,
    reinfer: Option<mpsc::Sender<()>>,
}

/// Routes over `store`. With `config`, `POST /api/admin/reinfer` re-runs
/// inference from the configured checkpoints on a background worker.
pub fn router(store: Arc<Store>, config: Option<ServiceConfig>) -> Router {
    let reinfer = config.map(|c| spawn_reinfer_worker(store.clone(), c));
    Router::new()
        .route("/api/queue", get(queue))
        .route("/api/patients/{id}", get(patient))
        .route("/api/extractions/{id}/verdict", post(verdict))
        .route("/api/stats", get(stats))
        .route("/api/export", get(export))
        .route("/api/admin/reinfer", post(reinfer_handler))
        .with_state(AppState { store, reinfer })
}

fn spawn_reinfer_worker(store: Arc<Store>, config: ServiceConfig) -> mpsc::Sender<()> {
    // one job running plus one waiting
    let (tx, mut rx) = mpsc::channel::<()>(1);
    tokio::spawn(async move {
        while rx.recv().await.is_some() {
            let store = store.clone();
            let config = config.clone();
            let job = tokio::task::spawn_blocking(move || -> ServiceResult<()> {
                let predictors = load_predictors(config.checkpoint_dir.as_deref(), config.vocab.as_deref())?;
                let extractions = extract_all(store.corpus(), &predictors)?;
                store.install_predictions(extractions, predictors.sources())
            });
            match job.await {
                Ok(Ok(())) => log::info!("re-inference finished"),
                Ok(Err(e)) => log::error!("re-inference failed: {e}"),
                Err(e) => log::error!("re-inference task panicked: {e}"),
            }
        }
    });
    tx
}

async fn queue(State(st): State<AppState>, Query(q): Query<HashMap<String, String>>) -> Result<Response, ApiError> {
    let mut filter = QueueFilter::default();
    if let Some(a) = q.get("attribute").filter(|s| !s.is_empty()) {
        filter.attribute = Some(a.parse::<AttributeKind>().map_err(|e| bad_request(e.to_string()))?);
    }
    if let Some(s) = q.get("status").filter(|s| !s.is_empty()) {
        filter.status = Some(s.parse::<ItemStatus>().map_err(bad_request)?);
    }
    let number = |key: &str, default: usize| -> Result<usize, ApiError> {
        match q.get(key) {
            None => Ok(default),
            Some(v) => v
                .parse::<usize>()
                .ok()
                .filter(|&n| n >= 1)
                .ok_or_else(|| bad_request(format!("{key} must be a positive integer, got '{v}'"))),
        }
    };
    let page = number("page", 1)?;
    let page_size = number("page_size", DEFAULT_PAGE_SIZE)?.min(MAX_PAGE_SIZE);
    let (items, total) = st.store.queue(&filter, page, page_size);
    let mut resp = Json(items).into_response();
    resp.headers_mut().insert(TOTAL_COUNT_HEADER, HeaderValue::from(total));
    Ok(resp)
}

#[derive(Serialize)]
struct PatientView {
    patient_id: String,
    documents: Vec<ClinicalDocument>,
    extractions: Vec<CurationItem>,
}

async fn patient(State(st): State<AppState>, Path(id): Path<String>) -> Result<Json<PatientView>, ApiError> {
    let p = st
        .store
        .corpus()
        .patient(&id)
        .ok_or_else(|| ApiError(StatusCode::NOT_FOUND, "not_found", format!("unknown patient {id}")))?;
    let extractions = st.store.patient_items(&id);
    for item in &extractions {
        if let Some(r) = &item.rationale {
            verify_rationale(r, &p.documents).map_err(|e| {
                ApiError(StatusCode::INTERNAL_SERVER_ERROR, "provenance_mismatch", format!("{}: {e}", item.extraction_id))
            })?;
        }
    }
    Ok(Json(PatientView {
        patient_id: p.patient_id.clone(),
        documents: p.documents.clone(),
        extractions,
    }))
}

async fn verdict(
    State(st): State<AppState>,
    Path(id): Path<String>,
    headers: HeaderMap,
    body: Bytes,
) -> Result<Json<CurationItem>, ApiError> {
    let reviewer = headers
        .get(REVIEWER_HEADER)
        .and_then(|v| v.to_str().ok())
        .map(str::trim)
        .filter(|v| !v.is_empty())
        .ok_or_else(|| bad_request(format!("missing {REVIEWER_HEADER} header")))?
        .to_string();
    let req: VerdictRequest = serde_json::from_slice(&body).map_err(|e| match e.classify() {
        serde_json::error::Category::Data => ApiError(StatusCode::UNPROCESSABLE_ENTITY, "invalid_verdict", e.to_string()),
        _ => bad_request(format!("malformed JSON: {e}")),
    })?;
    let store = st.store.clone();
    let item = tokio::task::spawn_blocking(move || store.verdict(&id, &reviewer, req))
        .await
        .map_err(|e| ApiError(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))??;
    Ok(Json(item))
}

async fn stats(State(st): State<AppState>) -> impl IntoResponse {
    Json(st.store.stats())
}

async fn export(State(st): State<AppState>) -> Result<Response, ApiError> {
    let mut body = String::new();
    for row in st.store.export() {
        body.push_str(&serde_json::to_string(&row).map_err(|e| ApiError(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))?);
        body.push('\n');
    }
    Ok(([(header::CONTENT_TYPE, "application/x-ndjson")], body).into_response())
}

async fn reinfer_handler(State(st): State<AppState>) -> Result<Response, ApiError> {
    let tx = st
        .reinfer
        .as_ref()
        .ok_or_else(|| ApiError(StatusCode::NOT_IMPLEMENTED, "unavailable", "no inference configuration".into()))?;
    match tx.try_send(()) {
        Ok(()) => Ok((StatusCode::ACCEPTED, Json(serde_json::json!({"status": "queued"}))).into_response()),
        Err(_) => Err(ApiError(StatusCode::CONFLICT, "busy", "an inference job is already queued".into())),
    }
}

/// Loads the corpus, runs inference, replays the log and serves until Ctrl-C.
pub async fn serve(config: ServiceConfig) -> ServiceResult<()> {
    let cfg = config.clone();
    let store = tokio::task::spawn_blocking(move || -> ServiceResult<Store> {
        let corpus = load_corpus(&cfg.corpus_dir)?;
        let predictors = load_predictors(cfg.checkpoint_dir.as_deref(), cfg.vocab.as_deref())?;
        for (a, s) in predictors.sources() {
            log::info!("{a}: {s}");
        }
        let extractions = extract_all(&corpus, &predictors)?;
        Store::open(corpus, extractions, &cfg.log_path)
    })
    .await
    .map_err(|e| ServiceError::Invalid(format!("startup task failed: {e}")))??;
    let app = router(Arc::new(store), Some(config.clone()));
    let addr = SocketAddr::from(([127, 0, 0, 1], config.port));
    let listener = tokio::net::TcpListener::bind(addr).await.map_err(|e| ServiceError::io(addr.to_string(), e))?;
    let local = listener.local_addr().map_err(|e| ServiceError::io(addr.to_string(), e))?;
    log::info!("listening on http://{local}");
    // machine-readable line for wrappers that pass port 0
    println!("listening on {local}");
    axum::serve(listener, app)
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
        .map_err(|e| ServiceError::io(local.to_string(), e))
}
