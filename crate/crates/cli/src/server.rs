//! The /v1 HTTP endpoints. The model sits behind an `Arc` that a reload
//! swaps atomically; in-flight requests keep the model they started with.

use std::sync::{Arc, RwLock};
use std::time::Instant;

use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::json;
use toolrec_core::cnn::predict_topk;
use toolrec_core::corpus::ClusterView;
use toolrec_core::ranking::{render, RankedResult};
use toolrec_core::textprep::preprocess_query;

use crate::config::PipelineConfig;
use crate::{CliError, CliResult, ServingModel};

pub const MAX_K: usize = 10;

pub struct AppState {
    cfg: PipelineConfig,
    model: RwLock<Arc<ServingModel>>,
}

impl AppState {
    pub fn new(cfg: PipelineConfig) -> CliResult<AppState> {
        let model = ServingModel::load(&cfg)?;
        Ok(AppState {
            cfg,
            model: RwLock::new(Arc::new(model)),
        })
    }

    pub fn current(&self) -> Arc<ServingModel> {
        self.model.read().expect("model lock").clone()
    }

    /// Loads the artifacts again and swaps them in. On failure the old
    /// model stays.
    pub fn reload(&self) -> CliResult<String> {
        let fresh = Arc::new(ServingModel::load(&self.cfg)?);
        let version = fresh.version.clone();
        *self.model.write().expect("model lock") = fresh;
        Ok(version)
    }
}

#[derive(Debug, Deserialize)]
pub struct QueryRequest {
    pub text: String,
    #[serde(default = "default_k")]
    pub k: usize,
}

fn default_k() -> usize {
    3
}

#[derive(Debug, Serialize, Deserialize)]
pub struct QueryResponse {
    pub results: Vec<RankedResult>,
    pub latency_ms: f64,
    pub model_version: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ToolSummary {
    pub tool: String,
    pub records: usize,
    pub clusters: usize,
}

fn error(status: StatusCode, msg: impl Into<String>) -> Response {
    (status, Json(json!({ "error": msg.into() }))).into_response()
}

async fn query(State(st): State<Arc<AppState>>, Json(req): Json<QueryRequest>) -> Response {
    let start = Instant::now();
    let m = st.current();
    let max = MAX_K.min(m.model.num_classes());
    if req.k == 0 || req.k > max {
        return error(StatusCode::BAD_REQUEST, format!("k must be in 1..={max}"));
    }
    let tokens = preprocess_query(&req.text, &m.lexicons);
    match predict_topk(&m.model, &tokens, req.k) {
        Ok(mut results) => {
            render(&mut results, &m.corpus);
            Json(QueryResponse {
                results,
                latency_ms: start.elapsed().as_secs_f64() * 1000.0,
                model_version: m.version.clone(),
            })
            .into_response()
        }
        Err(toolrec_core::Error::UnanswerableQuery) => error(StatusCode::UNPROCESSABLE_ENTITY, "unanswerable query"),
        Err(e) => error(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()),
    }
}

async fn health(State(st): State<Arc<AppState>>) -> Json<serde_json::Value> {
    Json(json!({ "status": "ok", "model_version": st.current().version }))
}

async fn tools(State(st): State<Arc<AppState>>) -> Json<Vec<ToolSummary>> {
    let m = st.current();
    let c = &m.corpus;
    Json(
        c.tools()
            .into_iter()
            .map(|t| ToolSummary {
                records: c.records().iter().filter(|r| r.tool_id == t).count(),
                clusters: c.classes_of_tool(&t).len(),
                tool: t,
            })
            .collect(),
    )
}

async fn api(State(st): State<Arc<AppState>>, Path(cluster_id): Path<String>) -> Response {
    let m = st.current();
    match m.corpus.class_of_cluster(&cluster_id) {
        Some(c) => Json::<ClusterView>(m.corpus.cluster_view(c)).into_response(),
        None => error(StatusCode::NOT_FOUND, format!("no cluster {cluster_id}")),
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/v1/query", post(query))
        .route("/v1/health", get(health))
        .route("/v1/tools", get(tools))
        .route("/v1/apis/{cluster_id}", get(api))
        .with_state(state)
}

#[cfg(unix)]
fn reload_on_sighup(state: Arc<AppState>) -> CliResult<()> {
    use tokio::signal::unix::{signal, SignalKind};
    let mut hup = signal(SignalKind::hangup()).map_err(|e| CliError::Other(e.to_string()))?;
    tokio::spawn(async move {
        while hup.recv().await.is_some() {
            let st = state.clone();
            match tokio::task::spawn_blocking(move || st.reload()).await {
                Ok(Ok(v)) => log::info!("reloaded model {v}"),
                Ok(Err(e)) => log::error!("reload failed, keeping the old model: {e}"),
                Err(e) => log::error!("reload task: {e}"),
            }
        }
    });
    Ok(())
}

#[cfg(not(unix))]
fn reload_on_sighup(_: Arc<AppState>) -> CliResult<()> {
    Ok(())
}

pub async fn serve(cfg: PipelineConfig, addr: &str) -> CliResult<()> {
    let state = Arc::new(AppState::new(cfg)?);
    reload_on_sighup(state.clone())?;
    let listener = tokio::net::TcpListener::bind(addr)
        .await
        .map_err(|e| CliError::Other(format!("cannot bind {addr}: {e}")))?;
    log::info!("serving model {} on {addr}", state.current().version);
    axum::serve(listener, router(state))
        .await
        .map_err(|e| CliError::Other(e.to_string()))
}
