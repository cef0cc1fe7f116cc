//! Read-mostly JSON service over an experiment store.
//!
//! ```text
//! GET  /experiments
//! GET  /experiments/{id}
//! GET  /experiments/{id}/comparison?phi=dp&pi=f1&beta=1&Phi=0.05&mode=constrained&protected=citizenship
//! POST /runs            body: pipeline config as JSON
//! GET  /runs/{id}
//! ```
//!
//! Launched runs wait in a queue and execute one at a time.

use std::collections::BTreeMap;
use std::sync::{Arc, Mutex};

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::Router;
use fairaudit::compare::{Comparison, FairnessMetric, PerformanceMetric, SelectorConfig, SelectorMode};
use fairaudit::pipeline::{run_pipeline, Experiment, PipelineConfig, PipelineError, Store};
use serde::de::DeserializeOwned;
use serde::Serialize;
use tokio::sync::mpsc;

use crate::numfmt::to_json6;

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct FieldError {
    pub field: String,
    pub message: String,
}

#[derive(Debug)]
pub enum ApiError {
    NotFound { kind: &'static str, id: String },
    Validation(Vec<FieldError>),
    Unprocessable(String),
    Internal(String),
}

impl ApiError {
    fn field(field: &str, message: impl Into<String>) -> Self {
        ApiError::Validation(vec![FieldError { field: field.into(), message: message.into() }])
    }
}

#[derive(Serialize)]
struct ErrorBody<'a> {
    error: &'a str,
    message: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    id: Option<&'a str>,
    #[serde(skip_serializing_if = "Option::is_none")]
    fields: Option<&'a [FieldError]>,
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let (status, body) = match &self {
            ApiError::NotFound { kind, id } => (
                StatusCode::NOT_FOUND,
                ErrorBody { error: "not_found", message: format!("{kind} `{id}` not found"), id: Some(id), fields: None },
            ),
            ApiError::Validation(fields) => {
                let names: Vec<&str> = fields.iter().map(|f| f.field.as_str()).collect();
                (
                    StatusCode::BAD_REQUEST,
                    ErrorBody {
                        error: "validation",
                        message: format!("invalid fields: {}", names.join(", ")),
                        id: None,
                        fields: Some(fields),
                    },
                )
            }
            ApiError::Unprocessable(m) => {
                (StatusCode::UNPROCESSABLE_ENTITY, ErrorBody { error: "unprocessable", message: m.clone(), id: None, fields: None })
            }
            ApiError::Internal(m) => {
                (StatusCode::INTERNAL_SERVER_ERROR, ErrorBody { error: "internal", message: m.clone(), id: None, fields: None })
            }
        };
        json(status, &body)
    }
}

fn json<T: Serialize>(status: StatusCode, body: &T) -> Response {
    (status, [(header::CONTENT_TYPE, "application/json")], to_json6(body)).into_response()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RunState {
    Queued,
    Running,
    Completed,
    Failed,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunRecord {
    pub id: String,
    pub status: RunState,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub experiment_id: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

struct AppState {
    store: Store,
    runs: Mutex<BTreeMap<String, RunRecord>>,
    queue: mpsc::UnboundedSender<(String, PipelineConfig)>,
}

type Shared = Arc<AppState>;

impl AppState {
    fn set(&self, id: &str, f: impl FnOnce(&mut RunRecord)) {
        if let Some(r) = self.runs.lock().expect("run table lock").get_mut(id) {
            f(r);
        }
    }
}

/// Builds the router and starts the run worker; call inside a Tokio
/// runtime.
pub fn router(store: Store) -> Router {
    let (tx, rx) = mpsc::unbounded_channel();
    let state = Arc::new(AppState { store, runs: Mutex::new(BTreeMap::new()), queue: tx });
    tokio::spawn(worker(state.clone(), rx));
    Router::new()
        .route("/experiments", get(list_experiments))
        .route("/experiments/{id}", get(get_experiment))
        .route("/experiments/{id}/comparison", get(get_comparison))
        .route("/runs", post(launch_run))
        .route("/runs/{id}", get(get_run))
        .with_state(state)
}

async fn worker(state: Shared, mut rx: mpsc::UnboundedReceiver<(String, PipelineConfig)>) {
    while let Some((id, config)) = rx.recv().await {
        state.set(&id, |r| r.status = RunState::Running);
        let store = state.store.clone();
        let done = tokio::task::spawn_blocking(move || {
            let e = run_pipeline(&config)?;
            store.save(&e)?;
            Ok::<_, PipelineError>(e.id)
        })
        .await;
        match done {
            Ok(Ok(exp)) => state.set(&id, |r| {
                r.status = RunState::Completed;
                r.experiment_id = Some(exp);
            }),
            Ok(Err(e)) => state.set(&id, |r| {
                r.status = RunState::Failed;
                r.error = Some(e.to_string());
            }),
            Err(e) => state.set(&id, |r| {
                r.status = RunState::Failed;
                r.error = Some(format!("run aborted: {e}"));
            }),
        }
    }
}

fn load(state: &AppState, id: &str) -> Result<Experiment, ApiError> {
    state.store.load(id).map_err(|e| match e {
        PipelineError::NotFound(id) => ApiError::NotFound { kind: "experiment", id },
        other => ApiError::Internal(other.to_string()),
    })
}

async fn list_experiments(State(state): State<Shared>) -> Result<Response, ApiError> {
    let list = state.store.list().map_err(|e| ApiError::Internal(e.to_string()))?;
    Ok(json(StatusCode::OK, &list))
}

async fn get_experiment(State(state): State<Shared>, Path(id): Path<String>) -> Result<Response, ApiError> {
    Ok(json(StatusCode::OK, &load(&state, &id)?))
}

#[derive(Serialize)]
struct ComparisonBody<'a> {
    experiment: &'a str,
    protected: &'a str,
    #[serde(flatten)]
    comparison: Comparison,
}

fn parse_enum<T: DeserializeOwned>(field: &str, raw: &str, allowed: &str, errors: &mut Vec<FieldError>) -> Option<T> {
    match serde_json::from_value(serde_json::Value::String(raw.to_ascii_lowercase())) {
        Ok(v) => Some(v),
        Err(_) => {
            errors.push(FieldError { field: field.into(), message: format!("`{raw}` is not one of {allowed}") });
            None
        }
    }
}

fn parse_number(field: &str, raw: &str, errors: &mut Vec<FieldError>) -> Option<f64> {
    match raw.parse::<f64>() {
        Ok(v) if v.is_finite() => Some(v),
        _ => {
            errors.push(FieldError { field: field.into(), message: format!("`{raw}` is not a finite number") });
            None
        }
    }
}

/// Selector from query parameters, starting from the experiment defaults.
pub fn parse_selector(
    query: &BTreeMap<String, String>,
    defaults: SelectorConfig,
    protected: &str,
) -> Result<SelectorConfig, ApiError> {
    let mut sel = defaults;
    let mut errors = Vec::new();
    for (key, raw) in query {
        match key.as_str() {
            "phi" => {
                if let Some(m) = parse_enum::<FairnessMetric>(key, raw, "dp, eo, eopp, pp, cdp", &mut errors) {
                    sel.phi_metric = m;
                }
            }
            "pi" => {
                if let Some(m) = parse_enum::<PerformanceMetric>(key, raw, "accuracy, f1, auroc, precision, recall", &mut errors)
                {
                    sel.pi_metric = m;
                }
            }
            "mode" => {
                if let Some(m) = parse_enum::<SelectorMode>(key, raw, "tradeoff, constrained", &mut errors) {
                    sel.mode = m;
                }
            }
            "beta" => match parse_number(key, raw, &mut errors) {
                Some(b) if b > 0.0 => sel.beta = b,
                Some(b) => errors.push(FieldError { field: key.clone(), message: format!("must be positive, got {b}") }),
                None => {}
            },
            "Phi" => match parse_number(key, raw, &mut errors) {
                Some(c) if c >= 0.0 => sel.cap = Some(c),
                Some(c) => errors.push(FieldError { field: key.clone(), message: format!("must be non-negative, got {c}") }),
                None => {}
            },
            "protected" => {
                if raw != protected {
                    errors.push(FieldError {
                        field: key.clone(),
                        message: format!("experiment has protected attribute `{protected}`, not `{raw}`"),
                    });
                }
            }
            _ => errors.push(FieldError { field: key.clone(), message: "unknown parameter".into() }),
        }
    }
    if errors.is_empty() {
        Ok(sel)
    } else {
        Err(ApiError::Validation(errors))
    }
}

async fn get_comparison(
    State(state): State<Shared>,
    Path(id): Path<String>,
    Query(query): Query<BTreeMap<String, String>>,
) -> Result<Response, ApiError> {
    let e = load(&state, &id)?;
    let sel = parse_selector(&query, e.config.selector, &e.protected)?;
    let comparison = e.comparison(&sel).map_err(|x| ApiError::Unprocessable(x.to_string()))?;
    Ok(json(StatusCode::OK, &ComparisonBody { experiment: &e.id, protected: &e.protected, comparison }))
}

async fn launch_run(State(state): State<Shared>, body: Bytes) -> Result<Response, ApiError> {
    let config: PipelineConfig = serde_json::from_slice(&body).map_err(|e| ApiError::field("config", e.to_string()))?;
    config.resolve().map_err(|e| ApiError::field("config", e.to_string()))?;
    let record = {
        let mut runs = state.runs.lock().expect("run table lock");
        let id = format!("run-{}", runs.len() + 1);
        let r = RunRecord { id: id.clone(), status: RunState::Queued, experiment_id: None, error: None };
        runs.insert(id, r.clone());
        r
    };
    state.queue.send((record.id.clone(), config)).map_err(|_| ApiError::Internal("run queue closed".into()))?;
    Ok(json(StatusCode::ACCEPTED, &record))
}

async fn get_run(State(state): State<Shared>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let runs = state.runs.lock().expect("run table lock");
    let r = runs.get(&id).ok_or_else(|| ApiError::NotFound { kind: "run", id: id.clone() })?;
    Ok(json(StatusCode::OK, r))
}
