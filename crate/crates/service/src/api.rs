//! HTTP routes.

use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::routing::{get, post};
use axum::{Json, Router};
use phasefd::io::{FreezeDocument, InstanceDocument, SolutionDocument};
use phasefd::{FreezeSpec, Instance, ResamplePlan, SolverConfig};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tokio::sync::Semaphore;
use tower_http::cors::CorsLayer;

use crate::error::{parse_body, ApiError};
use crate::freeze_ops::{Dims, FreezeOps};
use crate::job::{EventRecord, Job, JobStatus, JobView};
use crate::store::Catalog;

/// Largest page returned by the events endpoint.
pub const MAX_EVENTS_PAGE: usize = 10_000;

#[derive(Clone)]
pub struct AppState {
    pub catalog: Arc<Catalog>,
    workers: Arc<Semaphore>,
}

impl AppState {
    /// `workers` bounds the number of jobs solving at once.
    pub fn new(catalog: Catalog, workers: usize) -> Self {
        AppState {
            catalog: Arc::new(catalog),
            workers: Arc::new(Semaphore::new(workers.max(1))),
        }
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/api/instances", post(create_instance))
        .route("/api/instances/{id}", get(get_instance))
        .route("/api/jobs", post(create_job))
        .route("/api/jobs/{id}", get(get_job))
        .route("/api/jobs/{id}/events", get(get_events))
        .route("/api/jobs/{id}/solution", get(get_solution))
        .route("/api/jobs/{id}/cancel", post(cancel_job))
        .route("/api/jobs/{id}/refine", post(refine_job))
        .layer(CorsLayer::permissive())
        .with_state(state)
}

fn new_id() -> String {
    uuid::Uuid::new_v4().simple().to_string()
}

fn internal(e: impl std::fmt::Display) -> ApiError {
    ApiError::Internal(e.to_string())
}

async fn create_instance(State(state): State<AppState>, body: Bytes) -> Result<(StatusCode, Json<Value>), ApiError> {
    let doc: InstanceDocument = parse_body(&body)?;
    let instance = doc.validate().map_err(ApiError::unprocessable)?;
    let id = new_id();
    let summary = json!({
        "instance_id": id,
        "samples": instance.n_samples(),
        "q_points": instance.q().len(),
    });
    state.catalog.add_instance(id, instance).map_err(internal)?;
    Ok((StatusCode::CREATED, Json(summary)))
}

fn find_instance(state: &AppState, id: &str) -> Result<Arc<Instance>, ApiError> {
    state
        .catalog
        .instance(id)
        .ok_or_else(|| ApiError::NotFound(format!("unknown instance {id}")))
}

fn find_job(state: &AppState, id: &str) -> Result<Arc<Job>, ApiError> {
    state
        .catalog
        .job(id)
        .ok_or_else(|| ApiError::NotFound(format!("unknown job {id}")))
}

async fn get_instance(State(state): State<AppState>, Path(id): Path<String>) -> Result<Json<InstanceDocument>, ApiError> {
    let instance = find_instance(&state, &id)?;
    Ok(Json(InstanceDocument::from(instance.as_ref())))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct CreateJob {
    instance_id: String,
    config: SolverConfig,
    #[serde(default)]
    freeze: Option<FreezeDocument>,
    #[serde(default)]
    freeze_ops: FreezeOps,
}

/// Checks config and freeze against the instance before a job is queued, so
/// precondition failures surface as 422 rather than as failed jobs.
fn prepare(instance: &Instance, config: &SolverConfig, freeze: &mut FreezeSpec, ops: &FreezeOps) -> Result<(), ApiError> {
    config.validate().map_err(ApiError::unprocessable)?;
    let plan = ResamplePlan::new(instance.q(), config.oversample).map_err(ApiError::unprocessable)?;
    let n_log = plan.dst().len();
    if config.k > n_log || config.m > n_log {
        return Err(ApiError::Unprocessable(format!(
            "K={} and M={} must not exceed the {n_log} log-grid points",
            config.k, config.m
        )));
    }
    if config.gibbs == phasefd::GibbsMode::Exact && config.k > phasefd::gibbs::EXACT_MAX_K {
        return Err(ApiError::Unprocessable(format!(
            "exact phase-rule rounding supports at most {} bases",
            phasefd::gibbs::EXACT_MAX_K
        )));
    }
    let dims = Dims {
        instance,
        plan: &plan,
        k: config.k,
        m: config.m,
    };
    ops.apply(freeze, &dims).map_err(ApiError::Unprocessable)?;
    freeze
        .validate(n_log, config.k, config.m, instance.n_samples())
        .map_err(ApiError::unprocessable)
}

fn launch(state: &AppState, job: Arc<Job>, instance: Arc<Instance>) -> Result<(), ApiError> {
    state.catalog.add_job(job.clone()).map_err(internal)?;
    let workers = state.workers.clone();
    let catalog = state.catalog.clone();
    tokio::spawn(async move {
        let permit = workers.acquire_owned().await;
        if permit.is_err() || job.cancel_requested() || !job.transition(JobStatus::Running, None) {
            job.transition(JobStatus::Cancelled, Some("cancelled".into()));
            let _ = catalog.persist_job(&job);
            return;
        }
        let _ = catalog.persist_job(&job);
        let runner = job.clone();
        let outcome = tokio::task::spawn_blocking(move || {
            let mut sink = runner.sink();
            phasefd::solve_with_progress(&instance, &runner.config, &runner.freeze, &mut sink)
        })
        .await;
        match outcome {
            Ok(result) => job.finish(result),
            Err(e) => {
                job.transition(JobStatus::Failed, Some(format!("solver task ended: {e}")));
            }
        }
        let _ = catalog.persist_job(&job);
    });
    Ok(())
}

async fn create_job(State(state): State<AppState>, body: Bytes) -> Result<(StatusCode, Json<JobView>), ApiError> {
    let req: CreateJob = parse_body(&body)?;
    let instance = find_instance(&state, &req.instance_id)?;
    let mut freeze = match req.freeze {
        Some(doc) => doc.into_spec().map_err(ApiError::unprocessable)?,
        None => FreezeSpec::default(),
    };
    prepare(&instance, &req.config, &mut freeze, &req.freeze_ops)?;
    let job = Arc::new(Job::new(new_id(), req.instance_id, None, req.config, freeze));
    let view = job.view();
    launch(&state, job, instance)?;
    Ok((StatusCode::ACCEPTED, Json(view)))
}

async fn get_job(State(state): State<AppState>, Path(id): Path<String>) -> Result<Json<JobView>, ApiError> {
    Ok(Json(find_job(&state, &id)?.view()))
}

#[derive(Debug, Deserialize)]
struct EventsQuery {
    #[serde(default)]
    cursor: u64,
    #[serde(default)]
    limit: Option<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct EventsPage {
    pub job_id: String,
    pub status: JobStatus,
    pub records: Vec<EventRecord>,
    pub next_cursor: u64,
}

async fn get_events(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Query(q): Query<EventsQuery>,
) -> Result<Json<EventsPage>, ApiError> {
    let job = find_job(&state, &id)?;
    let limit = q.limit.unwrap_or(MAX_EVENTS_PAGE).min(MAX_EVENTS_PAGE);
    let (records, status) = job.events_from(q.cursor, limit);
    let next_cursor = records.last().map_or(q.cursor, |r| r.seq + 1);
    Ok(Json(EventsPage {
        job_id: id,
        status,
        records,
        next_cursor,
    }))
}

async fn get_solution(State(state): State<AppState>, Path(id): Path<String>) -> Result<Json<SolutionDocument>, ApiError> {
    let job = find_job(&state, &id)?;
    match job.solution() {
        Some(solution) => Ok(Json(SolutionDocument::from(solution.as_ref()))),
        None => Err(ApiError::Conflict(format!("job {id} is {:?}, not done", job.status()).to_lowercase())),
    }
}

async fn cancel_job(State(state): State<AppState>, Path(id): Path<String>) -> Result<Json<JobView>, ApiError> {
    let job = find_job(&state, &id)?;
    if job.status().is_terminal() {
        return Err(ApiError::Conflict(format!("job {id} already finished")));
    }
    job.request_cancel();
    if job.status() == JobStatus::Queued && job.transition(JobStatus::Cancelled, Some("cancelled".into())) {
        state.catalog.persist_job(&job).map_err(internal)?;
    }
    Ok(Json(job.view()))
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RefineRequest {
    #[serde(default)]
    freeze: FreezeOps,
    #[serde(default)]
    config: serde_json::Map<String, Value>,
}

/// Overlays `overrides` on `base`. Unknown keys are rejected.
fn merge_config(base: &SolverConfig, overrides: &serde_json::Map<String, Value>) -> Result<SolverConfig, ApiError> {
    let mut value = serde_json::to_value(base).map_err(internal)?;
    let fields = value.as_object_mut().expect("config serializes to an object");
    for (key, v) in overrides {
        if !fields.contains_key(key) {
            return Err(ApiError::BadRequest(format!("unknown config field {key:?}")));
        }
        fields.insert(key.clone(), v.clone());
    }
    serde_json::from_value(value).map_err(|e| ApiError::BadRequest(format!("bad config override: {e}")))
}

async fn refine_job(
    State(state): State<AppState>,
    Path(id): Path<String>,
    body: Bytes,
) -> Result<(StatusCode, Json<JobView>), ApiError> {
    let req: RefineRequest = if body.iter().all(u8::is_ascii_whitespace) {
        RefineRequest::default()
    } else {
        parse_body(&body)?
    };
    let parent = find_job(&state, &id)?;
    let solution = parent
        .solution()
        .ok_or_else(|| ApiError::Conflict(format!("job {id} has no solution to refine")))?;
    let instance = find_instance(&state, &parent.instance_id)?;
    let config = merge_config(&parent.config, &req.config)?;
    if config.k != parent.config.k || config.m != parent.config.m || config.oversample != parent.config.oversample {
        return Err(ApiError::Unprocessable("refinement keeps K, M and oversample of the parent".into()));
    }
    let mut freeze = parent.freeze.clone();
    freeze.w_init = Some(solution.w.clone());
    freeze.h_init = Some(solution.h.clone());
    prepare(&instance, &config, &mut freeze, &req.freeze)?;
    let job = Arc::new(Job::new(new_id(), parent.instance_id.clone(), Some(id), config, freeze));
    let view = job.view();
    launch(&state, job, instance)?;
    Ok((StatusCode::ACCEPTED, Json(view)))
}
