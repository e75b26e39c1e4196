//! Local HTTP JSON API for submitting scenario runs and polling their results.
//!
//! Jobs are keyed by a content hash of the run configuration, master seed and
//! panel digest, so resubmitting identical work returns the existing job.
//! One compute pool is shared: jobs queue behind a single execution lock.

use std::collections::HashMap;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex, MutexGuard};

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::{header, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use copol::config::{FieldError, RunConfig};
use copol::figures::{metric_value, METRIC_PANELS};
use copol::reference::thresholds_json;
use copol::runner::{results_csv, ResultRow};
use copol::{run_grid, PanelContext};
use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};
use tower_http::cors::{AllowOrigin, CorsLayer};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobStatus {
    Queued,
    Running,
    Done,
    Failed,
}

/// One metric of one policy of one scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PanelPoint {
    pub scenario_id: String,
    pub effect1: f64,
    pub effect2: f64,
    pub gap: String,
    pub k: usize,
    pub phase_in: String,
    pub ordering: String,
    pub model: String,
    pub spec: String,
    pub policy: String,
    pub metric: String,
    pub value: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobResults {
    pub job_id: String,
    pub master_seed: u64,
    pub panel_digest: String,
    /// One row per scenario and policy, as in the results CSV.
    pub rows: Vec<ResultRow>,
    /// The same numbers in long form, one object per metric per policy.
    pub panels: Vec<PanelPoint>,
}

impl JobResults {
    fn new(job_id: &str, master_seed: u64, panel_digest: &str, rows: Vec<ResultRow>) -> Self {
        let panels = rows
            .iter()
            .flat_map(|r| {
                METRIC_PANELS.iter().map(move |&metric| PanelPoint {
                    scenario_id: r.scenario_id.clone(),
                    effect1: r.effect1,
                    effect2: r.effect2,
                    gap: r.gap.clone(),
                    k: r.k,
                    phase_in: r.phase_in.clone(),
                    ordering: r.ordering.clone(),
                    model: r.model.clone(),
                    spec: r.spec.clone(),
                    policy: r.policy.clone(),
                    metric: metric.to_string(),
                    value: metric_value(r, metric),
                })
            })
            .collect();
        JobResults {
            job_id: job_id.to_string(),
            master_seed,
            panel_digest: panel_digest.to_string(),
            rows,
            panels,
        }
    }
}

struct JobState {
    status: JobStatus,
    error: Option<String>,
    results: Option<Arc<JobResults>>,
}

struct Job {
    id: String,
    total: usize,
    completed: AtomicUsize,
    state: Mutex<JobState>,
}

impl Job {
    fn snapshot(&self) -> serde_json::Value {
        let st = self.state.lock().unwrap();
        let completed = match st.status {
            JobStatus::Done => self.total,
            _ => self.completed.load(Ordering::Relaxed).min(self.total),
        };
        let mut v = json!({
            "job_id": self.id,
            "status": st.status,
            "progress": {
                "completed": completed,
                "total": self.total,
                "fraction": if self.total == 0 { 1.0 } else { completed as f64 / self.total as f64 },
            },
        });
        if let Some(e) = &st.error {
            v["error"] = json!(e);
        }
        v
    }

    fn set(&self, status: JobStatus) {
        self.state.lock().unwrap().status = status;
    }
}

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub host: std::net::IpAddr,
    pub port: u16,
    /// Worker threads for each job's replications.
    pub workers: usize,
    /// Finished results are stored here and reused across restarts.
    pub cache_dir: Option<PathBuf>,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        ServiceConfig {
            host: std::net::Ipv4Addr::LOCALHOST.into(),
            port: 8787,
            workers: 1,
            cache_dir: None,
        }
    }
}

struct Inner {
    workers: usize,
    cache_dir: Option<PathBuf>,
    jobs: Mutex<HashMap<String, Arc<Job>>>,
    compute: Mutex<()>,
}

/// Shared service state; cheap to clone.
#[derive(Clone)]
pub struct AppState(Arc<Inner>);

impl AppState {
    pub fn new(config: &ServiceConfig) -> Self {
        AppState(Arc::new(Inner {
            workers: config.workers.max(1),
            cache_dir: config.cache_dir.clone(),
            jobs: Mutex::new(HashMap::new()),
            compute: Mutex::new(()),
        }))
    }

    /// Holds the compute lock; queued jobs wait until the guard is dropped.
    pub fn pause_compute(&self) -> MutexGuard<'_, ()> {
        self.0.compute.lock().unwrap_or_else(|e| e.into_inner())
    }
}

pub fn router(state: AppState) -> Router {
    let cors = CorsLayer::new()
        .allow_origin(AllowOrigin::predicate(|origin: &HeaderValue, _| is_local_origin(origin)))
        .allow_methods([axum::http::Method::GET, axum::http::Method::POST])
        .allow_headers([header::CONTENT_TYPE]);
    Router::new()
        .route("/api/scenarios", post(submit))
        .route("/api/scenarios/{id}", get(status))
        .route("/api/scenarios/{id}/results", get(results))
        .route("/api/reference/thresholds", get(thresholds))
        .layer(cors)
        .with_state(state)
}

fn is_local_origin(origin: &HeaderValue) -> bool {
    let Ok(o) = origin.to_str() else { return false };
    let rest = o.strip_prefix("http://").or_else(|| o.strip_prefix("https://")).unwrap_or("");
    let host = rest.split(':').next().unwrap_or("");
    matches!(host, "localhost" | "127.0.0.1" | "[::1]")
}

/// Binds and serves until the process is stopped.
pub async fn serve(config: ServiceConfig) -> std::io::Result<()> {
    let addr = SocketAddr::new(config.host, config.port);
    let listener = tokio::net::TcpListener::bind(addr).await?;
    eprintln!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(AppState::new(&config))).await
}

fn bad_request(errors: Vec<FieldError>) -> Response {
    (StatusCode::BAD_REQUEST, Json(json!({ "errors": errors }))).into_response()
}

fn not_found(id: &str) -> Response {
    (StatusCode::NOT_FOUND, Json(json!({ "error": format!("unknown job `{id}`") }))).into_response()
}

/// Hash of everything that determines a job's numbers.
fn cache_key(cfg: &RunConfig, panel_digest: &str) -> String {
    let mut v = cfg.to_json();
    if let Some(obj) = v.as_object_mut() {
        obj.remove("workers");
        obj.remove("output");
    }
    let mut h = Sha256::new();
    h.update(v.to_string().as_bytes());
    h.update(b"\0");
    h.update(panel_digest.as_bytes());
    hex::encode(h.finalize())
}

async fn submit(State(state): State<AppState>, body: Bytes) -> Response {
    let text = match std::str::from_utf8(&body) {
        Ok(t) => t,
        Err(_) => return bad_request(vec![field("body", "request body must be UTF-8 JSON")]),
    };
    let cfg = match RunConfig::from_json_str(text) {
        Ok(c) => c,
        Err(e) => return bad_request(vec![field("body", &e.to_string())]),
    };
    if let Err(e) = cfg.check(None) {
        return bad_request(e.0);
    }
    let ctx = match PanelContext::from_source(&cfg.panel_source()) {
        Ok(c) => c,
        Err(e) => return bad_request(vec![field("panel", &e.to_string())]),
    };
    if let Err(e) = cfg.check(Some(&ctx.panel)) {
        return bad_request(e.0);
    }

    let key = cache_key(&cfg, &ctx.digest);
    let id = key[..20].to_string();
    let grid = cfg.grid_spec();
    let total = grid.cells().len() * cfg.reps;

    let job = {
        let mut jobs = state.0.jobs.lock().unwrap();
        if jobs.contains_key(&id) {
            return accepted(&id);
        }
        let job = Arc::new(Job {
            id: id.clone(),
            total,
            completed: AtomicUsize::new(0),
            state: Mutex::new(JobState {
                status: JobStatus::Queued,
                error: None,
                results: None,
            }),
        });
        jobs.insert(id.clone(), job.clone());
        job
    };

    if let Some(cached) = state.load_cached(&id) {
        let mut st = job.state.lock().unwrap();
        st.status = JobStatus::Done;
        st.results = Some(Arc::new(cached));
        return accepted(&id);
    }

    let inner = state.clone();
    tokio::task::spawn_blocking(move || inner.execute(&job, &cfg, &ctx));
    accepted(&id)
}

fn field(name: &str, message: &str) -> FieldError {
    FieldError {
        field: name.to_string(),
        message: message.to_string(),
    }
}

fn accepted(id: &str) -> Response {
    (StatusCode::ACCEPTED, Json(json!({ "job_id": id }))).into_response()
}

impl AppState {
    fn execute(&self, job: &Job, cfg: &RunConfig, ctx: &PanelContext) {
        let _guard = self.pause_compute();
        job.set(JobStatus::Running);
        let settings = cfg.run_settings(self.0.workers);
        let settings = copol::RunSettings {
            retain_records_up_to: 0,
            ..settings
        };
        let outcome = run_grid(ctx, &cfg.grid_spec(), cfg.reps, cfg.master_seed, &settings, Some(&job.completed));
        let mut st = job.state.lock().unwrap();
        match outcome {
            Ok(res) => {
                let results = JobResults::new(&job.id, cfg.master_seed, &ctx.digest, results_csv(&res));
                self.store_cached(&results);
                st.results = Some(Arc::new(results));
                st.status = JobStatus::Done;
            }
            Err(e) => {
                st.error = Some(e.to_string());
                st.status = JobStatus::Failed;
            }
        }
    }

    fn cache_path(&self, id: &str) -> Option<PathBuf> {
        self.0.cache_dir.as_ref().map(|d| d.join(format!("{id}.json")))
    }

    fn load_cached(&self, id: &str) -> Option<JobResults> {
        let text = std::fs::read_to_string(self.cache_path(id)?).ok()?;
        serde_json::from_str(&text).ok()
    }

    // A cache write failure only costs a recomputation later.
    fn store_cached(&self, results: &JobResults) {
        let Some(path) = self.cache_path(&results.job_id) else { return };
        if let Some(dir) = path.parent() {
            let _ = std::fs::create_dir_all(dir);
        }
        if let Ok(text) = serde_json::to_string(results) {
            let tmp = path.with_extension("json.tmp");
            if std::fs::write(&tmp, text).is_ok() {
                let _ = std::fs::rename(tmp, path);
            }
        }
    }

    fn job(&self, id: &str) -> Option<Arc<Job>> {
        self.0.jobs.lock().unwrap().get(id).cloned()
    }
}

async fn status(State(state): State<AppState>, Path(id): Path<String>) -> Response {
    match state.job(&id) {
        Some(job) => Json(job.snapshot()).into_response(),
        None => not_found(&id),
    }
}

async fn results(State(state): State<AppState>, Path(id): Path<String>) -> Response {
    let Some(job) = state.job(&id) else { return not_found(&id) };
    let ready = job.state.lock().unwrap().results.clone();
    match ready {
        Some(r) => Json(r.as_ref().clone()).into_response(),
        None => (StatusCode::CONFLICT, Json(job.snapshot())).into_response(),
    }
}

async fn thresholds() -> Response {
    ([(header::CONTENT_TYPE, "application/json")], thresholds_json()).into_response()
}
