//! Local HTTP API over a directory of trained models.

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use axum::extract::{Path as UrlPath, State};
use axum::http::{header, HeaderValue, Method, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use chrono::NaiveDate;
use pandemic_fhoc_core::fhoc::{closest_to_origin, noiseless_config, FhocOptions, ScenarioKind as PointKind, SweepPoint};
use pandemic_fhoc_core::npi::{NpiBounds, NpiSchedule, NPI_COUNT, NPI_NAMES};
use pandemic_fhoc_core::training::RegionModel;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tower_http::cors::{AllowOrigin, CorsLayer};

use crate::config::{Config, ServiceConfig};
use crate::data::{Scenario, ScenarioContext};
use crate::error::{Error, Result};
use crate::formats::{forecast_rows, ModelFile};
use crate::fsio::sha256_hex;
use crate::pipeline::{eps_values, parallel_sweep, parse_weights, sweep_plan};

pub struct LoadedModel {
    pub file: ModelFile,
    pub model: RegionModel,
    pub path: PathBuf,
}

#[derive(Debug, Clone, Serialize)]
pub struct LoadError {
    pub file: String,
    pub error: String,
}

/// Models in `dir`, keyed by region id. Unreadable files are reported, not
/// fatal; a missing directory holds no models.
pub fn load_models(dir: &Path) -> (BTreeMap<String, Arc<LoadedModel>>, Vec<LoadError>) {
    let mut models = BTreeMap::new();
    let mut errors = Vec::new();
    let Ok(entries) = std::fs::read_dir(dir) else {
        tracing::warn!(dir = %dir.display(), "model directory not readable");
        return (models, errors);
    };
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json") && p.file_name().is_some_and(|n| n != "manifest.json"))
        .collect();
    paths.sort();
    for path in paths {
        let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        match ModelFile::load(&path).and_then(|file| Ok((file.to_model()?, file))) {
            Ok((model, file)) => {
                models.insert(file.region_id.clone(), Arc::new(LoadedModel { file, model, path }));
            }
            Err(e) => {
                tracing::error!(file = %name, error = %e, "model file rejected");
                errors.push(LoadError { file: name, error: e.to_string() });
            }
        }
    }
    (models, errors)
}

enum JobStatus {
    Running,
    Done(Arc<Value>),
    Failed(String),
}

struct Job {
    key: String,
    total: usize,
    progress: Arc<AtomicUsize>,
    status: JobStatus,
}

#[derive(Default)]
struct Store {
    cache: HashMap<String, (Arc<Value>, Vec<String>)>,
    order: VecDeque<String>,
    schedules: HashMap<String, Arc<Value>>,
    jobs: HashMap<String, Job>,
    running: HashMap<String, String>,
    next_job: u64,
}

pub struct AppState {
    pub config: ServiceConfig,
    pub fhoc: FhocOptions,
    pub solver_r: f64,
    pub default_seed: u64,
    pub models: BTreeMap<String, Arc<LoadedModel>>,
    pub load_errors: Vec<LoadError>,
    store: Mutex<Store>,
}

impl AppState {
    pub fn new(config: &Config) -> Self {
        let (models, load_errors) = load_models(&config.service.models);
        AppState {
            config: config.service.clone(),
            fhoc: config.fhoc,
            solver_r: config.sweep.solver_r,
            default_seed: config.seed.unwrap_or(0),
            models,
            load_errors,
            store: Mutex::new(Store::default()),
        }
    }

    fn store(&self) -> std::sync::MutexGuard<'_, Store> {
        self.store.lock().unwrap_or_else(|e| e.into_inner())
    }
}

pub struct ApiError(StatusCode, Value);

impl ApiError {
    fn new(status: StatusCode, message: impl ToString) -> Self {
        ApiError(status, json!({ "error": message.to_string() }))
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(self.1)).into_response()
    }
}

fn unprocessable(e: impl ToString) -> ApiError {
    ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, e)
}

fn model<'a>(state: &'a AppState, region: &str) -> std::result::Result<&'a Arc<LoadedModel>, ApiError> {
    state
        .models
        .get(region)
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, format!("unknown region `{region}`")))
}

pub fn router(state: Arc<AppState>) -> Router {
    let mut cors = CorsLayer::new()
        .allow_methods([Method::GET, Method::POST])
        .allow_headers([header::CONTENT_TYPE]);
    if let Ok(origin) = HeaderValue::from_str(&state.config.cors_origin) {
        cors = cors.allow_origin(AllowOrigin::list([origin]));
    }
    Router::new()
        .route("/regions", get(regions))
        .route("/forecast", post(forecast))
        .route("/prescribe", post(prescribe))
        .route("/schedule/{id}", get(schedule))
        .route("/jobs/{id}", get(job))
        .layer(cors)
        .with_state(state)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionSummary {
    pub region_id: String,
    pub training_window: [NaiveDate; 2],
    pub population: f64,
    pub map_form: String,
    pub zero_mean: Option<bool>,
    pub white: Option<bool>,
    pub variance: Option<String>,
    pub low_confidence: bool,
    pub degenerate: bool,
}

async fn regions(State(state): State<Arc<AppState>>) -> std::result::Result<Json<Vec<RegionSummary>>, ApiError> {
    if let Some(e) = state.load_errors.first() {
        return Err(ApiError(
            StatusCode::INTERNAL_SERVER_ERROR,
            json!({ "error": format!("malformed model file {}: {}", e.file, e.error), "file": e.file }),
        ));
    }
    let out = state
        .models
        .values()
        .map(|m| {
            let d = m.model.diagnostics.as_ref();
            let text = |v: Value| v.as_str().map(str::to_string);
            RegionSummary {
                region_id: m.file.region_id.clone(),
                training_window: m.file.training_window,
                population: m.model.params.population,
                map_form: serde_json::to_value(m.model.map.form).ok().and_then(text).unwrap_or_default(),
                zero_mean: d.map(|d| d.zero_mean),
                white: d.map(|d| d.white),
                variance: d.and_then(|d| serde_json::to_value(d.variance).ok()).and_then(text),
                low_confidence: m.model.low_confidence,
                degenerate: m.model.fit_flags.degenerate,
            }
        })
        .collect();
    Ok(Json(out))
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ForecastRequest {
    pub region: String,
    pub scenario: Scenario,
    pub days: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastPointBody {
    pub date: NaiveDate,
    pub mean: f64,
    pub lo: f64,
    pub hi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastBody {
    pub region: String,
    pub origin: NaiveDate,
    pub points: Vec<ForecastPointBody>,
}

async fn forecast(
    State(state): State<Arc<AppState>>,
    Json(req): Json<ForecastRequest>,
) -> std::result::Result<Json<ForecastBody>, ApiError> {
    let m = model(&state, &req.region)?;
    if req.days > state.config.max_days {
        return Err(unprocessable(format!("days = {} exceeds {}", req.days, state.config.max_days)));
    }
    let origin = m.file.origin();
    let ctx = ScenarioContext {
        days: req.days,
        bounds: NpiBounds::default(),
        last_npi: m.model.last_npi,
        seed: state.default_seed,
        start_date: Some(origin),
    };
    let npis = req.scenario.materialize(&ctx).map_err(unprocessable)?;
    let points = m.model.forecast(&npis).map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e))?;
    let rows = forecast_rows(&points, origin, m.model.params.population);
    Ok(Json(ForecastBody {
        region: req.region,
        origin,
        points: rows
            .into_iter()
            .map(|r| ForecastPointBody {
                date: r.date,
                mean: r.mean,
                lo: r.lo,
                hi: r.hi,
            })
            .collect(),
    }))
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum EpsSpec {
    One(f64),
    Many(Vec<f64>),
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PrescribeRequest {
    pub region: String,
    #[serde(default)]
    pub weights: Option<Value>,
    #[serde(default)]
    pub eps_grid: Option<usize>,
    #[serde(default)]
    pub eps: Option<EpsSpec>,
    #[serde(default)]
    pub horizon: Option<f64>,
    #[serde(default)]
    pub random_scenarios: Option<usize>,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub fixed: bool,
}

/// A prescription request after defaults and validation; its canonical JSON
/// is the cache key.
#[derive(Debug, Clone, Serialize)]
struct SweepKey {
    region: String,
    weights: Vec<[f64; NPI_COUNT]>,
    eps: Vec<f64>,
    horizon: f64,
    random_scenarios: usize,
    fixed: bool,
    seed: u64,
}

fn tag(kind: PointKind) -> &'static str {
    match kind {
        PointKind::Optimal => "optimal",
        PointKind::Fixed => "fixed",
        PointKind::RandomConstant | PointKind::RandomVariable => "random",
    }
}

fn schedule_id(key: &str, index: usize) -> String {
    sha256_hex(format!("{key}:{index}").as_bytes())[..16].to_string()
}

fn sweep_body(key: &str, k: &SweepKey, points: &[SweepPoint]) -> (Value, Vec<(String, Value)>) {
    let mut schedules = Vec::new();
    let items: Vec<Value> = points
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let id = p.schedule.as_ref().map(|s| {
                let id = schedule_id(key, i);
                schedules.push((id.clone(), schedule_value(&id, &p.label, s)));
                id
            });
            json!({
                "label": p.label,
                "tag": tag(p.kind),
                "kind": p.kind,
                "eps": p.eps,
                "j0": finite(p.j0),
                "j1": finite(p.j1),
                "converged": p.converged,
                "dominated": p.dominated,
                "error": p.error,
                "schedule_id": id,
            })
        })
        .collect();
    let body = json!({
        "key": key,
        "region": k.region,
        "horizon": k.horizon,
        "seed": k.seed,
        "points": items,
        "chosen": closest_to_origin(points),
    });
    (body, schedules)
}

fn finite(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

fn schedule_value(id: &str, label: &str, s: &NpiSchedule) -> Value {
    json!({
        "id": id,
        "label": label,
        "dt": s.dt,
        "npi_names": NPI_NAMES,
        "rows": s.rows,
    })
}

fn normalize(state: &AppState, req: &PrescribeRequest) -> std::result::Result<SweepKey, ApiError> {
    model(state, &req.region)?;
    let weights = match &req.weights {
        Some(v) => parse_weights(v).map_err(unprocessable)?,
        None => vec![[1.0; NPI_COUNT]],
    };
    let explicit = match &req.eps {
        Some(EpsSpec::One(e)) => Some(vec![*e]),
        Some(EpsSpec::Many(v)) => Some(v.clone()),
        None => None,
    };
    let eps = eps_values(req.eps_grid.unwrap_or(25), explicit.as_deref()).map_err(unprocessable)?;
    let horizon = req.horizon.unwrap_or(60.0);
    if !(horizon.is_finite() && horizon > 0.0 && horizon <= state.config.max_days as f64) {
        return Err(unprocessable(format!("horizon must be in (0, {}]", state.config.max_days)));
    }
    Ok(SweepKey {
        region: req.region.clone(),
        weights,
        eps,
        horizon,
        random_scenarios: req.random_scenarios.unwrap_or(50),
        fixed: req.fixed,
        seed: req.seed.unwrap_or(state.default_seed),
    })
}

fn run_sweep(state: &AppState, k: &SweepKey, progress: &AtomicUsize) -> Result<Vec<SweepPoint>> {
    let m = state.models.get(&k.region).ok_or_else(|| Error::Input(format!("unknown region `{}`", k.region)))?;
    let template = m.model.control_problem(k.horizon, k.weights.clone(), 0.0, NpiBounds::default())?;
    let plan = sweep_plan(k.eps.clone(), k.random_scenarios, k.fixed.then_some(m.model.last_npi), k.seed);
    Ok(parallel_sweep(&template, &noiseless_config(state.solver_r), &state.fhoc, &plan, Some(progress)))
}

fn finish_job(state: &AppState, job_id: &str, key: &str, sweep_key: &SweepKey, result: Result<Vec<SweepPoint>>) {
    let mut store = state.store();
    store.running.remove(key);
    let status = match result {
        Ok(points) => {
            let (body, schedules) = sweep_body(key, sweep_key, &points);
            let body = Arc::new(body);
            let ids: Vec<String> = schedules.iter().map(|(id, _)| id.clone()).collect();
            for (id, v) in schedules {
                store.schedules.insert(id, Arc::new(v));
            }
            store.cache.insert(key.to_string(), (body.clone(), ids));
            store.order.push_back(key.to_string());
            while store.order.len() > state.config.cache_capacity.max(1) {
                if let Some(old) = store.order.pop_front() {
                    if let Some((_, ids)) = store.cache.remove(&old) {
                        for id in ids {
                            store.schedules.remove(&id);
                        }
                    }
                }
            }
            JobStatus::Done(body)
        }
        Err(e) => JobStatus::Failed(e.to_string()),
    };
    if let Some(job) = store.jobs.get_mut(job_id) {
        job.status = status;
    }
}

fn accepted(job_id: &str) -> Response {
    (
        StatusCode::ACCEPTED,
        Json(json!({ "job_id": job_id, "status": "running", "poll": format!("/jobs/{job_id}") })),
    )
        .into_response()
}

fn cached(body: Arc<Value>, hit: bool) -> Response {
    let mut r = Json(body.as_ref().clone()).into_response();
    r.headers_mut()
        .insert("x-cache", HeaderValue::from_static(if hit { "hit" } else { "miss" }));
    r
}

async fn prescribe(
    State(state): State<Arc<AppState>>,
    Json(req): Json<PrescribeRequest>,
) -> std::result::Result<Response, ApiError> {
    let k = normalize(&state, &req)?;
    let key = sha256_hex(serde_json::to_string(&k).map_err(unprocessable)?.as_bytes());
    let total = k.eps.len() + k.random_scenarios + usize::from(k.fixed);
    let job_id = {
        let mut store = state.store();
        if let Some((body, _)) = store.cache.get(&key) {
            return Ok(cached(body.clone(), true));
        }
        if let Some(id) = store.running.get(&key) {
            return Ok(accepted(id));
        }
        store.next_job += 1;
        let id = format!("job-{}", store.next_job);
        store.jobs.insert(
            id.clone(),
            Job {
                key: key.clone(),
                total,
                progress: Arc::new(AtomicUsize::new(0)),
                status: JobStatus::Running,
            },
        );
        store.running.insert(key.clone(), id.clone());
        id
    };
    let progress = state.store().jobs[&job_id].progress.clone();
    let handle = {
        let (state, job_id, key) = (state.clone(), job_id.clone(), key.clone());
        tokio::task::spawn_blocking(move || {
            let result = run_sweep(&state, &k, &progress);
            finish_job(&state, &job_id, &key, &k, result);
        })
    };
    if total > state.config.async_threshold {
        return Ok(accepted(&job_id));
    }
    let wait = Duration::from_millis(state.config.timeout_ms);
    if tokio::time::timeout(wait, handle).await.is_err() {
        return Ok(accepted(&job_id));
    }
    let store = state.store();
    match &store.jobs[&job_id].status {
        JobStatus::Done(body) => Ok(cached(body.clone(), false)),
        JobStatus::Failed(e) => Err(ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e)),
        JobStatus::Running => Ok(accepted(&job_id)),
    }
}

async fn schedule(State(state): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> std::result::Result<Json<Value>, ApiError> {
    let store = state.store();
    store
        .schedules
        .get(&id)
        .map(|v| Json(v.as_ref().clone()))
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, format!("unknown schedule `{id}`")))
}

async fn job(State(state): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> std::result::Result<Json<Value>, ApiError> {
    let store = state.store();
    let job = store
        .jobs
        .get(&id)
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, format!("unknown job `{id}`")))?;
    let done = job.progress.load(Ordering::Relaxed).min(job.total);
    let mut v = json!({ "job_id": id, "key": job.key, "done": done, "total": job.total });
    match &job.status {
        JobStatus::Running => v["status"] = json!("running"),
        JobStatus::Done(body) => {
            v["status"] = json!("done");
            v["result"] = body.as_ref().clone();
        }
        JobStatus::Failed(e) => {
            v["status"] = json!("failed");
            v["error"] = json!(e);
        }
    }
    Ok(Json(v))
}

/// Binds and serves until interrupted.
pub async fn serve(config: Config) -> Result<()> {
    let state = Arc::new(AppState::new(&config));
    tracing::info!(models = state.models.len(), errors = state.load_errors.len(), "models loaded");
    let listener = tokio::net::TcpListener::bind(&config.service.bind)
        .await
        .map_err(|e| Error::io(&config.service.bind, e))?;
    println!("listening on {}", config.service.bind);
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
        .map_err(|e| Error::io("<server>", e))
}
