use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use axum::extract::{Path, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use tokio::sync::Semaphore;

use fovea_core::analysis::Condition;
use fovea_core::foveation::{sample_random_fixations, Fixation, FixationSequence, FixationSource};
use fovea_core::seeds;

use crate::error::{ServiceError, ServiceResult};
use crate::generator::{Generator, StimulusSource};
use crate::record::{png_sha256, GenerationRecord, LogEvent, RecordedResponse, SessionEvent, TrialLog, TrialRecord, SCHEMA_VERSION};
use crate::schedule::{build_schedule, SessionConfig, TrialPlan};

/// Patch size assumed for fixation capacity when no generator is attached.
const DEFAULT_PATCH: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Phase {
    Viewing,
    Generating,
    Ready,
    ProbeShown,
    Done,
    BudgetExceeded,
    Aborted,
}

struct TrialState {
    plan: TrialPlan,
    phase: Phase,
    fixations: Vec<Fixation>,
    png: Option<Arc<Vec<u8>>>,
    generation: Option<GenerationRecord>,
}

struct Session {
    id: String,
    config: SessionConfig,
    trials: Vec<TrialState>,
    log: Arc<TrialLog>,
}

struct Inner {
    stimuli: Arc<dyn StimulusSource>,
    generator: Option<Arc<dyn Generator>>,
    sessions: Mutex<HashMap<String, Arc<Mutex<Session>>>>,
    log_dir: PathBuf,
    pool: Arc<Semaphore>,
    next_id: AtomicU64,
}

/// Shared service state; cheap to clone.
#[derive(Clone)]
pub struct AppState {
    inner: Arc<Inner>,
}

impl AppState {
    /// `workers` bounds concurrent generation jobs across all sessions.
    pub fn new(
        stimuli: Arc<dyn StimulusSource>,
        generator: Option<Arc<dyn Generator>>,
        log_dir: impl Into<PathBuf>,
        workers: usize,
    ) -> std::io::Result<Self> {
        let log_dir = log_dir.into();
        std::fs::create_dir_all(&log_dir)?;
        Ok(Self {
            inner: Arc::new(Inner {
                stimuli,
                generator,
                sessions: Mutex::new(HashMap::new()),
                log_dir,
                pool: Arc::new(Semaphore::new(workers.max(1))),
                next_id: AtomicU64::new(1),
            }),
        })
    }

    pub fn log_path(&self, session: &str) -> PathBuf {
        self.inner.log_dir.join(format!("{session}.jsonl"))
    }

    fn session(&self, id: &str) -> ServiceResult<Arc<Mutex<Session>>> {
        self.inner
            .sessions
            .lock()
            .map_err(|_| ServiceError::internal("session table poisoned"))?
            .get(id)
            .cloned()
            .ok_or_else(|| ServiceError::not_found("session-not-found", format!("no session '{id}'")))
    }

    fn patch_size(&self) -> usize {
        self.inner.generator.as_ref().map_or(DEFAULT_PATCH, |g| g.info().patch_size)
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/sessions", post(create_session))
        .route("/sessions/{s}/export", get(export))
        .route("/sessions/{s}/trials/{t}", get(trial_status))
        .route("/sessions/{s}/trials/{t}/stimulus", get(stimulus))
        .route("/sessions/{s}/trials/{t}/fixations", post(ingest_fixation))
        .route("/sessions/{s}/trials/{t}/probe", get(probe))
        .route("/sessions/{s}/trials/{t}/response", post(record_response))
        .with_state(state)
}

/// Serves until ctrl-c. Every log write is synced, so nothing is pending at
/// shutdown.
pub async fn serve(state: AppState, addr: std::net::SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}

fn lock(s: &Mutex<Session>) -> ServiceResult<std::sync::MutexGuard<'_, Session>> {
    s.lock().map_err(|_| ServiceError::internal("session poisoned"))
}

fn trial_mut(session: &mut Session, t: usize) -> ServiceResult<&mut TrialState> {
    let n = session.trials.len();
    session
        .trials
        .get_mut(t)
        .ok_or_else(|| ServiceError::not_found("trial-not-found", format!("trial {t} of {n}")))
}

#[derive(Serialize)]
struct Health {
    status: &'static str,
    version: &'static str,
    generator: bool,
}

async fn health(State(state): State<AppState>) -> Json<Health> {
    Json(Health {
        status: "ok",
        version: env!("CARGO_PKG_VERSION"),
        generator: state.inner.generator.is_some(),
    })
}

#[derive(Serialize, Deserialize)]
pub struct TrialSummary {
    pub trial: usize,
    pub stimulus: usize,
    pub fixation_target: usize,
}

#[derive(Serialize, Deserialize)]
pub struct SessionCreated {
    pub session_id: String,
    pub probe_ms: u64,
    pub trials: Vec<TrialSummary>,
}

async fn create_session(
    State(state): State<AppState>,
    Json(cfg): Json<SessionConfig>,
) -> ServiceResult<(StatusCode, Json<SessionCreated>)> {
    let capacity = {
        let side = state.inner.stimuli.image(*cfg.stimuli.first().unwrap_or(&0)).map(|i| i.width()).unwrap_or(0);
        (side / state.patch_size()).pow(2)
    };
    cfg.validate(capacity)?;
    if let Some(&bad) = cfg.stimuli.iter().find(|&&s| s >= state.inner.stimuli.len()) {
        return Err(ServiceError::invalid(format!("unknown stimulus {bad}")));
    }
    if cfg.needs_generator() && state.inner.generator.is_none() {
        return Err(ServiceError::new(
            StatusCode::SERVICE_UNAVAILABLE,
            "generator-unavailable",
            "generated-image conditions need a model checkpoint",
        ));
    }
    let n = state.inner.next_id.fetch_add(1, Ordering::Relaxed);
    let id = format!("s{n:04}-{:08x}", seeds::derive(cfg.seed, &[n]) as u32);
    let schedule = build_schedule(&cfg);
    let log = Arc::new(TrialLog::open(state.log_path(&id))?);
    log.append(&LogEvent::Session(SessionEvent {
        schema_version: SCHEMA_VERSION,
        session: id.clone(),
        config: cfg.clone(),
        schedule: schedule.clone(),
    }))?;
    let out = SessionCreated {
        session_id: id.clone(),
        probe_ms: cfg.probe_ms,
        trials: schedule
            .iter()
            .map(|p| TrialSummary {
                trial: p.trial,
                stimulus: p.stimulus,
                fixation_target: p.fixation_target,
            })
            .collect(),
    };
    let session = Session {
        id: id.clone(),
        config: cfg,
        trials: schedule
            .into_iter()
            .map(|plan| TrialState {
                plan,
                phase: Phase::Viewing,
                fixations: Vec::new(),
                png: None,
                generation: None,
            })
            .collect(),
        log,
    };
    state
        .inner
        .sessions
        .lock()
        .map_err(|_| ServiceError::internal("session table poisoned"))?
        .insert(id, Arc::new(Mutex::new(session)));
    Ok((StatusCode::CREATED, Json(out)))
}

#[derive(Serialize, Deserialize)]
pub struct TrialStatus {
    pub phase: Phase,
    pub fixations: usize,
    pub fixation_target: usize,
}

async fn trial_status(State(state): State<AppState>, Path((s, t)): Path<(String, usize)>) -> ServiceResult<Json<TrialStatus>> {
    let session = state.session(&s)?;
    let mut guard = lock(&session)?;
    let trial = trial_mut(&mut guard, t)?;
    Ok(Json(TrialStatus {
        phase: trial.phase,
        fixations: trial.fixations.len(),
        fixation_target: trial.plan.fixation_target,
    }))
}

fn png_response(png: Vec<u8>, extra: Option<(&'static str, String)>) -> Response {
    let mut resp = (StatusCode::OK, [(header::CONTENT_TYPE, "image/png")], png).into_response();
    if let Some((k, v)) = extra {
        if let Ok(v) = v.parse() {
            resp.headers_mut().insert(k, v);
        }
    }
    resp
}

async fn stimulus(State(state): State<AppState>, Path((s, t)): Path<(String, usize)>) -> ServiceResult<Response> {
    let id = {
        let session = state.session(&s)?;
        let mut guard = lock(&session)?;
        trial_mut(&mut guard, t)?.plan.stimulus
    };
    Ok(png_response(state.inner.stimuli.image(id)?.to_png_bytes()?, None))
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct FixationIn {
    pub x: f64,
    pub y: f64,
    pub t_ms: f64,
    #[serde(default)]
    pub duration_ms: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FixationStatus {
    Continue,
    Complete,
}

#[derive(Serialize, Deserialize)]
pub struct FixationAck {
    pub status: FixationStatus,
    pub count: usize,
    pub target: usize,
}

async fn ingest_fixation(
    State(state): State<AppState>,
    Path((s, t)): Path<(String, usize)>,
    Json(fx): Json<FixationIn>,
) -> ServiceResult<Json<FixationAck>> {
    let session = state.session(&s)?;
    let mut guard = lock(&session)?;
    let fixation_proxy = guard.config.fixation_proxy;
    let trial = trial_mut(&mut guard, t)?;
    match trial.phase {
        Phase::Viewing => {}
        Phase::ProbeShown => return Err(ServiceError::protocol("fixation-during-probe", "probe is showing")),
        _ => return Err(ServiceError::protocol("fixation-after-complete", "fixation target already reached")),
    }
    let img = state.inner.stimuli.image(trial.plan.stimulus)?;
    if !(fx.x >= 0.0 && fx.y >= 0.0 && fx.x < img.width() as f64 && fx.y < img.height() as f64) {
        return Err(ServiceError::invalid(format!("fixation ({}, {}) outside the image", fx.x, fx.y)));
    }
    if !fx.t_ms.is_finite() || trial.fixations.last().is_some_and(|f| fx.t_ms <= f.onset_ms) {
        return Err(ServiceError::invalid("fixation onsets must strictly increase"));
    }
    trial.fixations.push(Fixation {
        x: fx.x,
        y: fx.y,
        onset_ms: fx.t_ms,
        duration_ms: fx.duration_ms.unwrap_or(0.0),
    });
    let count = trial.fixations.len();
    let target = trial.plan.fixation_target;
    if count < target {
        return Ok(Json(FixationAck {
            status: FixationStatus::Continue,
            count,
            target,
        }));
    }
    trial.phase = Phase::Generating;
    let fixes = FixationSequence::new(trial.fixations.clone(), fixation_proxy)?;
    if trial.plan.condition == Condition::Original {
        let png = img.to_png_bytes()?;
        let record = generation_record(&guard.id, &guard.trials[t].plan, fixes, None, None, 0.0, false, None, Some(png_sha256(&png)));
        guard.log.append(&LogEvent::Generation(record.clone()))?;
        let trial = &mut guard.trials[t];
        trial.phase = Phase::Ready;
        trial.png = Some(Arc::new(png));
        trial.generation = Some(record);
    } else {
        let budget = Duration::from_millis(guard.config.generation_budget_ms);
        let plan = guard.trials[t].plan.clone();
        drop(guard);
        spawn_generation(state, session, plan, fixes, img, budget);
    }
    Ok(Json(FixationAck {
        status: FixationStatus::Complete,
        count,
        target,
    }))
}

#[allow(clippy::too_many_arguments)]
fn generation_record(
    session: &str,
    plan: &TrialPlan,
    fixations: FixationSequence,
    generation_fixations: Option<FixationSequence>,
    generator: Option<crate::generator::GeneratorInfo>,
    generation_ms: f64,
    budget_exceeded: bool,
    aborted: Option<String>,
    image_sha256: Option<String>,
) -> GenerationRecord {
    GenerationRecord {
        schema_version: SCHEMA_VERSION,
        session: session.to_string(),
        trial: plan.trial,
        stimulus: plan.stimulus,
        condition: plan.condition,
        fixation_target: plan.fixation_target,
        seed: plan.seed,
        fixations,
        generation_fixations,
        generator,
        generation_ms,
        budget_exceeded,
        aborted,
        image_sha256,
    }
}

/// Seed for the random-fixation draw of a trial.
pub fn random_fixation_seed(trial_seed: u64) -> u64 {
    seeds::derive(trial_seed, &[0x7a4d])
}

fn spawn_generation(
    state: AppState,
    session: Arc<Mutex<Session>>,
    plan: TrialPlan,
    fixes: FixationSequence,
    img: fovea_core::foveation::ImageBuffer,
    budget: Duration,
) {
    let started = Instant::now();
    let generator = state.inner.generator.clone();
    let info = generator.as_ref().map(|g| g.info());
    let patch = state.patch_size();

    // Watchdog: a trial still generating when the budget runs out is excluded.
    {
        let session = session.clone();
        let plan = plan.clone();
        let fixes = fixes.clone();
        let info = info.clone();
        tokio::spawn(async move {
            tokio::time::sleep(budget).await;
            let Ok(mut guard) = session.lock() else { return };
            if guard.trials[plan.trial].phase != Phase::Generating {
                return;
            }
            let ms = started.elapsed().as_secs_f64() * 1e3;
            let record = generation_record(&guard.id, &plan, fixes, None, info, ms, true, None, None);
            if let Err(e) = guard.log.append(&LogEvent::Generation(record.clone())) {
                tracing::error!("log write failed: {e}");
            }
            let trial = &mut guard.trials[plan.trial];
            trial.phase = Phase::BudgetExceeded;
            trial.generation = Some(record);
        });
    }

    let pool = state.inner.pool.clone();
    tokio::spawn(async move {
        let Ok(_permit) = pool.acquire_owned().await else { return };
        let job_fixes = fixes.clone();
        let job_plan = plan.clone();
        let result = tokio::task::spawn_blocking(move || -> fovea_core::Result<(Vec<u8>, Option<FixationSequence>)> {
            let generator = generator.ok_or_else(|| fovea_core::Error::Config("no generator".into()))?;
            let gen_fixes = if job_plan.condition == Condition::Random {
                let r = sample_random_fixations(job_plan.fixation_target, img.width(), patch, random_fixation_seed(job_plan.seed))?;
                Some(FixationSequence {
                    source: FixationSource::Random,
                    ..r
                })
            } else {
                None
            };
            let used = gen_fixes.as_ref().unwrap_or(&job_fixes);
            let out = generator.generate(&img, used, job_plan.condition, job_plan.seed)?;
            Ok((out.to_png_bytes()?, gen_fixes))
        })
        .await;
        let ms = started.elapsed().as_secs_f64() * 1e3;
        let Ok(mut guard) = session.lock() else { return };
        if guard.trials[plan.trial].phase != Phase::Generating {
            return;
        }
        let (record, png) = match result {
            Ok(Ok((png, gen_fixes))) => {
                let over = ms > budget.as_secs_f64() * 1e3;
                let sha = png_sha256(&png);
                (generation_record(&guard.id, &plan, fixes, gen_fixes, info, ms, over, None, Some(sha)), (!over).then_some(png))
            }
            Ok(Err(e)) => (generation_record(&guard.id, &plan, fixes, None, info, ms, false, Some(e.to_string()), None), None),
            Err(e) => (generation_record(&guard.id, &plan, fixes, None, info, ms, false, Some(e.to_string()), None), None),
        };
        if let Some(reason) = &record.aborted {
            tracing::error!("trial {} aborted: {reason}", plan.trial);
        }
        if let Err(e) = guard.log.append(&LogEvent::Generation(record.clone())) {
            tracing::error!("log write failed: {e}");
        }
        let trial = &mut guard.trials[plan.trial];
        trial.phase = if record.aborted.is_some() {
            Phase::Aborted
        } else if record.budget_exceeded {
            Phase::BudgetExceeded
        } else {
            Phase::Ready
        };
        trial.png = png.map(Arc::new);
        trial.generation = Some(record);
    });
}

#[derive(Serialize, Deserialize)]
pub struct Pending {
    pub status: &'static str,
}

async fn probe(State(state): State<AppState>, Path((s, t)): Path<(String, usize)>) -> ServiceResult<Response> {
    let session = state.session(&s)?;
    let mut guard = lock(&session)?;
    let probe_ms = guard.config.probe_ms;
    let trial = trial_mut(&mut guard, t)?;
    match trial.phase {
        Phase::Generating => Ok((StatusCode::ACCEPTED, Json(Pending { status: "pending" })).into_response()),
        Phase::Ready => {
            let png = trial.png.as_ref().map(|p| p.as_ref().clone()).unwrap_or_default();
            trial.phase = Phase::ProbeShown;
            Ok(png_response(png, Some(("x-probe-ms", probe_ms.to_string()))))
        }
        Phase::Viewing => Err(ServiceError::protocol("not-ready", "fixation target not reached")),
        Phase::BudgetExceeded => Err(ServiceError::protocol("budget-exceeded", "generation exceeded its budget; trial excluded")),
        Phase::Aborted => Err(ServiceError::protocol("trial-aborted", "generation failed; trial aborted")),
        Phase::ProbeShown | Phase::Done => Err(ServiceError::protocol("probe-already-shown", "the probe is shown once")),
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct ResponseIn {
    pub response: RecordedResponse,
    pub rt_ms: Option<f64>,
}

async fn record_response(
    State(state): State<AppState>,
    Path((s, t)): Path<(String, usize)>,
    Json(r): Json<ResponseIn>,
) -> ServiceResult<Json<TrialRecord>> {
    let session = state.session(&s)?;
    let mut guard = lock(&session)?;
    let window = guard.config.response_window_ms as f64;
    let probe_ms = guard.config.probe_ms;
    let log = guard.log.clone();
    let trial = trial_mut(&mut guard, t)?;
    match trial.phase {
        Phase::ProbeShown => {}
        Phase::Done => return Err(ServiceError::protocol("duplicate-response", "trial already answered")),
        _ => return Err(ServiceError::protocol("probe-not-shown", "responses are accepted after the probe")),
    }
    if let Some(rt) = r.rt_ms {
        if !(rt.is_finite() && rt >= 0.0) {
            return Err(ServiceError::invalid("rt_ms must be a non-negative number"));
        }
    }
    let (response, rt_ms) = match (r.response, r.rt_ms) {
        (RecordedResponse::NoResponse, _) | (_, None) => (RecordedResponse::NoResponse, None),
        (_, Some(rt)) if rt > window => (RecordedResponse::NoResponse, None),
        (resp, Some(rt)) => (resp, Some(rt)),
    };
    let generation = trial
        .generation
        .clone()
        .ok_or_else(|| ServiceError::internal("probe shown without a generation record"))?;
    let record = TrialRecord {
        generation,
        probe_ms,
        response,
        rt_ms,
    };
    log.append(&LogEvent::Response(record.clone()))?;
    trial.phase = Phase::Done;
    Ok(Json(record))
}

async fn export(State(state): State<AppState>, Path(s): Path<String>) -> ServiceResult<Response> {
    state.session(&s)?;
    let bytes = std::fs::read(state.log_path(&s))?;
    Ok((StatusCode::OK, [(header::CONTENT_TYPE, "application/x-ndjson")], bytes).into_response())
}
