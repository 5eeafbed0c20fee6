//! HTTP/JSON session service. Sessions live in memory and are persisted as
//! append-only event logs under `<data_dir>/sessions/<id>.jsonl`; on startup
//! every log is replayed, so the process holds no state of its own.
//!
//! All compute (session steps, rendering, replays) runs on the blocking pool.
//! Mutations of one session are serialized by that session's mutex, which also
//! guards its single log writer.

use std::collections::BTreeMap;
use std::convert::Infallible;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};

use axum::extract::{Path as UrlPath, Query as UrlQuery, State};
use axum::http::{header, HeaderValue, StatusCode};
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;
use tokio::net::TcpListener;

use hetswarm::archive::Archive;
use hetswarm::hil::{ChemistrySelection, HilSession, Protocol, SessionStatus};
use hetswarm::render::render_trajectory;
use hetswarm::{simulate, Genome, Representation, SimConfig};
use hetswarm_api::{
    replay_frames, ArchiveInfo, ArchiveList, CreateSession, ErrorBody, ErrorDetail, FinishBody,
    GridResponse, Health, HilnsResponseBody, LabelBody, QueriesResponse, QueryView, ReplayDone,
    ReplayMeta, ReplayRequest, SelectionBody, SessionList, SessionState, SessionSummary, SlotView,
    API_VERSION, GENERATION_HEADER,
};

mod error;

pub use error::ApiError;

/// Environment variable overriding the data directory.
pub const DATA_DIR_ENV: &str = "HETSWARM_DATA_DIR";
pub const DEFAULT_DATA_DIR: &str = "hetswarm-data";
pub const DEFAULT_THUMBNAIL_RESOLUTION: u32 = 128;
pub const MAX_THUMBNAIL_RESOLUTION: u32 = 1024;

/// `$HETSWARM_DATA_DIR` if set, else `fallback`, else [`DEFAULT_DATA_DIR`].
pub fn data_dir_from_env(fallback: Option<PathBuf>) -> PathBuf {
    std::env::var_os(DATA_DIR_ENV)
        .map(PathBuf::from)
        .or(fallback)
        .unwrap_or_else(|| PathBuf::from(DEFAULT_DATA_DIR))
}

type SessionRef = Arc<Mutex<HilSession>>;

struct Inner {
    data_dir: PathBuf,
    sessions: RwLock<BTreeMap<String, SessionRef>>,
}

#[derive(Clone)]
pub struct AppState {
    inner: Arc<Inner>,
}

/// A session log that could not be replayed at startup.
#[derive(Debug)]
pub struct RestoreFailure {
    pub path: PathBuf,
    pub error: hetswarm::Error,
}

impl AppState {
    /// Creates the directory layout and replays every session log. Logs that
    /// fail to replay are skipped and reported.
    pub fn open(data_dir: impl Into<PathBuf>) -> hetswarm::Result<(Self, Vec<RestoreFailure>)> {
        let data_dir = data_dir.into();
        std::fs::create_dir_all(data_dir.join("sessions"))?;
        std::fs::create_dir_all(data_dir.join("archives"))?;
        let mut sessions = BTreeMap::new();
        let mut failures = Vec::new();
        let mut logs: Vec<PathBuf> = std::fs::read_dir(data_dir.join("sessions"))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
            .collect();
        logs.sort();
        for path in logs {
            match HilSession::open_log(&path) {
                Ok(s) => {
                    sessions.insert(s.id().to_string(), Arc::new(Mutex::new(s)));
                }
                Err(error) => failures.push(RestoreFailure { path, error }),
            }
        }
        let state = AppState {
            inner: Arc::new(Inner {
                data_dir,
                sessions: RwLock::new(sessions),
            }),
        };
        Ok((state, failures))
    }

    pub fn data_dir(&self) -> &Path {
        &self.inner.data_dir
    }

    pub fn archives_dir(&self) -> PathBuf {
        self.inner.data_dir.join("archives")
    }

    pub fn session_ids(&self) -> Vec<String> {
        self.read_sessions().keys().cloned().collect()
    }

    fn read_sessions(&self) -> std::sync::RwLockReadGuard<'_, BTreeMap<String, SessionRef>> {
        self.inner.sessions.read().unwrap_or_else(|e| e.into_inner())
    }

    fn session(&self, id: &str) -> Result<SessionRef, ApiError> {
        self.read_sessions()
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::not_found(format!("no session {id:?}")))
    }

    fn log_path(&self, id: &str) -> PathBuf {
        self.inner.data_dir.join("sessions").join(format!("{id}.jsonl"))
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/v1/health", get(health))
        .route("/v1/sessions", get(list_sessions).post(create_session))
        .route("/v1/sessions/{id}", get(get_session))
        .route("/v1/sessions/{id}/queries", get(get_queries))
        .route("/v1/sessions/{id}/grid", get(get_grid))
        .route("/v1/sessions/{id}/thumbnails/{index}", get(get_thumbnail))
        .route("/v1/sessions/{id}/replay/{index}", get(session_replay))
        .route("/v1/sessions/{id}/responses", post(post_response))
        .route("/v1/sessions/{id}/selections", post(post_selection))
        .route("/v1/sessions/{id}/labels", post(post_label))
        .route("/v1/sessions/{id}/finish", post(post_finish))
        .route("/v1/sessions/{id}/taxonomy", get(get_taxonomy))
        .route("/v1/sessions/{id}/events", get(get_events))
        .route("/v1/sessions/{id}/archive", get(get_session_archive))
        .route("/v1/replay", get(replay_get).post(replay_post))
        .route("/v1/archives", get(list_archives))
        .route("/v1/archives/{name}", get(get_archive))
        .with_state(state)
}

/// Serves on an already-bound listener until the task is dropped.
pub async fn serve_on(listener: TcpListener, state: AppState) -> std::io::Result<()> {
    axum::serve(listener, router(state)).await
}

/// Opens the data directory, binds `addr` and serves. Restore failures are
/// reported on stderr.
pub async fn serve(addr: SocketAddr, data_dir: PathBuf) -> std::io::Result<()> {
    let (state, failures) = tokio::task::spawn_blocking(move || AppState::open(data_dir))
        .await
        .map_err(std::io::Error::other)?
        .map_err(std::io::Error::other)?;
    for f in &failures {
        eprintln!("warning: skipped session log {}: {}", f.path.display(), f.error);
    }
    let listener = TcpListener::bind(addr).await?;
    eprintln!(
        "hetswarm service listening on http://{} (data dir {}, {} sessions restored)",
        listener.local_addr()?,
        state.data_dir().display(),
        state.session_ids().len()
    );
    serve_on(listener, state).await
}

async fn blocking<T, F>(f: F) -> Result<T, ApiError>
where
    F: FnOnce() -> Result<T, ApiError> + Send + 'static,
    T: Send + 'static,
{
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::internal(format!("worker failed: {e}")))?
}

fn lock(s: &SessionRef) -> std::sync::MutexGuard<'_, HilSession> {
    s.lock().unwrap_or_else(|e| e.into_inner())
}

fn thumbnail_url(id: &str, generation: usize, index: usize) -> String {
    format!("/v1/sessions/{id}/thumbnails/{index}?generation={generation}")
}

fn query_views(s: &HilSession) -> Vec<QueryView> {
    if s.protocol() != Protocol::Hilns || s.status() != SessionStatus::AwaitingHuman {
        return Vec::new();
    }
    s.pending_queries()
        .map(|qs| {
            qs.iter()
                .enumerate()
                .map(|(i, q)| QueryView {
                    query: q.clone(),
                    thumbnail: thumbnail_url(s.id(), s.generation(), i),
                })
                .collect()
        })
        .unwrap_or_default()
}

fn slot_views(s: &HilSession) -> Vec<SlotView> {
    s.grid()
        .map(|g| {
            g.iter()
                .map(|slot| SlotView {
                    slot: slot.clone(),
                    thumbnail: thumbnail_url(s.id(), s.generation(), slot.index),
                })
                .collect()
        })
        .unwrap_or_default()
}

fn session_state(s: &HilSession) -> SessionState {
    SessionState {
        api_version: API_VERSION,
        session_id: s.id().to_string(),
        protocol: s.protocol(),
        status: s.status(),
        generation: s.generation(),
        max_generations: s.config().max_generations,
        seed: s.config().seed,
        saved: s.saved().to_vec(),
        queries: query_views(s),
        grid: slot_views(s),
        event_count: s.events().len(),
    }
}

/// Rejects a stale counter or a finished session with `409 Conflict`.
fn check_generation(s: &HilSession, generation: usize) -> Result<(), ApiError> {
    if s.status() == SessionStatus::Finished {
        return Err(ApiError::conflict("session_finished", "session is finished", s.generation()));
    }
    if generation != s.generation() {
        return Err(ApiError::conflict(
            "stale_generation",
            format!(
                "request is for generation {generation} but the session is at {}",
                s.generation()
            ),
            s.generation(),
        ));
    }
    Ok(())
}

fn valid_id(id: &str) -> bool {
    !id.is_empty()
        && id.len() <= 64
        && id.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_')
}

fn with_generation(mut resp: Response, generation: usize) -> Response {
    resp.headers_mut()
        .insert(GENERATION_HEADER, HeaderValue::from(generation as u64));
    resp
}

fn jsonl(bytes: Vec<u8>) -> Response {
    ([(header::CONTENT_TYPE, "application/x-ndjson")], bytes).into_response()
}

async fn health(State(state): State<AppState>) -> Json<Health> {
    Json(Health {
        api_version: API_VERSION,
        status: "ok".into(),
        sessions: state.read_sessions().len(),
    })
}

async fn list_sessions(State(state): State<AppState>) -> Result<Json<SessionList>, ApiError> {
    let sessions: Vec<SessionRef> = state.read_sessions().values().cloned().collect();
    let list = blocking(move || {
        Ok(sessions
            .iter()
            .map(|s| {
                let s = lock(s);
                SessionSummary {
                    session_id: s.id().to_string(),
                    protocol: s.protocol(),
                    status: s.status(),
                    generation: s.generation(),
                    saved: s.saved().len(),
                }
            })
            .collect())
    })
    .await?;
    Ok(Json(SessionList {
        api_version: API_VERSION,
        sessions: list,
    }))
}

async fn create_session(
    State(state): State<AppState>,
    Json(body): Json<CreateSession>,
) -> Result<(StatusCode, Json<SessionState>), ApiError> {
    let id = match &body.session_id {
        Some(id) if !valid_id(id) => {
            return Err(ApiError::bad_request(
                "invalid_session_id",
                "session ids are 1-64 characters of [A-Za-z0-9_-]",
            ))
        }
        Some(id) => id.clone(),
        None => format!("{:016x}", rand::random::<u64>()),
    };
    if state.read_sessions().contains_key(&id) || state.log_path(&id).exists() {
        return Err(ApiError::conflict("session_exists", format!("session {id:?} already exists"), 0));
    }
    let config = body.resolved_config();
    let path = state.log_path(&id);
    let session = blocking(move || {
        let mut s = HilSession::create(id, config)?;
        s.persist_to(&path)?;
        Ok(s)
    })
    .await?;
    let view = session_state(&session);
    let mut map = state.inner.sessions.write().unwrap_or_else(|e| e.into_inner());
    if map.contains_key(session.id()) {
        return Err(ApiError::conflict("session_exists", "session created concurrently", 0));
    }
    map.insert(session.id().to_string(), Arc::new(Mutex::new(session)));
    Ok((StatusCode::CREATED, Json(view)))
}

async fn get_session(
    State(state): State<AppState>,
    UrlPath(id): UrlPath<String>,
) -> Result<Json<SessionState>, ApiError> {
    let s = state.session(&id)?;
    Ok(Json(blocking(move || Ok(session_state(&lock(&s)))).await?))
}

async fn get_queries(
    State(state): State<AppState>,
    UrlPath(id): UrlPath<String>,
) -> Result<Json<QueriesResponse>, ApiError> {
    let s = state.session(&id)?;
    blocking(move || {
        let s = lock(&s);
        if s.protocol() != Protocol::Hilns {
            return Err(ApiError::bad_request("wrong_protocol", "queries exist only in hilns sessions"));
        }
        Ok(Json(QueriesResponse {
            api_version: API_VERSION,
            session_id: s.id().to_string(),
            generation: s.generation(),
            queries: query_views(&s),
        }))
    })
    .await
}

async fn get_grid(
    State(state): State<AppState>,
    UrlPath(id): UrlPath<String>,
) -> Result<Json<GridResponse>, ApiError> {
    let s = state.session(&id)?;
    blocking(move || {
        let s = lock(&s);
        if s.protocol() != Protocol::Chemistry {
            return Err(ApiError::bad_request("wrong_protocol", "the grid exists only in chemistry sessions"));
        }
        Ok(Json(GridResponse {
            api_version: API_VERSION,
            session_id: s.id().to_string(),
            generation: s.generation(),
            grid: slot_views(&s),
        }))
    })
    .await
}

#[derive(Debug, Deserialize)]
struct ThumbnailParams {
    mode: Option<Representation>,
    resolution: Option<u32>,
    generation: Option<usize>,
}

/// Genome, seed and simulation settings of a query/grid card, read under the
/// session lock so rendering can happen without it.
fn card(
    s: &HilSession,
    index: usize,
    generation: Option<usize>,
) -> Result<(Genome, u64, SimConfig, usize), ApiError> {
    if let Some(g) = generation {
        if g != s.generation() {
            return Err(ApiError::conflict(
                "stale_generation",
                format!("card requested for generation {g}, session is at {}", s.generation()),
                s.generation(),
            ));
        }
    }
    let (genome, seed) = match s.protocol() {
        Protocol::Hilns => {
            let q = s
                .pending_queries()
                .map_err(ApiError::from)?
                .get(index)
                .ok_or_else(|| ApiError::not_found(format!("no query {index}")))?;
            (q.genome, q.seed)
        }
        Protocol::Chemistry => {
            let slot = s
                .grid()
                .map_err(ApiError::from)?
                .get(index)
                .ok_or_else(|| ApiError::not_found(format!("no grid slot {index}")))?;
            (slot.genome, slot.seed)
        }
    };
    Ok((genome, seed, s.config().sim.clone(), s.generation()))
}

async fn get_thumbnail(
    State(state): State<AppState>,
    UrlPath((id, index)): UrlPath<(String, usize)>,
    UrlQuery(params): UrlQuery<ThumbnailParams>,
) -> Result<Response, ApiError> {
    let s = state.session(&id)?;
    let resolution = params.resolution.unwrap_or(DEFAULT_THUMBNAIL_RESOLUTION);
    if resolution == 0 || resolution > MAX_THUMBNAIL_RESOLUTION {
        return Err(ApiError::bad_request(
            "invalid_resolution",
            format!("resolution must lie in 1..={MAX_THUMBNAIL_RESOLUTION}"),
        ));
    }
    let mode = params.mode.unwrap_or(Representation::Aware);
    let (png, generation) = blocking(move || {
        let (genome, seed, sim, generation) = card(&lock(&s), index, params.generation)?;
        let traj = simulate(&genome, &sim, seed)?;
        Ok((render_trajectory(&traj, mode, resolution)?.to_png_bytes()?, generation))
    })
    .await?;
    Ok(with_generation(
        ([(header::CONTENT_TYPE, "image/png")], png).into_response(),
        generation,
    ))
}

fn replay_stream(genome: Genome, seed: u64, stride: usize, sim: SimConfig) -> Result<Response, ApiError> {
    let traj = simulate(&genome, &sim, seed)?;
    let frames = replay_frames(&traj, stride);
    let meta = ReplayMeta {
        api_version: API_VERSION,
        genome,
        seed,
        stride: stride.max(1),
        sim,
        frames: frames.len(),
    };
    let done = ReplayDone { frames: frames.len() };
    let mut events = Vec::with_capacity(frames.len() + 2);
    events.push(Event::default().event("meta").json_data(&meta));
    events.extend(frames.iter().map(|f| Event::default().event("frame").json_data(f)));
    events.push(Event::default().event("done").json_data(&done));
    let events = events
        .into_iter()
        .collect::<Result<Vec<Event>, _>>()
        .map_err(|e| ApiError::internal(format!("encoding replay: {e}")))?;
    let stream = futures::stream::iter(events.into_iter().map(Ok::<_, Infallible>));
    Ok(Sse::new(stream).keep_alive(KeepAlive::default()).into_response())
}

#[derive(Debug, Deserialize)]
struct ReplayParams {
    /// Nine comma-separated values.
    genome: String,
    seed: u64,
    stride: Option<usize>,
    /// A JSON-encoded simulation configuration.
    sim: Option<String>,
}

async fn replay_get(UrlQuery(p): UrlQuery<ReplayParams>) -> Result<Response, ApiError> {
    let values: Vec<f64> = p
        .genome
        .split(',')
        .map(|v| v.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|e| ApiError::bad_request("invalid_genome", format!("genome: {e}")))?;
    let genome = Genome::from_slice(&values)?;
    let sim = match p.sim {
        Some(s) => serde_json::from_str(&s)
            .map_err(|e| ApiError::bad_request("invalid_config", format!("sim: {e}")))?,
        None => SimConfig::default(),
    };
    let stride = p.stride.unwrap_or(1);
    blocking(move || replay_stream(genome, p.seed, stride, sim)).await
}

async fn replay_post(Json(req): Json<ReplayRequest>) -> Result<Response, ApiError> {
    let sim = req.sim.unwrap_or_default();
    blocking(move || replay_stream(req.genome, req.seed, req.stride, sim)).await
}

#[derive(Debug, Deserialize)]
struct StrideParams {
    stride: Option<usize>,
    generation: Option<usize>,
}

async fn session_replay(
    State(state): State<AppState>,
    UrlPath((id, index)): UrlPath<(String, usize)>,
    UrlQuery(p): UrlQuery<StrideParams>,
) -> Result<Response, ApiError> {
    let s = state.session(&id)?;
    blocking(move || {
        let (genome, seed, sim, generation) = card(&lock(&s), index, p.generation)?;
        Ok(with_generation(
            replay_stream(genome, seed, p.stride.unwrap_or(1), sim)?,
            generation,
        ))
    })
    .await
}

async fn mutate(
    state: AppState,
    id: String,
    f: impl FnOnce(&mut HilSession) -> Result<(), ApiError> + Send + 'static,
) -> Result<Json<SessionState>, ApiError> {
    let s = state.session(&id)?;
    blocking(move || {
        let mut s = lock(&s);
        f(&mut s)?;
        Ok(Json(session_state(&s)))
    })
    .await
}

async fn post_response(
    State(state): State<AppState>,
    UrlPath(id): UrlPath<String>,
    Json(body): Json<HilnsResponseBody>,
) -> Result<Json<SessionState>, ApiError> {
    mutate(state, id, move |s| {
        if s.protocol() != Protocol::Hilns {
            return Err(ApiError::bad_request("wrong_protocol", "responses apply to hilns sessions"));
        }
        check_generation(s, body.generation)?;
        Ok(s.respond(&body.saved)?)
    })
    .await
}

async fn post_selection(
    State(state): State<AppState>,
    UrlPath(id): UrlPath<String>,
    Json(body): Json<SelectionBody>,
) -> Result<Json<SessionState>, ApiError> {
    mutate(state, id, move |s| {
        if s.protocol() != Protocol::Chemistry {
            return Err(ApiError::bad_request("wrong_protocol", "selections apply to chemistry sessions"));
        }
        check_generation(s, body.generation)?;
        Ok(s.advance(ChemistrySelection {
            selected: body.selected,
            saved: body.saved,
        })?)
    })
    .await
}

async fn post_label(
    State(state): State<AppState>,
    UrlPath(id): UrlPath<String>,
    Json(body): Json<LabelBody>,
) -> Result<Json<SessionState>, ApiError> {
    mutate(state, id, move |s| {
        if let Some(g) = body.generation {
            if g != s.generation() {
                return Err(ApiError::conflict(
                    "stale_generation",
                    format!("request is for generation {g} but the session is at {}", s.generation()),
                    s.generation(),
                ));
            }
        }
        Ok(s.label(body.index, &body.label)?)
    })
    .await
}

async fn post_finish(
    State(state): State<AppState>,
    UrlPath(id): UrlPath<String>,
    Json(body): Json<FinishBody>,
) -> Result<Json<SessionState>, ApiError> {
    mutate(state, id, move |s| {
        check_generation(s, body.generation)?;
        Ok(s.finish(&body.saved)?)
    })
    .await
}

async fn get_taxonomy(
    State(state): State<AppState>,
    UrlPath(id): UrlPath<String>,
) -> Result<Response, ApiError> {
    let s = state.session(&id)?;
    let (bytes, generation) = blocking(move || {
        let s = lock(&s);
        Ok((s.export_taxonomy().to_bytes()?, s.generation()))
    })
    .await?;
    Ok(with_generation(jsonl(bytes), generation))
}

async fn get_events(
    State(state): State<AppState>,
    UrlPath(id): UrlPath<String>,
) -> Result<Response, ApiError> {
    let s = state.session(&id)?;
    let (bytes, generation) = blocking(move || {
        let s = lock(&s);
        Ok((s.log_bytes()?, s.generation()))
    })
    .await?;
    Ok(with_generation(jsonl(bytes), generation))
}

async fn get_session_archive(
    State(state): State<AppState>,
    UrlPath(id): UrlPath<String>,
) -> Result<Response, ApiError> {
    let s = state.session(&id)?;
    let (bytes, generation) = blocking(move || {
        let s = lock(&s);
        let archive = s
            .archive()
            .ok_or_else(|| ApiError::bad_request("wrong_protocol", "only hilns sessions keep an archive"))?;
        Ok((archive.to_bytes()?, s.generation()))
    })
    .await?;
    Ok(with_generation(jsonl(bytes), generation))
}

fn archive_path(state: &AppState, name: &str) -> Result<PathBuf, ApiError> {
    let ok = name.ends_with(".jsonl")
        && !name.starts_with('.')
        && name
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'));
    if !ok {
        return Err(ApiError::not_found(format!("no archive {name:?}")));
    }
    Ok(state.archives_dir().join(name))
}

async fn list_archives(State(state): State<AppState>) -> Result<Json<ArchiveList>, ApiError> {
    let dir = state.archives_dir();
    let archives = blocking(move || {
        let mut out = Vec::new();
        let mut paths: Vec<PathBuf> = std::fs::read_dir(&dir)
            .map_err(hetswarm::Error::from)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
            .collect();
        paths.sort();
        for p in paths {
            // files that are not archives are simply not listed
            let Ok(a) = Archive::load(&p) else { continue };
            out.push(ArchiveInfo {
                name: p.file_name().unwrap_or_default().to_string_lossy().into_owned(),
                bytes: std::fs::metadata(&p).map(|m| m.len()).unwrap_or(0),
                entries: a.len(),
                dim: a.dim(),
            });
        }
        Ok(out)
    })
    .await?;
    Ok(Json(ArchiveList {
        api_version: API_VERSION,
        archives,
    }))
}

async fn get_archive(
    State(state): State<AppState>,
    UrlPath(name): UrlPath<String>,
) -> Result<Response, ApiError> {
    let path = archive_path(&state, &name)?;
    let bytes = blocking(move || {
        std::fs::read(&path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => ApiError::not_found(format!("no archive {name:?}")),
            _ => hetswarm::Error::from(e).into(),
        })
    })
    .await?;
    Ok(jsonl(bytes))
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = ErrorBody {
            api_version: API_VERSION,
            error: ErrorDetail {
                code: self.code.clone(),
                message: self.message.clone(),
            },
            generation: self.generation,
        };
        (self.status, Json(body)).into_response()
    }
}
