//! HTTP+JSON API over the engine and the session store.

use std::collections::HashMap;
use std::fs;
use std::path::PathBuf;
use std::str::FromStr;
use std::sync::{Arc, Mutex, RwLock};
use std::time::{SystemTime, UNIX_EPOCH};

use axum::body::Bytes;
use axum::extract::{FromRequest, Multipart, Path, Query, Request, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use micoach_core::engine::{
    advance, session_progress, Bindings, EngineError, EventKind, Mode, OptionView, Program, ProgressView,
    SessionState, SessionStatus, TraineeEvent, TurnEvent,
};
use micoach_core::persistence::{script_key, ExportFormat, SessionMeta, Store, StoreError};
use micoach_core::script::{self, Location, Template, ValidationReport};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

/// Milliseconds since the epoch. Injected so tests control time.
pub type Clock = Arc<dyn Fn() -> u64 + Send + Sync>;

pub fn system_clock() -> Clock {
    Arc::new(|| SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_millis() as u64))
}

const MAX_SCRIPT_BYTES: usize = 1 << 20;

#[derive(Debug, Clone, Serialize)]
pub struct ApiError {
    #[serde(skip)]
    pub status: StatusCode,
    pub code: String,
    pub message: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub location: Option<Box<Location>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub report: Option<Box<ValidationReport>>,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &str, message: impl Into<String>) -> Self {
        ApiError { status, code: code.into(), message: message.into(), location: None, report: None }
    }

    fn unknown_session(id: &str) -> Self {
        ApiError::new(StatusCode::NOT_FOUND, "UNKNOWN_SESSION", format!("unknown session '{id}'"))
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(&self)).into_response()
    }
}

impl From<EngineError> for ApiError {
    fn from(e: EngineError) -> Self {
        let status = match e {
            EngineError::UnknownOption(_) | EngineError::ChoiceRequired | EngineError::MissingBinding(_) => {
                StatusCode::BAD_REQUEST
            }
            EngineError::ChoiceNotExpected | EngineError::EngineHalted => StatusCode::CONFLICT,
            EngineError::UnvalidatedScript(_) => StatusCode::UNPROCESSABLE_ENTITY,
            EngineError::StepBoundExceeded(_) | EngineError::InconsistentState(_) => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError::new(status, e.code(), e.to_string())
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        let status = match &e {
            StoreError::Replay(inner) => return inner.clone().into(),
            StoreError::UnknownSession(_) | StoreError::UnknownUser(_) => StatusCode::NOT_FOUND,
            StoreError::InvalidId(_) => StatusCode::BAD_REQUEST,
            StoreError::Duplicate(_) | StoreError::SeqGap { .. } => StatusCode::CONFLICT,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        if status == StatusCode::INTERNAL_SERVER_ERROR {
            tracing::error!(error = %e, "store failure");
        }
        ApiError::new(status, e.code(), e.to_string())
    }
}

type ApiResult<T> = Result<T, ApiError>;

struct Live {
    program: Arc<Program>,
    state: SessionState,
    last_ts: u64,
}

pub struct AppState {
    store: Store,
    default_script: String,
    scripts: RwLock<HashMap<String, Arc<Program>>>,
    sessions: Mutex<HashMap<String, Arc<Mutex<Option<Live>>>>>,
    clock: Clock,
    admin_token: Option<String>,
}

impl AppState {
    /// `curriculum` is the default script for new sessions. Scripts uploaded
    /// earlier are reloaded from the data directory.
    pub fn new(store: Store, curriculum: Program, admin_token: Option<String>, clock: Clock) -> Result<Self, StoreError> {
        let default_script = script_key(&curriculum);
        let mut scripts = HashMap::from([(default_script.clone(), Arc::new(curriculum))]);
        let dir = scripts_dir(&store);
        fs::create_dir_all(&dir)?;
        for entry in fs::read_dir(&dir)? {
            let path = entry?.path();
            if path.extension().and_then(|e| e.to_str()) != Some("miscript") {
                continue;
            }
            let loaded = fs::read_to_string(&path)
                .map_err(|e| e.to_string())
                .and_then(|src| script::parse(&src).map_err(|e| e.to_string()))
                .and_then(|ast| Program::new(ast).map_err(|e| e.to_string()));
            match loaded {
                Ok(program) => {
                    scripts.entry(script_key(&program)).or_insert_with(|| Arc::new(program));
                }
                Err(e) => tracing::warn!(path = %path.display(), error = %e, "skipping stored script"),
            }
        }
        Ok(AppState {
            store,
            default_script,
            scripts: RwLock::new(scripts),
            sessions: Mutex::default(),
            clock,
            admin_token: admin_token.filter(|t| !t.is_empty()),
        })
    }

    pub fn store(&self) -> &Store {
        &self.store
    }

    fn program(&self, key: &str) -> Option<Arc<Program>> {
        self.scripts.read().expect("scripts lock").get(key).cloned()
    }

    fn require_admin(&self, headers: &HeaderMap) -> ApiResult<()> {
        let Some(token) = &self.admin_token else {
            return Err(ApiError::new(StatusCode::FORBIDDEN, "ADMIN_DISABLED", "no admin token is configured"));
        };
        let presented = headers
            .get(header::AUTHORIZATION)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.strip_prefix("Bearer "));
        if presented == Some(token.as_str()) {
            Ok(())
        } else {
            Err(ApiError::new(StatusCode::UNAUTHORIZED, "UNAUTHORIZED", "missing or invalid bearer token"))
        }
    }

    /// Run `f` with exclusive access to a session, loading it from the
    /// store on first use.
    fn with_session<T>(&self, id: &str, f: impl FnOnce(&mut Live) -> ApiResult<T>) -> ApiResult<T> {
        if !self.store.session_exists(id) {
            return Err(ApiError::unknown_session(id));
        }
        let slot = self.sessions.lock().expect("sessions lock").entry(id.to_string()).or_default().clone();
        let mut guard = slot.lock().expect("session lock");
        if guard.is_none() {
            let meta = self.store.session_meta(id)?;
            let program = self.program(&meta.script).ok_or_else(|| {
                ApiError::new(
                    StatusCode::INTERNAL_SERVER_ERROR,
                    "SCRIPT_UNAVAILABLE",
                    format!("script '{}' for session '{id}' is not loaded", meta.script),
                )
            })?;
            let (state, log) = self.store.load_session(&program, id)?;
            let last_ts = log.records.last().map_or(0, |r| r.ts);
            *guard = Some(Live { program, state, last_ts });
        }
        f(guard.as_mut().expect("loaded above"))
    }
}

fn scripts_dir(store: &Store) -> PathBuf {
    store.root().join("scripts")
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/healthz", get(|| async { Json(json!({"status": "ok"})) }))
        .route("/api/sessions", post(create_session))
        .route("/api/sessions/{id}", get(get_session))
        .route("/api/sessions/{id}/turn", get(get_turn))
        .route("/api/sessions/{id}/choice", post(post_choice))
        .route("/api/sessions/{id}/progress", get(get_progress))
        .route("/api/sessions/{id}/export", get(get_export))
        .route("/api/scripts", post(upload_script))
        .fallback(|| async { ApiError::new(StatusCode::NOT_FOUND, "NOT_FOUND", "no such endpoint") })
        .with_state(state)
}

/// What trainees see after each request. Events never carry adherence.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TurnView {
    pub session_id: String,
    pub status: SessionStatus,
    pub last_seq: u64,
    pub events: Vec<TraineeEvent>,
    pub options: Vec<OptionView>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ApiSession {
    pub session_id: String,
    pub user_id: Option<String>,
    pub mode: Mode,
    pub script: String,
    pub created_at: u64,
    pub status: SessionStatus,
}

fn turn_view(id: &str, state: &SessionState, events: &[TurnEvent], pending_menu: Option<&TurnEvent>) -> TurnView {
    let options = match (state.status, pending_menu) {
        (SessionStatus::AwaitingChoice, Some(menu)) => menu.options.clone().unwrap_or_default(),
        _ => Vec::new(),
    };
    TurnView {
        session_id: id.to_string(),
        status: state.status,
        last_seq: state.last_seq,
        events: events.iter().map(TurnEvent::trainee_view).collect(),
        options,
    }
}

fn bad_request(code: &str, message: impl Into<String>) -> ApiError {
    ApiError::new(StatusCode::BAD_REQUEST, code, message)
}

fn parse_bindings(v: Option<&Value>) -> ApiResult<Bindings> {
    let Some(v) = v.filter(|v| !v.is_null()) else { return Ok(Bindings::new()) };
    let obj = v.as_object().ok_or_else(|| bad_request("INVALID_BINDINGS", "bindings must be an object"))?;
    obj.iter()
        .map(|(k, v)| {
            if !Template::parse(&format!("{{{k}}}")).is_ok_and(|t| t.has_placeholders()) {
                return Err(bad_request("INVALID_BINDINGS", format!("'{k}' is not a valid binding path")));
            }
            let s = v.as_str().ok_or_else(|| bad_request("INVALID_BINDINGS", format!("binding '{k}' must be a string")))?;
            Ok((k.clone(), s.to_string()))
        })
        .collect()
}

async fn create_session(State(app): State<Arc<AppState>>, body: Bytes) -> ApiResult<(StatusCode, Json<TurnView>)> {
    let body: Value =
        serde_json::from_slice(&body).map_err(|e| bad_request("INVALID_JSON", format!("request body: {e}")))?;
    let mode = body
        .get("mode")
        .and_then(Value::as_str)
        .ok_or_else(|| bad_request("INVALID_MODE", "mode is required"))?;
    let mode = Mode::from_str(mode).map_err(|e| bad_request("INVALID_MODE", e))?;
    let mut bindings = parse_bindings(body.get("bindings"))?;
    let user_id = match body.get("user_id") {
        None | Some(Value::Null) => None,
        Some(Value::String(s)) => Some(s.clone()),
        Some(_) => return Err(bad_request("INVALID_USER", "user_id must be a string")),
    };
    let script = match body.get("script") {
        None | Some(Value::Null) => app.default_script.clone(),
        Some(Value::String(s)) => s.clone(),
        Some(_) => return Err(bad_request("UNKNOWN_SCRIPT", "script must be a string")),
    };
    let program = app
        .program(&script)
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, "UNKNOWN_SCRIPT", format!("unknown script '{script}'")))?;
    let now = (app.clock)();
    if let Some(uid) = &user_id {
        match app.store.get_user(uid) {
            Ok(user) => {
                let mut merged = user.bindings;
                merged.extend(bindings);
                bindings = merged;
            }
            Err(StoreError::UnknownUser(_)) => {
                app.store.create_user(uid, bindings.clone(), now)?;
            }
            Err(e) => return Err(e.into()),
        }
    }
    let session_id = uuid::Uuid::new_v4().simple().to_string();
    let meta = SessionMeta { session_id: session_id.clone(), user_id, mode, bindings, script, created_at: now };
    let (state, events) = app.store.begin_session(&program, &meta)?;
    tracing::info!(session = %session_id, mode = %mode, "session started");
    let view = turn_view(&session_id, &state, &events, events.last());
    let slot = Arc::new(Mutex::new(Some(Live { program, state, last_ts: now })));
    app.sessions.lock().expect("sessions lock").insert(session_id, slot);
    Ok((StatusCode::CREATED, Json(view)))
}

async fn get_session(State(app): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Json<ApiSession>> {
    let status = app.with_session(&id, |live| Ok(live.state.status))?;
    let meta = app.store.session_meta(&id)?;
    Ok(Json(ApiSession {
        session_id: meta.session_id,
        user_id: meta.user_id,
        mode: meta.mode,
        script: meta.script,
        created_at: meta.created_at,
        status,
    }))
}

#[derive(Deserialize)]
struct TurnQuery {
    after: Option<u64>,
}

async fn get_turn(
    State(app): State<Arc<AppState>>,
    Path(id): Path<String>,
    Query(q): Query<TurnQuery>,
) -> ApiResult<Json<TurnView>> {
    app.with_session(&id, |live| {
        let log = app.store.read_log(&id)?;
        let after = q.after.unwrap_or(0);
        let events: Vec<TurnEvent> = log.events().filter(|e| e.seq > after).cloned().collect();
        Ok(Json(turn_view(&id, &live.state, &events, log.records.last().map(|r| &r.event))))
    })
}

#[derive(Deserialize)]
struct ChoiceBody {
    option_id: String,
    /// The last seq the client has seen; makes retries idempotent.
    #[serde(default)]
    seq: Option<u64>,
}

async fn post_choice(
    State(app): State<Arc<AppState>>,
    Path(id): Path<String>,
    body: Bytes,
) -> ApiResult<Json<TurnView>> {
    let body: ChoiceBody =
        serde_json::from_slice(&body).map_err(|e| bad_request("INVALID_JSON", format!("request body: {e}")))?;
    app.with_session(&id, |live| {
        if let Some(seq) = body.seq {
            if seq < live.state.last_seq {
                return replay_choice(&app, &id, live, seq, &body.option_id);
            }
            if seq > live.state.last_seq {
                return Err(ApiError::new(
                    StatusCode::CONFLICT,
                    "STALE_SEQ",
                    format!("seq {seq} is ahead of the session (last seq {})", live.state.last_seq),
                ));
            }
        }
        let (state, events) = advance(&live.program, &live.state, Some(&body.option_id))?;
        let ts = (app.clock)().max(live.last_ts);
        app.store.append_events(&id, ts, &events)?;
        live.state = state;
        live.last_ts = ts;
        Ok(Json(turn_view(&id, &live.state, &events, events.last())))
    })
}

/// A retried choice: answer with the events the original request produced.
fn replay_choice(app: &AppState, id: &str, live: &Live, seq: u64, option_id: &str) -> ApiResult<Json<TurnView>> {
    let log = app.store.read_log(id)?;
    let events: Vec<TurnEvent> = log.events().skip_while(|e| e.seq <= seq).cloned().collect();
    let matches = events
        .first()
        .is_some_and(|e| e.kind == EventKind::ChoiceMade && e.chosen_option() == Some(option_id));
    if !matches {
        return Err(ApiError::new(
            StatusCode::CONFLICT,
            "STALE_SEQ",
            format!("a different action already followed seq {seq}"),
        ));
    }
    let end = events.iter().skip(1).position(|e| e.kind == EventKind::ChoiceMade).map_or(events.len(), |p| p + 1);
    let batch = &events[..end];
    // the status the client would have seen after the original request
    let mut state = live.state.clone();
    if end < events.len() {
        state.status = SessionStatus::AwaitingChoice;
    }
    state.last_seq = batch.last().map_or(seq, |e| e.seq);
    Ok(Json(turn_view(id, &state, batch, batch.last())))
}

async fn get_progress(State(app): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Json<ProgressView>> {
    app.with_session(&id, |live| Ok(Json(session_progress(&live.program, &live.state))))
}

#[derive(Deserialize)]
struct ExportQuery {
    format: Option<String>,
}

async fn get_export(
    State(app): State<Arc<AppState>>,
    Path(id): Path<String>,
    Query(q): Query<ExportQuery>,
    headers: HeaderMap,
) -> ApiResult<Response> {
    app.require_admin(&headers)?;
    let format = ExportFormat::from_str(q.format.as_deref().unwrap_or("jsonl"))
        .map_err(|e| bad_request("INVALID_FORMAT", e))?;
    let bytes = app.store.export_events(&id, format)?;
    let content_type = match format {
        ExportFormat::Jsonl => "application/x-ndjson",
        ExportFormat::Csv => "text/csv; charset=utf-8",
    };
    Ok(([(header::CONTENT_TYPE, content_type)], bytes).into_response())
}

#[derive(Serialize)]
struct UploadResponse {
    script: String,
    #[serde(flatten)]
    report: ValidationReport,
}

async fn read_script_body(headers: &HeaderMap, req: Request) -> ApiResult<String> {
    let is_multipart = headers
        .get(header::CONTENT_TYPE)
        .and_then(|v| v.to_str().ok())
        .is_some_and(|v| v.starts_with("multipart/form-data"));
    let bytes = if is_multipart {
        let mut form = Multipart::from_request(req, &())
            .await
            .map_err(|e| bad_request("INVALID_UPLOAD", e.body_text()))?;
        let mut found = None;
        while let Some(field) = form.next_field().await.map_err(|e| bad_request("INVALID_UPLOAD", e.body_text()))? {
            if field.name() == Some("script") || field.file_name().is_some() {
                found = Some(field.bytes().await.map_err(|e| bad_request("INVALID_UPLOAD", e.body_text()))?);
                break;
            }
        }
        found.ok_or_else(|| bad_request("INVALID_UPLOAD", "no 'script' field in form"))?
    } else {
        axum::body::to_bytes(req.into_body(), MAX_SCRIPT_BYTES)
            .await
            .map_err(|e| bad_request("INVALID_UPLOAD", e.to_string()))?
    };
    String::from_utf8(bytes.to_vec()).map_err(|_| bad_request("INVALID_UPLOAD", "script is not UTF-8"))
}

async fn upload_script(State(app): State<Arc<AppState>>, headers: HeaderMap, req: Request) -> ApiResult<Json<Value>> {
    app.require_admin(&headers)?;
    let source = read_script_body(&headers, req).await?;
    let ast = script::parse(&source).map_err(|e| ApiError {
        location: Some(Box::new(Location { line: e.line, column: e.column, segment: None, state: None })),
        ..ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, e.kind.code(), e.to_string())
    })?;
    let report = script::validate(&ast);
    if let Some(first) = report.errors.first() {
        return Err(ApiError {
            location: Some(Box::new(first.location.clone())),
            report: Some(Box::new(report.clone())),
            ..ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, &first.code, first.message.clone())
        });
    }
    let program = Program::new(ast)?;
    let key = script_key(&program);
    {
        let mut scripts = app.scripts.write().expect("scripts lock");
        match scripts.get(&key) {
            Some(existing) if existing.ast() != program.ast() => {
                return Err(ApiError::new(
                    StatusCode::CONFLICT,
                    "SCRIPT_EXISTS",
                    format!("a different script is already registered as '{key}'; bump its version"),
                ));
            }
            Some(_) => {}
            None => {
                let digest = Sha256::digest(key.as_bytes());
                let name: String = digest[..8].iter().map(|b| format!("{b:02x}")).collect();
                fs::write(scripts_dir(&app.store).join(format!("{name}.miscript")), &source)
                    .map_err(|e| ApiError::from(StoreError::from(e)))?;
                scripts.insert(key.clone(), Arc::new(program));
                tracing::info!(script = %key, "script registered");
            }
        }
    }
    let body = UploadResponse { script: key, report };
    Ok(Json(serde_json::to_value(body).expect("report serializes")))
}

/// Registered scripts, for diagnostics.
pub fn script_keys(app: &AppState) -> Vec<String> {
    let mut keys: Vec<String> = app.scripts.read().expect("scripts lock").keys().cloned().collect();
    keys.sort();
    keys
}
