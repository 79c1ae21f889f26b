//! File-backed storage: an append-only JSONL event log per session plus a
//! small metadata file, and a users file.
//!
//! Layout under the data directory:
//!
//! ```text
//! users.jsonl
//! sessions/<id>.jsonl       {"ts":…,"event":{…},"sum":"…"} per line
//! sessions/<id>.meta.json
//! ```
//!
//! Session state is never stored. It is rebuilt by replaying the log through
//! the engine and checking that every replayed event matches the stored one.

use std::collections::HashMap;
use std::fs::{self, File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::engine::{
    advance, start_session, Bindings, EngineConfig, EngineError, EventKind, Mode, Program, SessionState, TurnEvent,
};

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("unknown session '{0}'")]
    UnknownSession(String),
    #[error("unknown user '{0}'")]
    UnknownUser(String),
    #[error("'{0}' already exists")]
    Duplicate(String),
    #[error("invalid id '{0}': use letters, digits, '-' or '_'")]
    InvalidId(String),
    #[error("expected seq {expected}, got {got}")]
    SeqGap { expected: u64, got: u64 },
    #[error("timestamp {got} is earlier than the previous record ({last})")]
    TimestampRegression { last: u64, got: u64 },
    #[error("corrupt log for '{session}' at byte {offset}: {reason}")]
    CorruptLog { session: String, offset: u64, reason: String },
    #[error("session '{session}' was recorded with script '{recorded}', not '{given}'")]
    ScriptMismatch { session: String, recorded: String, given: String },
    #[error("replay failed: {0}")]
    Replay(#[from] EngineError),
    #[error("I/O error: {0}")]
    Io(#[from] io::Error),
}

impl StoreError {
    pub fn code(&self) -> &'static str {
        match self {
            StoreError::UnknownSession(_) => "UNKNOWN_SESSION",
            StoreError::UnknownUser(_) => "UNKNOWN_USER",
            StoreError::Duplicate(_) => "DUPLICATE",
            StoreError::InvalidId(_) => "INVALID_ID",
            StoreError::SeqGap { .. } => "SEQ_GAP",
            StoreError::TimestampRegression { .. } => "TS_REGRESSION",
            StoreError::CorruptLog { .. } => "CORRUPT_LOG",
            StoreError::ScriptMismatch { .. } => "SCRIPT_MISMATCH",
            StoreError::Replay(_) => "REPLAY_FAILED",
            StoreError::Io(_) => "IO",
        }
    }
}

/// One persisted event with its timestamp in milliseconds since the epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub ts: u64,
    pub event: TurnEvent,
}

/// The ordered event history of a session.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct EventLog {
    pub session_id: String,
    pub records: Vec<LogRecord>,
}

impl EventLog {
    pub fn new(session_id: impl Into<String>) -> Self {
        EventLog { session_id: session_id.into(), records: Vec::new() }
    }

    pub fn events(&self) -> impl Iterator<Item = &TurnEvent> {
        self.records.iter().map(|r| &r.event)
    }

    pub fn last_seq(&self) -> u64 {
        self.records.last().map_or(0, |r| r.event.seq)
    }

    /// In-memory append with the same ordering checks as the store.
    pub fn push(&mut self, ts: u64, event: TurnEvent) -> Result<(), StoreError> {
        check_next(self.last_seq(), self.records.last().map_or(0, |r| r.ts), ts, &event)?;
        self.records.push(LogRecord { ts, event });
        Ok(())
    }
}

fn check_next(last_seq: u64, last_ts: u64, ts: u64, event: &TurnEvent) -> Result<(), StoreError> {
    if event.seq != last_seq + 1 {
        return Err(StoreError::SeqGap { expected: last_seq + 1, got: event.seq });
    }
    if ts < last_ts {
        return Err(StoreError::TimestampRegression { last: last_ts, got: ts });
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserRecord {
    pub user_id: String,
    pub bindings: Bindings,
    pub created_at: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionMeta {
    pub session_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub user_id: Option<String>,
    pub mode: Mode,
    pub bindings: Bindings,
    /// `name@version` of the script the session runs.
    pub script: String,
    pub created_at: u64,
}

pub fn script_key(program: &Program) -> String {
    format!("{}@{}", program.ast().name, program.ast().version)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExportFormat {
    Jsonl,
    Csv,
}

impl FromStr for ExportFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "jsonl" => Ok(ExportFormat::Jsonl),
            "csv" => Ok(ExportFormat::Csv),
            _ => Err(format!("unknown export format '{s}' (expected jsonl or csv)")),
        }
    }
}

/// A JSONL export line: the event's fields with `ts` alongside.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExportRecord {
    pub ts: u64,
    #[serde(flatten)]
    pub event: TurnEvent,
}

#[derive(Serialize)]
struct Framed<'a> {
    ts: u64,
    event: &'a TurnEvent,
}

#[derive(Deserialize)]
struct StoredLine {
    ts: u64,
    event: TurnEvent,
    sum: String,
}

fn checksum(body: &str) -> String {
    let digest = Sha256::digest(body.as_bytes());
    digest[..8].iter().map(|b| format!("{b:02x}")).collect()
}

fn frame(ts: u64, event: &TurnEvent) -> String {
    let body = serde_json::to_string(&Framed { ts, event }).expect("events serialize");
    let sum = checksum(&body);
    // splice the checksum in as a final field
    format!("{},\"sum\":\"{sum}\"}}\n", &body[..body.len() - 1])
}

fn valid_id(id: &str) -> bool {
    !id.is_empty() && id.len() <= 128 && id.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_')
}

#[derive(Debug, Default)]
struct Tail {
    loaded: bool,
    last_seq: u64,
    last_ts: u64,
}

/// Handle to a data directory. Cheap to share behind an `Arc`.
#[derive(Debug)]
pub struct Store {
    root: PathBuf,
    tails: Mutex<HashMap<String, Arc<Mutex<Tail>>>>,
    users: Mutex<()>,
}

impl Store {
    pub fn open(root: impl AsRef<Path>) -> Result<Self, StoreError> {
        let root = root.as_ref().to_path_buf();
        fs::create_dir_all(root.join("sessions"))?;
        Ok(Store { root, tails: Mutex::default(), users: Mutex::default() })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn log_path(&self, id: &str) -> PathBuf {
        self.root.join("sessions").join(format!("{id}.jsonl"))
    }

    fn meta_path(&self, id: &str) -> PathBuf {
        self.root.join("sessions").join(format!("{id}.meta.json"))
    }

    fn tail(&self, id: &str) -> Arc<Mutex<Tail>> {
        self.tails.lock().expect("store lock").entry(id.to_string()).or_default().clone()
    }

    fn check_id(&self, id: &str) -> Result<(), StoreError> {
        if valid_id(id) {
            Ok(())
        } else {
            Err(StoreError::InvalidId(id.to_string()))
        }
    }

    pub fn create_user(&self, user_id: &str, bindings: Bindings, created_at: u64) -> Result<UserRecord, StoreError> {
        self.check_id(user_id)?;
        let _guard = self.users.lock().expect("users lock");
        if self.find_user(user_id)?.is_some() {
            return Err(StoreError::Duplicate(user_id.to_string()));
        }
        let record = UserRecord { user_id: user_id.to_string(), bindings, created_at };
        let mut line = serde_json::to_string(&record).expect("users serialize");
        line.push('\n');
        let mut file = OpenOptions::new().create(true).append(true).open(self.root.join("users.jsonl"))?;
        file.write_all(line.as_bytes())?;
        file.sync_data()?;
        Ok(record)
    }

    pub fn get_user(&self, user_id: &str) -> Result<UserRecord, StoreError> {
        let _guard = self.users.lock().expect("users lock");
        self.find_user(user_id)?.ok_or_else(|| StoreError::UnknownUser(user_id.to_string()))
    }

    fn find_user(&self, user_id: &str) -> Result<Option<UserRecord>, StoreError> {
        let text = match fs::read_to_string(self.root.join("users.jsonl")) {
            Ok(t) => t,
            Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(e.into()),
        };
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let record: UserRecord = serde_json::from_str(line)
                .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, format!("users.jsonl: {e}")))?;
            if record.user_id == user_id {
                return Ok(Some(record));
            }
        }
        Ok(None)
    }

    /// Register a session. Its log starts empty.
    pub fn create_session(&self, meta: &SessionMeta) -> Result<(), StoreError> {
        self.check_id(&meta.session_id)?;
        let tail = self.tail(&meta.session_id);
        let mut tail = tail.lock().expect("session lock");
        let mut file = match OpenOptions::new().write(true).create_new(true).open(self.meta_path(&meta.session_id)) {
            Ok(f) => f,
            Err(e) if e.kind() == io::ErrorKind::AlreadyExists => {
                return Err(StoreError::Duplicate(meta.session_id.clone()))
            }
            Err(e) => return Err(e.into()),
        };
        file.write_all(serde_json::to_string_pretty(meta).expect("meta serializes").as_bytes())?;
        file.sync_all()?;
        File::create(self.log_path(&meta.session_id))?.sync_all()?;
        *tail = Tail { loaded: true, last_seq: 0, last_ts: 0 };
        Ok(())
    }

    /// Start a session in the engine and persist it with its opening events.
    /// Nothing is written if the engine rejects the start.
    pub fn begin_session(
        &self,
        program: &Program,
        meta: &SessionMeta,
    ) -> Result<(SessionState, Vec<TurnEvent>), StoreError> {
        self.check_id(&meta.session_id)?;
        let config = EngineConfig::new(meta.session_id.clone());
        let (state, events) = start_session(program, meta.mode, meta.bindings.clone(), &config)?;
        self.create_session(meta)?;
        self.append_events(&meta.session_id, meta.created_at, &events)?;
        Ok((state, events))
    }

    pub fn session_exists(&self, id: &str) -> bool {
        valid_id(id) && self.meta_path(id).is_file()
    }

    pub fn session_meta(&self, id: &str) -> Result<SessionMeta, StoreError> {
        if !self.session_exists(id) {
            return Err(StoreError::UnknownSession(id.to_string()));
        }
        let text = fs::read_to_string(self.meta_path(id))?;
        serde_json::from_str(&text).map_err(|e| StoreError::CorruptLog {
            session: id.to_string(),
            offset: 0,
            reason: format!("metadata: {e}"),
        })
    }

    /// Sessions with metadata on disk, sorted by id.
    pub fn session_ids(&self) -> Result<Vec<String>, StoreError> {
        let mut ids: Vec<String> = fs::read_dir(self.root.join("sessions"))?
            .filter_map(|e| e.ok())
            .filter_map(|e| e.file_name().to_str()?.strip_suffix(".meta.json").map(str::to_owned))
            .collect();
        ids.sort();
        Ok(ids)
    }

    pub fn append_event(&self, session_id: &str, ts: u64, event: &TurnEvent) -> Result<(), StoreError> {
        self.append_events(session_id, ts, std::slice::from_ref(event))
    }

    /// Append a batch of consecutive events sharing one timestamp. The batch is
    /// written with a single write and synced before returning; nothing is
    /// written if any event is out of order.
    pub fn append_events(&self, session_id: &str, ts: u64, events: &[TurnEvent]) -> Result<(), StoreError> {
        if !self.session_exists(session_id) {
            return Err(StoreError::UnknownSession(session_id.to_string()));
        }
        let tail = self.tail(session_id);
        let mut tail = tail.lock().expect("session lock");
        if !tail.loaded {
            let log = self.read_log(session_id)?;
            *tail = Tail {
                loaded: true,
                last_seq: log.last_seq(),
                last_ts: log.records.last().map_or(0, |r| r.ts),
            };
        }
        let mut buf = String::new();
        let (mut seq, mut last_ts) = (tail.last_seq, tail.last_ts);
        for e in events {
            check_next(seq, last_ts, ts, e)?;
            seq = e.seq;
            last_ts = ts;
            buf.push_str(&frame(ts, e));
        }
        let mut file = OpenOptions::new().append(true).open(self.log_path(session_id))?;
        file.write_all(buf.as_bytes())?;
        file.sync_data()?;
        tail.last_seq = seq;
        tail.last_ts = last_ts;
        Ok(())
    }

    /// Read and verify a session's log without replaying it.
    pub fn read_log(&self, session_id: &str) -> Result<EventLog, StoreError> {
        if !self.session_exists(session_id) {
            return Err(StoreError::UnknownSession(session_id.to_string()));
        }
        let bytes = fs::read(self.log_path(session_id))?;
        parse_log(session_id, &bytes)
    }

    /// Rebuild a session by replaying its log through the engine.
    pub fn load_session(&self, program: &Program, session_id: &str) -> Result<(SessionState, EventLog), StoreError> {
        let meta = self.session_meta(session_id)?;
        let given = script_key(program);
        if meta.script != given {
            return Err(StoreError::ScriptMismatch { session: session_id.to_string(), recorded: meta.script, given });
        }
        let log = self.read_log(session_id)?;
        let state = replay(program, &meta, &log)?;
        Ok((state, log))
    }

    pub fn export_events(&self, session_id: &str, format: ExportFormat) -> Result<Vec<u8>, StoreError> {
        Ok(export_log(&self.read_log(session_id)?, format))
    }
}

/// Parse log bytes, verifying line framing and checksums.
pub fn parse_log(session_id: &str, bytes: &[u8]) -> Result<EventLog, StoreError> {
    let corrupt = |offset: usize, reason: String| StoreError::CorruptLog {
        session: session_id.to_string(),
        offset: offset as u64,
        reason,
    };
    let mut log = EventLog::new(session_id);
    let mut offset = 0;
    while offset < bytes.len() {
        let rest = &bytes[offset..];
        let Some(end) = rest.iter().position(|&b| b == b'\n') else {
            return Err(corrupt(offset, "truncated record (no line terminator)".into()));
        };
        let line = std::str::from_utf8(&rest[..end]).map_err(|_| corrupt(offset, "invalid UTF-8".into()))?;
        let stored: StoredLine =
            serde_json::from_str(line).map_err(|e| corrupt(offset, format!("unreadable record: {e}")))?;
        let body = serde_json::to_string(&Framed { ts: stored.ts, event: &stored.event }).expect("events serialize");
        if checksum(&body) != stored.sum {
            return Err(corrupt(offset, "checksum mismatch".into()));
        }
        log.push(stored.ts, stored.event).map_err(|e| corrupt(offset, e.to_string()))?;
        offset += end + 1;
    }
    Ok(log)
}

/// Reconstruct the state a log describes. Every event the engine produces
/// must match the logged one exactly, and the log must end on a transition
/// boundary.
pub fn replay(program: &Program, meta: &SessionMeta, log: &EventLog) -> Result<SessionState, StoreError> {
    let mismatch = |index: usize, reason: String| StoreError::CorruptLog {
        session: log.session_id.clone(),
        offset: index as u64,
        reason: format!("replay mismatch at record {index}: {reason}"),
    };
    let config = EngineConfig::new(meta.session_id.clone());
    let (mut state, mut produced) = start_session(program, meta.mode, meta.bindings.clone(), &config)?;
    let events: Vec<&TurnEvent> = log.events().collect();
    let mut i = 0;
    loop {
        for e in &produced {
            match events.get(i) {
                Some(logged) if *logged == e => i += 1,
                Some(_) => return Err(mismatch(i, format!("engine produced seq {} ({})", e.seq, e.kind.as_str()))),
                None => return Err(mismatch(i, "log ends inside a transition".into())),
            }
        }
        let Some(next) = events.get(i) else { break };
        if next.kind != EventKind::ChoiceMade {
            return Err(mismatch(i, format!("expected a choice, found {}", next.kind.as_str())));
        }
        let option = next.chosen_option().ok_or_else(|| mismatch(i, "choice without option".into()))?;
        (state, produced) = advance(program, &state, Some(option)).map_err(|e| mismatch(i, e.to_string()))?;
    }
    Ok(state)
}

pub fn export_log(log: &EventLog, format: ExportFormat) -> Vec<u8> {
    match format {
        ExportFormat::Jsonl => {
            let mut out = Vec::new();
            for r in &log.records {
                let record = ExportRecord { ts: r.ts, event: r.event.clone() };
                serde_json::to_writer(&mut out, &record).expect("events serialize");
                out.push(b'\n');
            }
            out
        }
        ExportFormat::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record(["ts", "seq", "kind", "segment", "adherence"]).expect("in-memory write");
            for r in &log.records {
                let e = &r.event;
                w.write_record([
                    r.ts.to_string(),
                    e.seq.to_string(),
                    e.kind.as_str().to_string(),
                    e.segment.clone(),
                    e.adherence.map(|a| a.as_str().to_string()).unwrap_or_default(),
                ])
                .expect("in-memory write");
            }
            w.into_inner().expect("in-memory flush")
        }
    }
}

/// Parse a JSONL export back into a log.
pub fn import_jsonl(session_id: &str, data: &str) -> Result<EventLog, StoreError> {
    let mut log = EventLog::new(session_id);
    let mut offset = 0;
    for line in data.split_inclusive('\n') {
        if !line.trim().is_empty() {
            let r: ExportRecord = serde_json::from_str(line).map_err(|e| StoreError::CorruptLog {
                session: session_id.to_string(),
                offset: offset as u64,
                reason: e.to_string(),
            })?;
            log.push(r.ts, r.event)?;
        }
        offset += line.len();
    }
    Ok(log)
}
