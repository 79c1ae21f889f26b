//! Browser demo: play the bundled curriculum, validate a script, and compute
//! rater reliability, all client-side.
//!
//! Every export returns JSON text; the page parses it.

use micoach_core::curriculum::{self, Curriculum};
use micoach_core::engine::{
    advance, session_progress, start_session, Bindings, EngineConfig, Mode, OptionView, ProgressView, SessionState,
    SessionStatus, TraineeEvent, TurnEvent,
};
use micoach_core::script::{self, Diagnostic};
use micoach_core::scorer::{cronbach_alpha, icc_avg_consistency, mean_squares, RatingsMatrix, ScorerError};
use serde::Serialize;
use serde_json::json;
use wasm_bindgen::prelude::*;

#[derive(Serialize)]
struct Turn<'a> {
    status: &'static str,
    events: Vec<TraineeEvent>,
    options: &'a [OptionView],
    progress: ProgressView,
}

/// A trainee session over the bundled curriculum, held in memory.
#[wasm_bindgen]
pub struct DemoSession {
    curriculum: Curriculum,
    state: SessionState,
    pending: Vec<OptionView>,
    opening: String,
}

impl DemoSession {
    pub fn start(mode: &str, first_name: &str) -> Result<DemoSession, String> {
        let mode: Mode = mode.parse().map_err(|_| format!("unknown mode '{mode}'"))?;
        let curriculum = curriculum::bundled();
        let mut bindings = Bindings::new();
        if !first_name.trim().is_empty() {
            bindings.insert("user.first_name".into(), first_name.trim().to_string());
        }
        let (state, events) = start_session(&curriculum.program, mode, bindings, &EngineConfig::new("demo"))
            .map_err(|e| format!("{e} [{}]", e.code()))?;
        let mut session = DemoSession { curriculum, state, pending: Vec::new(), opening: String::new() };
        session.opening = session.turn(&events);
        Ok(session)
    }

    pub fn pick(&mut self, option_id: &str) -> Result<String, String> {
        let (state, events) = advance(&self.curriculum.program, &self.state, Some(option_id))
            .map_err(|e| format!("{e} [{}]", e.code()))?;
        self.state = state;
        Ok(self.turn(&events))
    }

    fn turn(&mut self, events: &[TurnEvent]) -> String {
        self.pending = events
            .last()
            .filter(|_| self.state.status == SessionStatus::AwaitingChoice)
            .and_then(|e| e.options.clone())
            .unwrap_or_default();
        let turn = Turn {
            status: self.state.status.as_str(),
            events: events.iter().map(|e| e.trainee_view()).collect(),
            options: &self.pending,
            progress: session_progress(&self.curriculum.program, &self.state),
        };
        serde_json::to_string(&turn).expect("turn serializes")
    }
}

#[wasm_bindgen]
impl DemoSession {
    /// `mode` is `roleplay`, `didactic` or `video`.
    #[wasm_bindgen(constructor)]
    pub fn new(mode: &str, first_name: &str) -> Result<DemoSession, JsError> {
        DemoSession::start(mode, first_name).map_err(|e| JsError::new(&e))
    }

    /// Events produced by starting the session.
    pub fn opening(&self) -> String {
        self.opening.clone()
    }

    pub fn choose(&mut self, option_id: &str) -> Result<String, JsError> {
        self.pick(option_id).map_err(|e| JsError::new(&e))
    }
}

fn diagnostics(list: &[Diagnostic]) -> Vec<serde_json::Value> {
    list.iter()
        .map(|d| {
            json!({
                "code": d.code,
                "message": d.message,
                "line": d.location.line,
                "column": d.location.column,
                "segment": d.location.segment,
                "state": d.location.state,
            })
        })
        .collect()
}

/// Parse and validate script source.
#[wasm_bindgen]
pub fn validate_script(source: &str) -> String {
    let out = match script::parse(source) {
        Err(e) => json!({
            "ok": false,
            "errors": [{
                "code": e.code(),
                "message": e.message,
                "line": e.line,
                "column": e.column,
            }],
            "warnings": [],
        }),
        Ok(ast) => {
            let report = script::validate(&ast);
            json!({
                "ok": report.is_ok(),
                "script": format!("{}@{}", ast.name, ast.version),
                "segments": ast.segments.len(),
                "errors": diagnostics(&report.errors),
                "warnings": diagnostics(&report.warnings),
            })
        }
    };
    out.to_string()
}

/// Cronbach's alpha, ICC(C,k) and mean squares for a headerless CSV of
/// subjects × raters.
#[wasm_bindgen]
pub fn reliability(csv: &str) -> String {
    let out = match RatingsMatrix::from_csv(csv) {
        Err(e) => json!({ "error": e.to_string(), "code": e.code() }),
        Ok(m) => {
            let stat = |r: Result<f64, ScorerError>| match r {
                Ok(v) => json!(v),
                Err(e) => json!({ "error": e.to_string(), "code": e.code() }),
            };
            json!({
                "subjects": m.n_subjects(),
                "raters": m.n_raters(),
                "cronbach_alpha": stat(cronbach_alpha(&m)),
                "icc_avg_consistency": stat(icc_avg_consistency(&m)),
                "mean_squares": mean_squares(&m),
            })
        }
    };
    out.to_string()
}

/// The bundled sample script, as a starting point for the editor.
#[wasm_bindgen]
pub fn sample_script() -> String {
    curriculum::SAMPLE_SCRIPT.to_string()
}
