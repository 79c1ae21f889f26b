//! Interpreter for validated scripts.
//!
//! The engine is a pure transition function: `(SessionState, input)` goes to
//! `(SessionState, events)`. Nothing is shared between sessions and the same
//! inputs always give byte-identical event streams.

mod render;
mod run;
mod types;

use std::collections::HashMap;

use thiserror::Error;

use crate::script::{self, ScriptAst, Segment, ValidationReport};

pub use render::{is_personal, render_template, PERSONAL_NAMESPACE};
pub use run::{advance, session_progress, start_session};
pub use types::*;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EngineError {
    #[error("script has {} validation error(s)", .0.errors.len())]
    UnvalidatedScript(ValidationReport),
    #[error("no binding or fallback for placeholder '{0}'")]
    MissingBinding(String),
    #[error("option '{0}' is not on the displayed menu")]
    UnknownOption(String),
    #[error("the session is not waiting for a choice")]
    ChoiceNotExpected,
    #[error("the session is waiting for a menu choice")]
    ChoiceRequired,
    #[error("the session has already completed")]
    EngineHalted,
    #[error("more than {0} actions without reaching a menu or the end")]
    StepBoundExceeded(usize),
    #[error("session state does not match the script: {0}")]
    InconsistentState(String),
}

impl EngineError {
    pub fn code(&self) -> &'static str {
        match self {
            EngineError::UnvalidatedScript(_) => "UNVALIDATED_SCRIPT",
            EngineError::MissingBinding(_) => "MISSING_BINDING",
            EngineError::UnknownOption(_) => "UNKNOWN_OPTION",
            EngineError::ChoiceNotExpected => "CHOICE_NOT_EXPECTED",
            EngineError::ChoiceRequired => "CHOICE_REQUIRED",
            EngineError::EngineHalted => "ENGINE_HALTED",
            EngineError::StepBoundExceeded(_) => "STEP_BOUND_EXCEEDED",
            EngineError::InconsistentState(_) => "INCONSISTENT_STATE",
        }
    }
}

/// A script that passed validation, indexed for execution.
#[derive(Debug, Clone)]
pub struct Program {
    ast: ScriptAst,
    report: ValidationReport,
    segments: HashMap<String, usize>,
    states: Vec<HashMap<String, usize>>,
}

impl Program {
    pub fn new(ast: ScriptAst) -> Result<Self, EngineError> {
        let report = script::validate(&ast);
        if !report.is_ok() {
            return Err(EngineError::UnvalidatedScript(report));
        }
        let segments = ast.segments.iter().enumerate().map(|(i, s)| (s.id.clone(), i)).collect();
        let states = ast
            .segments
            .iter()
            .map(|seg| seg.states.iter().enumerate().map(|(i, s)| (s.id.clone(), i)).collect())
            .collect();
        Ok(Program { ast, report, segments, states })
    }

    pub fn ast(&self) -> &ScriptAst {
        &self.ast
    }

    /// Warnings raised while validating.
    pub fn report(&self) -> &ValidationReport {
        &self.report
    }

    pub fn segment(&self, id: &str) -> Option<&Segment> {
        self.segments.get(id).map(|&i| &self.ast.segments[i])
    }

    pub(crate) fn state_index(&self, segment: &str, state: &str) -> Option<usize> {
        let seg = *self.segments.get(segment)?;
        self.states[seg].get(state).copied()
    }

    /// Distinct skill ids in curriculum order.
    pub fn skills(&self) -> Vec<&str> {
        self.ast.skills()
    }
}
