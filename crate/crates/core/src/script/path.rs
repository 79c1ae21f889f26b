use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::ast::*;
use super::template::Template;

pub const DEFAULT_PATH_STEP_BOUND: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "speaker", content = "id", rename_all = "lowercase")]
pub enum Speaker {
    Agent(String),
    Trainee,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PathStep {
    pub speaker: Speaker,
    pub text: Template,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PathError {
    #[error("UNKNOWN_SEGMENT: no segment '{0}'")]
    UnknownSegment(String),
    #[error("NOT_ROLEPLAY: segment '{0}' is not a role-play segment")]
    NotRoleplay(String),
    #[error("PATH_DIVERGES: adherent path of '{0}' does not reach the end within {1} steps")]
    PathDiverges(String, usize),
    #[error("PATH_BLOCKED: adherent path of '{segment}' cannot continue at state '{state}'")]
    Blocked { segment: String, state: String },
}

impl PathError {
    pub fn code(&self) -> &'static str {
        match self {
            PathError::UnknownSegment(_) => "UNKNOWN_SEGMENT",
            PathError::NotRoleplay(_) => "NOT_ROLEPLAY",
            PathError::PathDiverges(..) => "PATH_DIVERGES",
            PathError::Blocked { .. } => "PATH_BLOCKED",
        }
    }
}

/// Utterances of a role-play segment when the trainee always picks the
/// adherent option, from the first state to the segment's end.
pub fn adherent_path(ast: &ScriptAst, segment: &str) -> Result<Vec<PathStep>, PathError> {
    adherent_path_bounded(ast, segment, DEFAULT_PATH_STEP_BOUND)
}

pub fn adherent_path_bounded(
    ast: &ScriptAst,
    segment: &str,
    step_bound: usize,
) -> Result<Vec<PathStep>, PathError> {
    let seg = ast.segment(segment).ok_or_else(|| PathError::UnknownSegment(segment.into()))?;
    if !seg.is_roleplay() {
        return Err(PathError::NotRoleplay(segment.into()));
    }
    let blocked = |state: &State| PathError::Blocked { segment: seg.id.clone(), state: state.id.clone() };

    let mut path = Vec::new();
    let mut index = 0;
    let mut steps = 0usize;
    'states: while index < seg.states.len() {
        let state = &seg.states[index];
        for action in &state.actions {
            steps += 1;
            if steps > step_bound {
                return Err(PathError::PathDiverges(seg.id.clone(), step_bound));
            }
            match action {
                Action::Say(t) => path.push(PathStep { speaker: Speaker::Agent(seg.agent.clone()), text: t.clone() }),
                Action::Menu(options) => {
                    let opt = options
                        .iter()
                        .find(|o| o.tag == AdherenceTag::Adherent)
                        .ok_or_else(|| blocked(state))?;
                    path.push(PathStep { speaker: Speaker::Trainee, text: opt.label.clone() });
                    match &opt.target {
                        Target::End => return Ok(path),
                        Target::Fail => return Err(blocked(state)),
                        Target::State(t) => {
                            index = seg.state_index(t).ok_or_else(|| blocked(state))?;
                            continue 'states;
                        }
                    }
                }
                Action::Goto(t) => {
                    index = seg.state_index(t).ok_or_else(|| blocked(state))?;
                    continue 'states;
                }
                Action::End => return Ok(path),
                Action::Call { .. } | Action::Recap(_) => return Err(blocked(state)),
            }
        }
        index += 1;
    }
    Ok(path)
}

/// Number of turns on the adherent path (agent lines plus trainee choices).
pub fn adherent_turns(ast: &ScriptAst, segment: &str) -> Result<usize, PathError> {
    adherent_path(ast, segment).map(|p| p.len())
}
