use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// Profile values available to templates, keyed by dotted path
/// (`user.first_name`).
pub type Bindings = BTreeMap<String, String>;

/// Delivery mode, fixed for the lifetime of a session.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Teaching only; role-play practice and recaps are skipped.
    Didactic,
    /// Teaching followed by interactive role-play practice.
    Roleplay,
    /// Passive, non-tailored playthrough that always takes the adherent path.
    Video,
}

impl Mode {
    pub const ALL: [Mode; 3] = [Mode::Didactic, Mode::Roleplay, Mode::Video];

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Didactic => "didactic",
            Mode::Roleplay => "roleplay",
            Mode::Video => "video",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Mode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| format!("unknown mode '{s}' (expected didactic, roleplay or video)"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionStatus {
    Active,
    AwaitingChoice,
    Completed,
}

impl SessionStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            SessionStatus::Active => "active",
            SessionStatus::AwaitingChoice => "awaiting_choice",
            SessionStatus::Completed => "completed",
        }
    }
}

/// One active segment on the call stack.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Frame {
    pub segment: String,
    pub state: String,
    pub action_index: usize,
    /// State of the caller to resume at if this segment fails.
    pub onfail: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionState {
    pub session_id: String,
    pub mode: Mode,
    pub stack: Vec<Frame>,
    pub bindings: Bindings,
    pub mistake_count: u32,
    pub per_segment_mistakes: BTreeMap<String, u32>,
    pub status: SessionStatus,
    pub turn_counter: u32,
    /// Sequence number of the last emitted event (0 before any event).
    pub last_seq: u64,
    pub completed_segments: BTreeSet<String>,
}

impl SessionState {
    /// Checks the structural invariants that must hold between transitions.
    pub fn check_invariants(&self) -> Result<(), String> {
        if self.stack.is_empty() != (self.status == SessionStatus::Completed) {
            return Err(format!(
                "stack has {} frames but status is {}",
                self.stack.len(),
                self.status.as_str()
            ));
        }
        let per_segment: u32 = self.per_segment_mistakes.values().sum();
        if per_segment != self.mistake_count {
            return Err(format!(
                "mistake_count {} differs from per-segment total {per_segment}",
                self.mistake_count
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EventKind {
    AgentUtterance,
    /// The trainee's line when the engine picks it (video mode).
    TraineeUtterance,
    MenuShown,
    ChoiceMade,
    FailureUtterance,
    SegmentFailed,
    SegmentCompleted,
    SessionCompleted,
    RecapUtterance,
}

impl EventKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EventKind::AgentUtterance => "AgentUtterance",
            EventKind::TraineeUtterance => "TraineeUtterance",
            EventKind::MenuShown => "MenuShown",
            EventKind::ChoiceMade => "ChoiceMade",
            EventKind::FailureUtterance => "FailureUtterance",
            EventKind::SegmentFailed => "SegmentFailed",
            EventKind::SegmentCompleted => "SegmentCompleted",
            EventKind::SessionCompleted => "SessionCompleted",
            EventKind::RecapUtterance => "RecapUtterance",
        }
    }

    /// Whether an event of this kind counts as one conversational turn.
    pub fn is_turn(self) -> bool {
        matches!(
            self,
            EventKind::AgentUtterance
                | EventKind::RecapUtterance
                | EventKind::ChoiceMade
                | EventKind::TraineeUtterance
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Adherence {
    Adherent,
    Nonadherent,
}

impl Adherence {
    pub fn as_str(self) -> &'static str {
        match self {
            Adherence::Adherent => "adherent",
            Adherence::Nonadherent => "nonadherent",
        }
    }
}

/// A menu option as the trainee sees it: an id and a rendered label, never
/// its adherence tag.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OptionView {
    pub id: String,
    pub label: String,
}

/// One unit of dialogue output.
///
/// `speaker` is the agent id for agent lines and absent for the trainee's
/// own lines. On `ChoiceMade`, `options` holds the single chosen option.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TurnEvent {
    pub seq: u64,
    pub kind: EventKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub speaker: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub options: Option<Vec<OptionView>>,
    pub segment: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub adherence: Option<Adherence>,
    /// Suggested on-screen time in seconds; set in video mode only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub display_seconds: Option<u32>,
}

impl TurnEvent {
    /// Projection safe to show a trainee: the adherence tag is dropped.
    pub fn trainee_view(&self) -> TraineeEvent {
        TraineeEvent {
            seq: self.seq,
            kind: self.kind,
            speaker: self.speaker.clone(),
            text: self.text.clone(),
            options: self.options.clone(),
            segment: self.segment.clone(),
            display_seconds: self.display_seconds,
        }
    }

    /// Id of the chosen option on a `ChoiceMade` event.
    pub fn chosen_option(&self) -> Option<&str> {
        match self.kind {
            EventKind::ChoiceMade => self.options.as_ref()?.first().map(|o| o.id.as_str()),
            _ => None,
        }
    }
}

/// Trainee-facing form of [`TurnEvent`]. Has no adherence field at all.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraineeEvent {
    pub seq: u64,
    pub kind: EventKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub speaker: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub options: Option<Vec<OptionView>>,
    pub segment: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub display_seconds: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProgressView {
    pub skills_total: u32,
    pub skills_completed: u32,
    pub current_skill: Option<String>,
    pub mistakes: u32,
    pub elapsed_turns: u32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EngineConfig {
    pub session_id: String,
    /// Most actions one call may execute before giving up.
    pub step_bound: usize,
}

pub const DEFAULT_ENGINE_STEP_BOUND: usize = 100_000;

impl EngineConfig {
    pub fn new(session_id: impl Into<String>) -> Self {
        EngineConfig { session_id: session_id.into(), step_bound: DEFAULT_ENGINE_STEP_BOUND }
    }
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig::new("session")
    }
}
