use std::fmt;

use serde::{Deserialize, Serialize};

use super::template::Template;

/// 1-based source position of a node.
///
/// Spans are carried for diagnostics only and never participate in equality,
/// so an AST rebuilt from pretty-printed source compares equal to the original.
#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
pub struct Span {
    pub line: u32,
    pub column: u32,
}

impl Span {
    pub fn new(line: u32, column: u32) -> Self {
        Span { line, column }
    }
}

impl PartialEq for Span {
    fn eq(&self, _: &Self) -> bool {
        true
    }
}

impl Eq for Span {}

impl fmt::Display for Span {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.line, self.column)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptAst {
    pub name: String,
    pub version: u32,
    pub entry: String,
    pub segments: Vec<Segment>,
}

impl ScriptAst {
    pub fn segment(&self, id: &str) -> Option<&Segment> {
        self.segments.iter().find(|s| s.id == id)
    }

    pub fn segment_index(&self, id: &str) -> Option<usize> {
        self.segments.iter().position(|s| s.id == id)
    }

    /// Distinct `skill` attributes in order of first appearance.
    pub fn skills(&self) -> Vec<&str> {
        let mut out: Vec<&str> = Vec::new();
        for seg in &self.segments {
            if let Some(skill) = seg.skill.as_deref() {
                if !out.contains(&skill) {
                    out.push(skill);
                }
            }
        }
        out
    }

    /// Every template in the script, in source order.
    pub fn templates(&self) -> impl Iterator<Item = &Template> {
        self.segments.iter().flat_map(|seg| {
            let from_states = seg.states.iter().flat_map(|st| {
                st.actions.iter().flat_map(|a| -> Box<dyn Iterator<Item = &Template>> {
                    match a {
                        Action::Say(t) => Box::new(std::iter::once(t)),
                        Action::Menu(opts) => Box::new(opts.iter().map(|o| &o.label)),
                        _ => Box::new(std::iter::empty()),
                    }
                })
            });
            let from_handlers = seg.failure_handlers.iter().flat_map(|h| h.lines.iter());
            from_states.chain(from_handlers)
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SegmentKind {
    Pedagogy,
    Roleplay,
}

impl SegmentKind {
    pub fn as_str(self) -> &'static str {
        match self {
            SegmentKind::Pedagogy => "pedagogy",
            SegmentKind::Roleplay => "roleplay",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub id: String,
    pub kind: SegmentKind,
    pub agent: String,
    pub skill: Option<String>,
    pub states: Vec<State>,
    pub failure_handlers: Vec<FailureHandler>,
    pub span: Span,
}

impl Segment {
    pub fn state(&self, id: &str) -> Option<&State> {
        self.states.iter().find(|s| s.id == id)
    }

    pub fn state_index(&self, id: &str) -> Option<usize> {
        self.states.iter().position(|s| s.id == id)
    }

    pub fn first_state(&self) -> Option<&State> {
        self.states.first()
    }

    /// Handler that applies to a failure raised in `state`: a handler naming
    /// the state wins over the default one.
    pub fn failure_handler_for(&self, state: &str) -> Option<&FailureHandler> {
        self.failure_handlers
            .iter()
            .find(|h| h.for_states.iter().any(|s| s == state))
            .or_else(|| self.failure_handlers.iter().find(|h| h.for_states.is_empty()))
    }

    pub fn is_roleplay(&self) -> bool {
        self.kind == SegmentKind::Roleplay
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct State {
    pub id: String,
    pub actions: Vec<Action>,
    pub span: Span,
}

impl State {
    /// The menu of this state, if it has one.
    pub fn menu(&self) -> Option<&[MenuOption]> {
        self.actions.iter().find_map(|a| match a {
            Action::Menu(opts) => Some(opts.as_slice()),
            _ => None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum Action {
    Say(Template),
    Menu(Vec<MenuOption>),
    Goto(String),
    Call {
        segment: String,
        onfail: Option<String>,
    },
    Recap(String),
    End,
}

impl Action {
    /// Actions that may only appear last in a state.
    pub fn transfers_control(&self) -> bool {
        !matches!(self, Action::Say(_))
    }

    pub fn keyword(&self) -> &'static str {
        match self {
            Action::Say(_) => "say",
            Action::Menu(_) => "menu",
            Action::Goto(_) => "goto",
            Action::Call { .. } => "call",
            Action::Recap(_) => "recap",
            Action::End => "end",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AdherenceTag {
    Adherent,
    Nonadherent,
    Untagged,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "to", content = "state", rename_all = "lowercase")]
pub enum Target {
    State(String),
    Fail,
    End,
}

impl fmt::Display for Target {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Target::State(s) => f.write_str(s),
            Target::Fail => f.write_str("!fail"),
            Target::End => f.write_str("!end"),
        }
    }
}

/// A menu option. Ids are assigned by position (`o1`, `o2`, ...) since the
/// source format does not name options.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MenuOption {
    pub id: String,
    pub tag: AdherenceTag,
    pub label: Template,
    pub target: Target,
    pub span: Span,
}

pub fn option_id(position: usize) -> String {
    format!("o{}", position + 1)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FailureHandler {
    /// Empty means this is the segment's default handler.
    pub for_states: Vec<String>,
    pub lines: Vec<Template>,
    pub span: Span,
}
