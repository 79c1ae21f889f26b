//! Static checks over a parsed script. A report with no errors means the
//! engine can run the script.

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};

use super::ast::*;

/// Most options a role-play menu may offer.
pub const ROLEPLAY_MAX_OPTIONS: usize = 2;
/// Most options a pedagogy menu may offer.
pub const PEDAGOGY_MAX_OPTIONS: usize = 4;

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Location {
    pub line: u32,
    pub column: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub segment: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub state: Option<String>,
}

impl Location {
    pub fn at(span: Span, segment: Option<&str>, state: Option<&str>) -> Self {
        Location {
            line: span.line,
            column: span.column,
            segment: segment.map(str::to_owned),
            state: state.map(str::to_owned),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub code: String,
    pub location: Location,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub errors: Vec<Diagnostic>,
    pub warnings: Vec<Diagnostic>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.errors.is_empty()
    }

    pub fn error(&mut self, code: &str, location: Location, message: impl Into<String>) {
        self.errors.push(Diagnostic { code: code.into(), location, message: message.into() });
    }

    pub fn warning(&mut self, code: &str, location: Location, message: impl Into<String>) {
        self.warnings.push(Diagnostic { code: code.into(), location, message: message.into() });
    }

    pub fn has_error(&self, code: &str) -> bool {
        self.errors.iter().any(|d| d.code == code)
    }

    pub fn has_warning(&self, code: &str) -> bool {
        self.warnings.iter().any(|d| d.code == code)
    }

    pub fn merge(&mut self, other: ValidationReport) {
        self.errors.extend(other.errors);
        self.warnings.extend(other.warnings);
        self.sort();
    }

    /// Order by source location, then code and message.
    pub fn sort(&mut self) {
        let key = |d: &Diagnostic| {
            (
                d.location.line,
                d.location.column,
                d.location.segment.clone(),
                d.location.state.clone(),
                d.code.clone(),
                d.message.clone(),
            )
        };
        self.errors.sort_by_key(key);
        self.warnings.sort_by_key(key);
    }
}

pub fn validate(ast: &ScriptAst) -> ValidationReport {
    let mut report = ValidationReport::default();

    if ast.segment(&ast.entry).is_none() {
        report.error(
            "UNKNOWN_ENTRY",
            Location::default(),
            format!("entry segment '{}' is not defined", ast.entry),
        );
    }

    let mut seen = HashSet::new();
    for (index, seg) in ast.segments.iter().enumerate() {
        if !seen.insert(seg.id.as_str()) {
            report.error(
                "DUPLICATE_SEGMENT",
                Location::at(seg.span, Some(&seg.id), None),
                format!("duplicate segment id '{}'", seg.id),
            );
        }
        check_segment(ast, index, seg, &mut report);
    }

    check_call_cycles(ast, &mut report);
    check_segment_reachability(ast, &mut report);

    report.sort();
    report
}

fn check_segment(ast: &ScriptAst, index: usize, seg: &Segment, report: &mut ValidationReport) {
    let seg_loc = |span: Span, state: Option<&str>| Location::at(span, Some(&seg.id), state);

    if seg.states.is_empty() {
        report.error("EMPTY_SEGMENT", seg_loc(seg.span, None), format!("segment '{}' has no states", seg.id));
    }

    let mut state_ids = HashSet::new();
    for state in &seg.states {
        if !state_ids.insert(state.id.as_str()) {
            report.error(
                "DUPLICATE_STATE",
                seg_loc(state.span, Some(&state.id)),
                format!("duplicate state id '{}' in segment '{}'", state.id, seg.id),
            );
        }
    }
    let has_state = |id: &str| state_ids.contains(id);

    for state in &seg.states {
        let loc = || seg_loc(state.span, Some(&state.id));
        if state.actions.is_empty() {
            report.error("EMPTY_STATE", loc(), format!("state '{}' has no actions", state.id));
        }
        if let Some(pos) = state.actions.iter().position(Action::transfers_control) {
            if pos + 1 < state.actions.len() {
                report.error(
                    "DEAD_ACTION",
                    loc(),
                    format!(
                        "actions after '{}' in state '{}' can never run",
                        state.actions[pos].keyword(),
                        state.id
                    ),
                );
            }
        }

        for action in &state.actions {
            match action {
                Action::Say(_) | Action::End => {}
                Action::Goto(target) => {
                    if !has_state(target) {
                        report.error("DANGLING_TARGET", loc(), format!("goto names unknown state '{target}'"));
                    }
                }
                Action::Call { segment, onfail } => {
                    if seg.is_roleplay() {
                        report.error(
                            "ROLEPLAY_CONTROL",
                            loc(),
                            "role-play segments cannot call other segments",
                        );
                    }
                    if ast.segment(segment).is_none() {
                        report.error("DANGLING_TARGET", loc(), format!("call names unknown segment '{segment}'"));
                    }
                    if let Some(s) = onfail.as_deref().filter(|s| !has_state(s)) {
                        report.error("DANGLING_TARGET", loc(), format!("onfail names unknown state '{s}'"));
                    }
                }
                Action::Recap(target) => {
                    if seg.is_roleplay() {
                        report.error(
                            "ROLEPLAY_CONTROL",
                            loc(),
                            "role-play segments cannot recap other segments",
                        );
                    }
                    match ast.segment_index(target) {
                        None => report.error(
                            "DANGLING_TARGET",
                            loc(),
                            format!("recap names unknown segment '{target}'"),
                        ),
                        Some(i) if !ast.segments[i].is_roleplay() => report.error(
                            "RECAP_TARGET",
                            loc(),
                            format!("recap target '{target}' is not a role-play segment"),
                        ),
                        Some(i) if i >= index => report.error(
                            "RECAP_TARGET",
                            loc(),
                            format!("recap target '{target}' is not defined before segment '{}'", seg.id),
                        ),
                        Some(_) => {}
                    }
                }
                Action::Menu(options) => check_menu(seg, state, options, &has_state, report),
            }
        }
    }

    check_failure_handlers(seg, &has_state, report);
    check_state_reachability(seg, report);
}

fn check_menu(
    seg: &Segment,
    state: &State,
    options: &[MenuOption],
    has_state: &dyn Fn(&str) -> bool,
    report: &mut ValidationReport,
) {
    let loc = || Location::at(state.span, Some(&seg.id), Some(&state.id));
    if options.is_empty() {
        report.error("EMPTY_MENU", loc(), "menu has no options");
        return;
    }
    let limit = if seg.is_roleplay() { ROLEPLAY_MAX_OPTIONS } else { PEDAGOGY_MAX_OPTIONS };
    if options.len() > limit {
        report.error(
            "OPTION_LIMIT",
            loc(),
            format!("{} menu has {} options, at most {limit} allowed", seg.kind.as_str(), options.len()),
        );
    }
    let mut ids = HashSet::new();
    for opt in options {
        if !ids.insert(opt.id.as_str()) {
            report.error("DUPLICATE_OPTION", loc(), format!("option id '{}' repeated", opt.id));
        }
        let opt_loc = || Location::at(opt.span, Some(&seg.id), Some(&state.id));
        if let Target::State(t) = &opt.target {
            if !has_state(t) {
                report.error("DANGLING_TARGET", opt_loc(), format!("option targets unknown state '{t}'"));
            }
        }
        if opt.target == Target::Fail && seg.failure_handler_for(&state.id).is_none() {
            report.error(
                "NO_FAILURE_HANDLER",
                opt_loc(),
                format!("option fails but segment '{}' has no failure handler for state '{}'", seg.id, state.id),
            );
        }
        if seg.is_roleplay() {
            match opt.tag {
                AdherenceTag::Untagged => report.error(
                    "UNTAGGED_OPTION",
                    opt_loc(),
                    "role-play options must be tagged adherent or nonadherent",
                ),
                AdherenceTag::Adherent if opt.target == Target::Fail => report.error(
                    "ADHERENT_FAIL",
                    opt_loc(),
                    "an adherent option cannot fail the role-play",
                ),
                _ => {}
            }
        }
    }
    if seg.is_roleplay() {
        let adherent = options.iter().filter(|o| o.tag == AdherenceTag::Adherent).count();
        if adherent != 1 {
            report.error(
                "ADHERENCE_COUNT",
                loc(),
                format!("role-play menu needs exactly one adherent option, found {adherent}"),
            );
        }
    }
}

fn check_failure_handlers(seg: &Segment, has_state: &dyn Fn(&str) -> bool, report: &mut ValidationReport) {
    let mut defaults = 0;
    let mut claimed: BTreeMap<&str, usize> = BTreeMap::new();
    for (i, handler) in seg.failure_handlers.iter().enumerate() {
        let loc = || Location::at(handler.span, Some(&seg.id), None);
        if handler.lines.is_empty() {
            report.error("EMPTY_HANDLER", loc(), "failure handler has no lines");
        }
        if handler.for_states.is_empty() {
            defaults += 1;
            if defaults > 1 {
                report.error("DUPLICATE_DEFAULT_HANDLER", loc(), "segment has more than one default failure handler");
            }
        }
        for s in &handler.for_states {
            if !has_state(s) {
                report.error("DANGLING_TARGET", loc(), format!("failure handler names unknown state '{s}'"));
            }
            if let Some(prev) = claimed.insert(s, i) {
                if prev != i {
                    report.error(
                        "OVERLAPPING_HANDLER",
                        loc(),
                        format!("state '{s}' is covered by more than one failure handler"),
                    );
                }
            }
        }
    }
}

/// Successor states of `index` within its segment.
fn state_successors(seg: &Segment, index: usize) -> Vec<usize> {
    let state = &seg.states[index];
    let mut out = Vec::new();
    let mut falls_through = true;
    for action in &state.actions {
        match action {
            Action::Goto(t) => {
                out.extend(seg.state_index(t));
                falls_through = false;
            }
            Action::Menu(options) => {
                for opt in options {
                    if let Target::State(t) = &opt.target {
                        out.extend(seg.state_index(t));
                    }
                }
                falls_through = false;
            }
            Action::End => falls_through = false,
            Action::Call { onfail, .. } => {
                if let Some(t) = onfail {
                    out.extend(seg.state_index(t));
                }
            }
            Action::Say(_) | Action::Recap(_) => {}
        }
    }
    if falls_through && index + 1 < seg.states.len() {
        out.push(index + 1);
    }
    out
}

fn check_state_reachability(seg: &Segment, report: &mut ValidationReport) {
    if seg.states.is_empty() {
        return;
    }
    let mut seen = vec![false; seg.states.len()];
    let mut stack = vec![0];
    seen[0] = true;
    while let Some(i) = stack.pop() {
        for next in state_successors(seg, i) {
            if !seen[next] {
                seen[next] = true;
                stack.push(next);
            }
        }
    }
    for (state, reached) in seg.states.iter().zip(seen) {
        if !reached {
            report.warning(
                "UNREACHABLE",
                Location::at(state.span, Some(&seg.id), Some(&state.id)),
                format!("state '{}' cannot be reached from the start of segment '{}'", state.id, seg.id),
            );
        }
    }
}

fn calls_of(seg: &Segment) -> impl Iterator<Item = (&State, &str)> {
    seg.states.iter().flat_map(|st| {
        st.actions.iter().filter_map(move |a| match a {
            Action::Call { segment, .. } => Some((st, segment.as_str())),
            _ => None,
        })
    })
}

fn check_call_cycles(ast: &ScriptAst, report: &mut ValidationReport) {
    #[derive(Clone, Copy, PartialEq)]
    enum Mark {
        New,
        Active,
        Done,
    }
    fn visit(ast: &ScriptAst, i: usize, marks: &mut [Mark], report: &mut ValidationReport) {
        marks[i] = Mark::Active;
        let seg = &ast.segments[i];
        for (state, callee) in calls_of(seg) {
            let Some(j) = ast.segment_index(callee) else { continue };
            match marks[j] {
                Mark::Active => report.error(
                    "CALL_CYCLE",
                    Location::at(state.span, Some(&seg.id), Some(&state.id)),
                    format!("call from '{}' to '{callee}' closes a cycle", seg.id),
                ),
                Mark::New => visit(ast, j, marks, report),
                Mark::Done => {}
            }
        }
        marks[i] = Mark::Done;
    }
    let mut marks = vec![Mark::New; ast.segments.len()];
    for i in 0..ast.segments.len() {
        if marks[i] == Mark::New {
            visit(ast, i, &mut marks, report);
        }
    }
}

fn check_segment_reachability(ast: &ScriptAst, report: &mut ValidationReport) {
    let Some(entry) = ast.segment_index(&ast.entry) else { return };
    let mut seen = vec![false; ast.segments.len()];
    let mut stack = vec![entry];
    seen[entry] = true;
    while let Some(i) = stack.pop() {
        for (_, callee) in calls_of(&ast.segments[i]) {
            if let Some(j) = ast.segment_index(callee) {
                if !seen[j] {
                    seen[j] = true;
                    stack.push(j);
                }
            }
        }
    }
    for (seg, reached) in ast.segments.iter().zip(seen) {
        if !reached {
            report.warning(
                "UNREACHABLE_SEGMENT",
                Location::at(seg.span, Some(&seg.id), None),
                format!("segment '{}' is never called from the entry segment", seg.id),
            );
        }
    }
}
