use crate::script::{adherent_path, Action, AdherenceTag, MenuOption, Segment, Speaker, Target};

use super::*;

/// Begin a session at the script's entry segment.
///
/// Runs until the first menu. In video mode every menu is answered by the
/// engine, so the returned stream is the complete session.
pub fn start_session(
    program: &Program,
    mode: Mode,
    bindings: Bindings,
    config: &EngineConfig,
) -> Result<(SessionState, Vec<TurnEvent>), EngineError> {
    for template in program.ast().templates() {
        render_template(template, &bindings, mode)?;
    }
    let entry = program
        .segment(&program.ast().entry)
        .ok_or_else(|| EngineError::InconsistentState("entry segment missing".into()))?;
    let state = SessionState {
        session_id: config.session_id.clone(),
        mode,
        stack: vec![first_frame(entry, None)],
        bindings,
        mistake_count: 0,
        per_segment_mistakes: Default::default(),
        status: SessionStatus::Active,
        turn_counter: 0,
        last_seq: 0,
        completed_segments: Default::default(),
    };
    let mut run = Run { program, state, events: Vec::new(), steps: 0, bound: config.step_bound };
    run.run()?;
    Ok(run.finish())
}

/// Apply the trainee's choice (or continue an active session).
///
/// On error the input state is left untouched.
pub fn advance(
    program: &Program,
    state: &SessionState,
    choice: Option<&str>,
) -> Result<(SessionState, Vec<TurnEvent>), EngineError> {
    let mut run = Run {
        program,
        state: state.clone(),
        events: Vec::new(),
        steps: 0,
        bound: DEFAULT_ENGINE_STEP_BOUND,
    };
    match (state.status, choice) {
        (SessionStatus::Completed, _) => return Err(EngineError::EngineHalted),
        (SessionStatus::AwaitingChoice, None) => return Err(EngineError::ChoiceRequired),
        (SessionStatus::AwaitingChoice, Some(id)) => run.choose(id)?,
        (SessionStatus::Active, Some(_)) => return Err(EngineError::ChoiceNotExpected),
        (SessionStatus::Active, None) => {}
    }
    run.run()?;
    Ok(run.finish())
}

pub fn session_progress(program: &Program, state: &SessionState) -> ProgressView {
    let ast = program.ast();
    let skills = ast.skills();
    let is_done = |skill: &str| {
        ast.segments
            .iter()
            .filter(|s| s.skill.as_deref() == Some(skill))
            .all(|s| state.completed_segments.contains(&s.id))
    };
    let completed = skills.iter().filter(|s| is_done(s)).count();
    ProgressView {
        skills_total: skills.len() as u32,
        skills_completed: completed as u32,
        current_skill: skills.iter().find(|s| !is_done(s)).map(|s| s.to_string()),
        mistakes: state.mistake_count,
        elapsed_turns: state.turn_counter,
    }
}

fn first_frame(seg: &Segment, onfail: Option<String>) -> Frame {
    Frame {
        segment: seg.id.clone(),
        state: seg.states.first().map(|s| s.id.clone()).unwrap_or_default(),
        action_index: 0,
        onfail,
    }
}

/// Reading-pace hint: 150 words per minute, rounded up to whole seconds.
pub fn display_seconds(text: &str) -> u32 {
    let words = text.split_whitespace().count() as u32;
    (words * 2).div_ceil(5)
}

struct Run<'p> {
    program: &'p Program,
    state: SessionState,
    events: Vec<TurnEvent>,
    steps: usize,
    bound: usize,
}

struct Emit<'a> {
    kind: EventKind,
    segment: &'a str,
    speaker: Option<&'a str>,
    text: Option<String>,
    options: Option<Vec<OptionView>>,
    adherence: Option<Adherence>,
}

impl<'a> Emit<'a> {
    fn new(kind: EventKind, segment: &'a str) -> Self {
        Emit { kind, segment, speaker: None, text: None, options: None, adherence: None }
    }
}

impl<'p> Run<'p> {
    fn finish(self) -> (SessionState, Vec<TurnEvent>) {
        debug_assert_eq!(self.state.check_invariants(), Ok(()));
        (self.state, self.events)
    }

    fn emit(&mut self, e: Emit<'_>) {
        self.state.last_seq += 1;
        if e.kind.is_turn() {
            self.state.turn_counter += 1;
        }
        let display_seconds = match (self.state.mode, &e.text) {
            (Mode::Video, Some(text)) => Some(display_seconds(text)),
            _ => None,
        };
        self.events.push(TurnEvent {
            seq: self.state.last_seq,
            kind: e.kind,
            speaker: e.speaker.map(str::to_owned),
            text: e.text,
            options: e.options,
            segment: e.segment.to_owned(),
            adherence: e.adherence,
            display_seconds,
        });
    }

    fn render(&self, t: &crate::script::Template) -> Result<String, EngineError> {
        render_template(t, &self.state.bindings, self.state.mode)
    }

    fn top(&mut self) -> &mut Frame {
        self.state.stack.last_mut().expect("active session has a frame")
    }

    fn goto(&mut self, state: &str) {
        let top = self.top();
        top.state = state.to_owned();
        top.action_index = 0;
    }

    fn current(&self) -> Result<(&'p Segment, usize, usize), EngineError> {
        let frame = self
            .state
            .stack
            .last()
            .ok_or_else(|| EngineError::InconsistentState("empty stack".into()))?;
        let seg = self
            .program
            .segment(&frame.segment)
            .ok_or_else(|| EngineError::InconsistentState(format!("unknown segment '{}'", frame.segment)))?;
        let index = self.program.state_index(&frame.segment, &frame.state).ok_or_else(|| {
            EngineError::InconsistentState(format!("unknown state '{}' in '{}'", frame.state, frame.segment))
        })?;
        Ok((seg, index, frame.action_index))
    }

    fn run(&mut self) -> Result<(), EngineError> {
        while self.state.status == SessionStatus::Active {
            self.steps += 1;
            if self.steps > self.bound {
                return Err(EngineError::StepBoundExceeded(self.bound));
            }
            let (seg, state_index, action_index) = self.current()?;
            let state = &seg.states[state_index];
            match state.actions.get(action_index) {
                None => match seg.states.get(state_index + 1) {
                    Some(next) => self.goto(&next.id),
                    None => self.complete_segment(seg),
                },
                Some(Action::Say(t)) => {
                    let text = self.render(t)?;
                    self.emit(Emit {
                        speaker: Some(&seg.agent),
                        text: Some(text),
                        ..Emit::new(EventKind::AgentUtterance, &seg.id)
                    });
                    self.top().action_index += 1;
                }
                Some(Action::Menu(options)) => {
                    if self.state.mode == Mode::Video {
                        let opt = options
                            .iter()
                            .find(|o| o.tag == AdherenceTag::Adherent)
                            .unwrap_or(&options[0]);
                        let label = self.render(&opt.label)?;
                        self.emit(Emit { text: Some(label), ..Emit::new(EventKind::TraineeUtterance, &seg.id) });
                        self.follow(seg, &state.id, opt);
                    } else {
                        let options = options
                            .iter()
                            .map(|o| Ok(OptionView { id: o.id.clone(), label: self.render(&o.label)? }))
                            .collect::<Result<Vec<_>, EngineError>>()?;
                        self.emit(Emit { options: Some(options), ..Emit::new(EventKind::MenuShown, &seg.id) });
                        self.state.status = SessionStatus::AwaitingChoice;
                    }
                }
                Some(Action::Goto(target)) => self.goto(target),
                Some(Action::Call { segment, onfail }) => {
                    self.top().action_index += 1;
                    let callee = self.program.segment(segment).ok_or_else(|| {
                        EngineError::InconsistentState(format!("unknown segment '{segment}'"))
                    })?;
                    if self.state.mode == Mode::Didactic && callee.is_roleplay() {
                        // practice is skipped; the skill still counts as covered
                        self.state.completed_segments.insert(callee.id.clone());
                    } else {
                        self.state.stack.push(first_frame(callee, onfail.clone()));
                    }
                }
                Some(Action::Recap(target)) => {
                    self.top().action_index += 1;
                    if self.state.mode != Mode::Didactic {
                        self.recap(seg, target)?;
                    }
                }
                Some(Action::End) => self.complete_segment(seg),
            }
        }
        Ok(())
    }

    fn recap(&mut self, seg: &'p Segment, target: &str) -> Result<(), EngineError> {
        let path = adherent_path(self.program.ast(), target)
            .map_err(|e| EngineError::InconsistentState(e.to_string()))?;
        for step in path {
            let text = self.render(&step.text)?;
            let speaker = match &step.speaker {
                Speaker::Agent(id) => Some(id.as_str()),
                Speaker::Trainee => None,
            };
            self.emit(Emit { speaker, text: Some(text), ..Emit::new(EventKind::RecapUtterance, &seg.id) });
        }
        Ok(())
    }

    fn choose(&mut self, option_id: &str) -> Result<(), EngineError> {
        let (seg, state_index, action_index) = self.current()?;
        let state = &seg.states[state_index];
        let Some(Action::Menu(options)) = state.actions.get(action_index) else {
            return Err(EngineError::InconsistentState("awaiting a choice without a menu".into()));
        };
        let opt = options
            .iter()
            .find(|o| o.id == option_id)
            .ok_or_else(|| EngineError::UnknownOption(option_id.to_owned()))?;
        let label = self.render(&opt.label)?;
        let adherence = match opt.tag {
            AdherenceTag::Adherent => Some(Adherence::Adherent),
            AdherenceTag::Nonadherent => Some(Adherence::Nonadherent),
            AdherenceTag::Untagged => None,
        };
        self.emit(Emit {
            text: Some(label.clone()),
            options: Some(vec![OptionView { id: opt.id.clone(), label }]),
            adherence,
            ..Emit::new(EventKind::ChoiceMade, &seg.id)
        });
        if adherence == Some(Adherence::Nonadherent) {
            self.state.mistake_count += 1;
            *self.state.per_segment_mistakes.entry(seg.id.clone()).or_default() += 1;
        }
        self.state.status = SessionStatus::Active;
        self.follow(seg, &state.id, opt);
        Ok(())
    }

    fn follow(&mut self, seg: &'p Segment, from_state: &str, opt: &MenuOption) {
        match &opt.target {
            Target::State(s) => self.goto(s),
            Target::End => self.complete_segment(seg),
            Target::Fail => self.fail_segment(seg, from_state),
        }
    }

    fn complete_segment(&mut self, seg: &Segment) {
        self.state.stack.pop();
        self.emit(Emit::new(EventKind::SegmentCompleted, &seg.id));
        self.state.completed_segments.insert(seg.id.clone());
        if self.state.stack.is_empty() {
            let entry = &self.program.ast().entry;
            self.emit(Emit::new(EventKind::SessionCompleted, entry));
            self.state.status = SessionStatus::Completed;
        }
    }

    /// The agent leaves; control returns to the caller's retry state, or the
    /// segment restarts from its first state when no retry state is set.
    fn fail_segment(&mut self, seg: &'p Segment, from_state: &str) {
        if let Some(handler) = seg.failure_handler_for(from_state) {
            for line in &handler.lines {
                // templates were checked at session start
                let text = self.render(line).unwrap_or_else(|_| line.generic_text());
                self.emit(Emit {
                    speaker: Some(&seg.agent),
                    text: Some(text),
                    ..Emit::new(EventKind::FailureUtterance, &seg.id)
                });
            }
        }
        self.emit(Emit::new(EventKind::SegmentFailed, &seg.id));
        let failed = self.state.stack.pop().expect("failing segment has a frame");
        match (self.state.stack.last_mut(), failed.onfail) {
            (Some(caller), Some(retry)) => {
                caller.state = retry;
                caller.action_index = 0;
            }
            (_, onfail) => self.state.stack.push(first_frame(seg, onfail)),
        }
    }
}
