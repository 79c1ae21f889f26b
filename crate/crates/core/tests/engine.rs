use micoach_core::curriculum::{self, SAMPLE_SCRIPT};
use micoach_core::engine::*;
use micoach_core::script::{self, adherent_path, AdherenceTag, Speaker};

fn ana() -> Bindings {
    [("user.first_name".to_string(), "Ana".to_string())].into_iter().collect()
}


/// Id of the option on the pending menu with the given tag, falling back to
/// the first option for untagged menus.
fn pick(program: &Program, state: &SessionState, tag: AdherenceTag) -> String {
    let frame = state.stack.last().unwrap();
    let seg = program.segment(&frame.segment).unwrap();
    let st = seg.state(&frame.state).unwrap();
    let menu = st.menu().unwrap();
    menu.iter().find(|o| o.tag == tag).unwrap_or(&menu[0]).id.clone()
}

/// Answer menus adherently until a menu of `segment` is pending.
fn run_until_menu_in(program: &Program, mut state: SessionState, segment: &str) -> (SessionState, Vec<TurnEvent>) {
    let mut log = Vec::new();
    while state.stack.last().map(|f| f.segment.as_str()) != Some(segment) {
        let id = pick(program, &state, AdherenceTag::Adherent);
        let (next, events) = advance(program, &state, Some(&id)).unwrap();
        log.extend(events);
        state = next;
        assert_ne!(state.status, SessionStatus::Completed, "never reached {segment}");
    }
    (state, log)
}

fn kinds(events: &[TurnEvent]) -> Vec<EventKind> {
    events.iter().map(|e| e.kind).collect()
}

#[test]
fn roleplay_session_greets_by_name_and_waits_for_menu() {
    let cur = curriculum::bundled();
    let (state, events) = start_session(&cur.program, Mode::Roleplay, ana(), &EngineConfig::new("s1")).unwrap();
    assert_eq!(events[0].kind, EventKind::AgentUtterance);
    assert_eq!(events[0].speaker.as_deref(), Some("clara"));
    assert!(events[0].text.as_deref().unwrap().contains("Ana"));
    assert_eq!(events.last().unwrap().kind, EventKind::MenuShown);
    assert!(events[..events.len() - 1].iter().all(|e| e.kind == EventKind::AgentUtterance));
    assert_eq!(state.status, SessionStatus::AwaitingChoice);
    assert_eq!(state.last_seq, events.len() as u64);
    assert_eq!(state.turn_counter, events.len() as u32 - 1);
    let seqs: Vec<u64> = events.iter().map(|e| e.seq).collect();
    assert_eq!(seqs, (1..=events.len() as u64).collect::<Vec<_>>());
}

#[test]
fn video_mode_is_a_complete_generic_playthrough() {
    let cur = curriculum::bundled();
    let (state, events) = start_session(&cur.program, Mode::Video, ana(), &EngineConfig::new("v")).unwrap();
    assert_eq!(state.status, SessionStatus::Completed);
    assert_eq!(events.last().unwrap().kind, EventKind::SessionCompleted);
    assert!(events.iter().all(|e| !matches!(e.kind, EventKind::MenuShown | EventKind::ChoiceMade)));
    assert!(events.iter().all(|e| !e.text.as_deref().unwrap_or("").contains("Ana")));
    assert!(events.iter().filter(|e| e.text.is_some()).all(|e| e.display_seconds.is_some()));
    assert_eq!(state.mistake_count, 0);
    let progress = session_progress(&cur.program, &state);
    assert_eq!((progress.skills_completed, progress.skills_total), (6, 6));
    assert_eq!(progress.current_skill, None);
}

#[test]
fn video_roleplay_segments_play_exactly_their_adherent_path() {
    let cur = curriculum::bundled();
    let (_, events) = start_session(&cur.program, Mode::Video, Bindings::new(), &EngineConfig::default()).unwrap();
    for skill in &cur.manifest.skills {
        let expected: Vec<(Option<String>, String)> = adherent_path(cur.ast(), &skill.roleplay)
            .unwrap()
            .into_iter()
            .map(|step| {
                let speaker = match step.speaker {
                    Speaker::Agent(a) => Some(a),
                    Speaker::Trainee => None,
                };
                (speaker, step.text.generic_text())
            })
            .collect();
        let played: Vec<(Option<String>, String)> = events
            .iter()
            .filter(|e| e.segment == skill.roleplay && e.kind.is_turn())
            .map(|e| (e.speaker.clone(), e.text.clone().unwrap()))
            .collect();
        assert_eq!(played, expected, "{}", skill.roleplay);
    }
}

#[test]
fn video_pacing_hints_follow_reading_rate() {
    let cur = curriculum::bundled();
    let (_, events) = start_session(&cur.program, Mode::Video, Bindings::new(), &EngineConfig::default()).unwrap();
    for e in events.iter().filter(|e| e.text.is_some()) {
        let words = e.text.as_ref().unwrap().split_whitespace().count() as f64;
        assert_eq!(e.display_seconds.unwrap(), (words / 2.5).ceil() as u32);
    }
}

#[test]
fn didactic_mode_skips_every_roleplay_segment() {
    let cur = curriculum::bundled();
    let rp: Vec<&str> = cur.manifest.skills.iter().map(|s| s.roleplay.as_str()).collect();
    let (mut state, mut log) = start_session(&cur.program, Mode::Didactic, ana(), &EngineConfig::default()).unwrap();
    while state.status != SessionStatus::Completed {
        let id = pick(&cur.program, &state, AdherenceTag::Adherent);
        let (next, events) = advance(&cur.program, &state, Some(&id)).unwrap();
        log.extend(events);
        state = next;
    }
    assert!(log.iter().all(|e| !rp.contains(&e.segment.as_str())));
    assert!(log.iter().all(|e| e.kind != EventKind::RecapUtterance));
    let progress = session_progress(&cur.program, &state);
    assert_eq!((progress.skills_completed, progress.skills_total), (6, 6));
}

#[test]
fn nonadherent_choice_fails_segment_and_offers_retry() {
    let cur = curriculum::bundled();
    let (state, _) = start_session(&cur.program, Mode::Roleplay, ana(), &EngineConfig::default()).unwrap();
    let (state, _) = run_until_menu_in(&cur.program, state, "rp_listening");
    let before = state.mistake_count;
    let bad = pick(&cur.program, &state, AdherenceTag::Nonadherent);
    let (after, events) = advance(&cur.program, &state, Some(&bad)).unwrap();
    assert_eq!(
        kinds(&events),
        vec![
            EventKind::ChoiceMade,
            EventKind::FailureUtterance,
            EventKind::SegmentFailed,
            EventKind::AgentUtterance,
            EventKind::MenuShown
        ]
    );
    assert_eq!(events[0].adherence, Some(Adherence::Nonadherent));
    assert_eq!(events[1].speaker.as_deref(), Some("mary"));
    assert!(events[1].text.as_deref().unwrap().ends_with("I have to go."));
    assert_eq!(events[2].segment, "rp_listening");
    assert_eq!(events[3].speaker.as_deref(), Some("clara"));
    assert_eq!(events[4].options.as_ref().unwrap().len(), 1);
    assert_eq!(after.mistake_count, before + 1);
    assert_eq!(after.per_segment_mistakes["rp_listening"], 1);
    assert_eq!(after.stack.last().unwrap().state, "retry");

    // retrying restarts the role-play from its first line
    let retry = pick(&cur.program, &after, AdherenceTag::Untagged);
    let (again, events) = advance(&cur.program, &after, Some(&retry)).unwrap();
    let first_line = events.iter().find(|e| e.kind == EventKind::AgentUtterance).unwrap();
    assert!(first_line.text.as_deref().unwrap().starts_with("I've always been healthy"));
    assert_eq!(again.stack.last().unwrap().segment, "rp_listening");
    assert_eq!(again.stack.last().unwrap().state, "s1");
}

#[test]
fn adherent_choice_mid_segment_continues_conversation() {
    let cur = curriculum::bundled();
    let (state, _) = start_session(&cur.program, Mode::Roleplay, ana(), &EngineConfig::default()).unwrap();
    let (state, _) = run_until_menu_in(&cur.program, state, "rp_listening");
    let good = pick(&cur.program, &state, AdherenceTag::Adherent);
    let (_, events) = advance(&cur.program, &state, Some(&good)).unwrap();
    assert_eq!(kinds(&events), vec![EventKind::ChoiceMade, EventKind::AgentUtterance, EventKind::MenuShown]);
    assert_eq!(events[0].adherence, Some(Adherence::Adherent));
    assert_eq!(events[0].speaker, None);
    assert_eq!(events[1].speaker.as_deref(), Some("mary"));
}

#[test]
fn unknown_option_is_rejected() {
    let cur = curriculum::bundled();
    let (state, _) = start_session(&cur.program, Mode::Roleplay, ana(), &EngineConfig::default()).unwrap();
    let snapshot = state.clone();
    let err = advance(&cur.program, &state, Some("o9")).unwrap_err();
    assert_eq!(err.code(), "UNKNOWN_OPTION");
    assert_eq!(state, snapshot);
    assert_eq!(advance(&cur.program, &state, None).unwrap_err().code(), "CHOICE_REQUIRED");
}

#[test]
fn completed_sessions_halt() {
    let cur = curriculum::bundled();
    let (state, _) = start_session(&cur.program, Mode::Video, Bindings::new(), &EngineConfig::default()).unwrap();
    assert_eq!(advance(&cur.program, &state, Some("o1")).unwrap_err(), EngineError::EngineHalted);
    assert_eq!(advance(&cur.program, &state, None).unwrap_err(), EngineError::EngineHalted);
}

#[test]
fn choice_on_active_session_is_unexpected() {
    let cur = curriculum::bundled();
    let (mut state, _) = start_session(&cur.program, Mode::Roleplay, ana(), &EngineConfig::default()).unwrap();
    state.status = SessionStatus::Active;
    assert_eq!(advance(&cur.program, &state, Some("o1")).unwrap_err(), EngineError::ChoiceNotExpected);
}

#[test]
fn progress_counts_skills_and_mistakes() {
    let cur = curriculum::bundled();
    let (state, _) = start_session(&cur.program, Mode::Roleplay, ana(), &EngineConfig::default()).unwrap();
    let p = session_progress(&cur.program, &state);
    assert_eq!(p, ProgressView {
        skills_total: 6,
        skills_completed: 0,
        current_skill: Some("rapport".into()),
        mistakes: 0,
        elapsed_turns: state.turn_counter,
    });

    // two failures in the first role-play
    let (mut state, _) = run_until_menu_in(&cur.program, state, "rp_rapport");
    for _ in 0..2 {
        let bad = pick(&cur.program, &state, AdherenceTag::Nonadherent);
        state = advance(&cur.program, &state, Some(&bad)).unwrap().0;
        let retry = pick(&cur.program, &state, AdherenceTag::Untagged);
        state = advance(&cur.program, &state, Some(&retry)).unwrap().0;
    }
    let p = session_progress(&cur.program, &state);
    assert_eq!(p.mistakes, 2);
    assert_eq!(p.skills_completed, 0);

    let (state, _) = run_until_menu_in(&cur.program, state, "rp_permission");
    let p = session_progress(&cur.program, &state);
    assert_eq!(p.skills_completed, 1);
    assert_eq!(p.current_skill.as_deref(), Some("permission"));
}

#[test]
fn missing_binding_rejected_at_start() {
    let src = SAMPLE_SCRIPT.replace("{user.first_name|there}", "{user.first_name}");
    let program = Program::new(script::parse(&src).unwrap()).unwrap();
    let err = start_session(&program, Mode::Roleplay, Bindings::new(), &EngineConfig::default()).unwrap_err();
    assert_eq!(err, EngineError::MissingBinding("user.first_name".into()));
    assert!(start_session(&program, Mode::Roleplay, ana(), &EngineConfig::default()).is_ok());
    // video never utters personal data, so the fallback-less name is unusable
    assert!(start_session(&program, Mode::Video, ana(), &EngineConfig::default()).is_err());
}

#[test]
fn invalid_scripts_cannot_run() {
    let src = SAMPLE_SCRIPT.replace("failure for m1", "failure for m1, m2").replace("failure {", "failure for m2 {");
    let err = Program::new(script::parse(&src).unwrap()).unwrap_err();
    assert_eq!(err.code(), "UNVALIDATED_SCRIPT");
}

#[test]
fn sample_adherent_path_alternates() {
    let ast = script::parse(SAMPLE_SCRIPT).unwrap();
    let path = adherent_path(&ast, "listen").unwrap();
    let speakers: Vec<bool> = path.iter().map(|s| s.speaker == Speaker::Trainee).collect();
    assert_eq!(speakers, vec![false, true, false, true, false, false]);
    assert_eq!(path[5].text.generic_text(), "Thanks for hearing me out.");
    assert_eq!(adherent_path(&ast, "lesson").unwrap_err().code(), "NOT_ROLEPLAY");
}

#[test]
fn roleplay_entry_segment_restarts_itself_on_failure() {
    let src = SAMPLE_SCRIPT.replace("entry lesson", "entry listen");
    let program = Program::new(script::parse(&src).unwrap()).unwrap();
    let (state, _) = start_session(&program, Mode::Roleplay, Bindings::new(), &EngineConfig::default()).unwrap();
    let (state, events) = advance(&program, &state, Some("o2")).unwrap();
    assert_eq!(
        kinds(&events),
        vec![
            EventKind::ChoiceMade,
            EventKind::FailureUtterance,
            EventKind::SegmentFailed,
            EventKind::AgentUtterance,
            EventKind::MenuShown
        ]
    );
    assert_eq!(events[1].text.as_deref(), Some("Well, I didn't ask for a lecture. Sorry, I have to go."));
    assert_eq!(state.stack.len(), 1);
    assert_eq!(state.stack[0].state, "m1");

    // second menu falls back to the default handler
    let (state, _) = advance(&program, &state, Some("o1")).unwrap();
    let (_, events) = advance(&program, &state, Some("o1")).unwrap();
    assert_eq!(events[1].text.as_deref(), Some("Hmm. I should get going, I have to go."));
}

#[test]
fn recap_replays_prior_roleplays_without_menus() {
    let cur = curriculum::bundled();
    let (state, _) = start_session(&cur.program, Mode::Roleplay, ana(), &EngineConfig::default()).unwrap();
    let (_, log) = run_until_menu_in(&cur.program, state, "rp_permission");
    let recaps: Vec<&TurnEvent> = log.iter().filter(|e| e.kind == EventKind::RecapUtterance).collect();
    let rapport_path = adherent_path(cur.ast(), "rp_rapport").unwrap();
    assert_eq!(recaps.len(), rapport_path.len());
    assert!(recaps.iter().all(|e| e.segment == "teach_permission"));
    assert!(recaps[0].text.as_deref().unwrap().contains("Ana"));
    assert_eq!(recaps[1].speaker, None);
}

#[test]
fn trainee_view_has_no_adherence_field() {
    let cur = curriculum::bundled();
    let (state, _) = start_session(&cur.program, Mode::Roleplay, ana(), &EngineConfig::default()).unwrap();
    let (state, _) = run_until_menu_in(&cur.program, state, "rp_rapport");
    let bad = pick(&cur.program, &state, AdherenceTag::Nonadherent);
    let (_, events) = advance(&cur.program, &state, Some(&bad)).unwrap();
    let full = serde_json::to_string(&events).unwrap();
    assert!(full.contains("\"adherence\":\"nonadherent\""));
    let view: Vec<TraineeEvent> = events.iter().map(TurnEvent::trainee_view).collect();
    let json = serde_json::to_string(&view).unwrap();
    assert!(!json.contains("adheren"));
}
