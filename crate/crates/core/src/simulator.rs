//! Scripted trainees: drive the engine with a choice policy to exercise a
//! dialogue graph and collect turn and mistake statistics.

use std::collections::BTreeMap;
use std::io::{self, Write};

use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::{
    advance, start_session, Bindings, EngineConfig, EngineError, EventKind, Mode, Program, SessionState, SessionStatus,
    TurnEvent,
};
use crate::script::{AdherenceTag, MenuOption};

/// Maximum number of choices one simulated session may make.
pub const DEFAULT_SIM_STEP_BOUND: usize = 100_000;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("session did not finish within {0} choices")]
    StepBoundExceeded(usize),
    #[error("probability {0} is outside [0, 1]")]
    InvalidProbability(f64),
    #[error("runs must be at least 1")]
    NoRuns,
    #[error(transparent)]
    Engine(#[from] EngineError),
}

impl SimError {
    pub fn code(&self) -> &'static str {
        match self {
            SimError::StepBoundExceeded(_) => "STEP_BOUND_EXCEEDED",
            SimError::InvalidProbability(_) => "INVALID_PROBABILITY",
            SimError::NoRuns => "NO_RUNS",
            SimError::Engine(EngineError::StepBoundExceeded(_)) => "STEP_BOUND_EXCEEDED",
            SimError::Engine(e) => e.code(),
        }
    }
}

/// One entry of a scripted policy.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScriptedChoice {
    Adherent,
    Nonadherent,
    /// A literal option id such as `o2`.
    Id(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PolicyKind {
    AlwaysAdherent,
    AlwaysNonadherentOnceThenAdherent,
    Random { p_nonadherent: f64 },
    Scripted { choices: Vec<ScriptedChoice> },
}

/// How the simulated trainee answers menus.
///
/// Only menus with adherence tags consult the policy; untagged (teaching)
/// menus always take their first option so navigation is reproducible.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Policy {
    #[serde(flatten)]
    pub kind: PolicyKind,
    pub seed: u64,
}

impl Policy {
    pub fn always_adherent() -> Self {
        Policy { kind: PolicyKind::AlwaysAdherent, seed: 0 }
    }

    pub fn nonadherent_once() -> Self {
        Policy { kind: PolicyKind::AlwaysNonadherentOnceThenAdherent, seed: 0 }
    }

    pub fn random(p_nonadherent: f64, seed: u64) -> Self {
        Policy { kind: PolicyKind::Random { p_nonadherent }, seed }
    }

    pub fn scripted(choices: Vec<ScriptedChoice>) -> Self {
        Policy { kind: PolicyKind::Scripted { choices }, seed: 0 }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    fn check(&self) -> Result<(), SimError> {
        match self.kind {
            PolicyKind::Random { p_nonadherent: p } if !(0.0..=1.0).contains(&p) => Err(SimError::InvalidProbability(p)),
            _ => Ok(()),
        }
    }
}

struct Chooser<'a> {
    policy: &'a Policy,
    rng: Xoshiro256PlusPlus,
    tagged_seen: usize,
}

enum Pick {
    Option(String),
    Exhausted,
}

impl<'a> Chooser<'a> {
    fn new(policy: &'a Policy) -> Self {
        Chooser { policy, rng: Xoshiro256PlusPlus::seed_from_u64(policy.seed), tagged_seen: 0 }
    }

    fn pick(&mut self, menu: &[MenuOption]) -> Pick {
        let by_tag = |tag| menu.iter().find(|o| o.tag == tag).map(|o| o.id.clone());
        if menu.iter().all(|o| o.tag == AdherenceTag::Untagged) {
            return Pick::Option(menu[0].id.clone());
        }
        let index = self.tagged_seen;
        self.tagged_seen += 1;
        let want_bad = match &self.policy.kind {
            PolicyKind::AlwaysAdherent => false,
            PolicyKind::AlwaysNonadherentOnceThenAdherent => index == 0,
            PolicyKind::Random { p_nonadherent } => self.rng.random_bool(*p_nonadherent),
            PolicyKind::Scripted { choices } => match choices.get(index) {
                None => return Pick::Exhausted,
                Some(ScriptedChoice::Id(id)) => return Pick::Option(id.clone()),
                Some(c) => *c == ScriptedChoice::Nonadherent,
            },
        };
        let (first, second) = if want_bad {
            (AdherenceTag::Nonadherent, AdherenceTag::Adherent)
        } else {
            (AdherenceTag::Adherent, AdherenceTag::Nonadherent)
        };
        let id = by_tag(first).or_else(|| by_tag(second)).unwrap_or_else(|| menu[0].id.clone());
        Pick::Option(id)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimConfig {
    pub step_bound: usize,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig { step_bound: DEFAULT_SIM_STEP_BOUND }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimTrace {
    pub seed: u64,
    pub events: Vec<TurnEvent>,
    pub mistakes: u32,
    pub turns: u32,
    pub failures: u32,
    pub completed: bool,
    pub per_skill_turns: BTreeMap<String, u32>,
    pub per_segment_turns: BTreeMap<String, u32>,
    pub final_state: SessionState,
}

pub fn simulate(program: &Program, mode: Mode, policy: &Policy) -> Result<SimTrace, SimError> {
    simulate_with(program, mode, policy, Bindings::new(), SimConfig::default())
}

pub fn simulate_with(
    program: &Program,
    mode: Mode,
    policy: &Policy,
    bindings: Bindings,
    config: SimConfig,
) -> Result<SimTrace, SimError> {
    policy.check()?;
    let engine = EngineConfig::new(format!("sim-{}", policy.seed));
    let (mut state, mut events) = start_session(program, mode, bindings, &engine)?;
    let mut chooser = Chooser::new(policy);
    let mut steps = 0;
    while state.status == SessionStatus::AwaitingChoice {
        steps += 1;
        if steps > config.step_bound {
            return Err(SimError::StepBoundExceeded(config.step_bound));
        }
        let frame = state.stack.last().expect("awaiting session has a frame");
        let menu = program
            .segment(&frame.segment)
            .and_then(|s| s.state(&frame.state))
            .and_then(|s| s.menu())
            .ok_or_else(|| EngineError::InconsistentState("awaiting a choice without a menu".into()))?;
        let id = match chooser.pick(menu) {
            Pick::Option(id) => id,
            Pick::Exhausted => break,
        };
        let (next, new_events) = advance(program, &state, Some(&id))?;
        state = next;
        events.extend(new_events);
    }
    state.check_invariants().map_err(EngineError::InconsistentState)?;
    Ok(trace(program, policy.seed, events, state))
}

fn trace(program: &Program, seed: u64, events: Vec<TurnEvent>, state: SessionState) -> SimTrace {
    let mut per_skill_turns = BTreeMap::new();
    let mut per_segment_turns = BTreeMap::new();
    for e in events.iter().filter(|e| e.kind.is_turn()) {
        *per_segment_turns.entry(e.segment.clone()).or_insert(0) += 1;
        if let Some(skill) = program.segment(&e.segment).and_then(|s| s.skill.as_ref()) {
            *per_skill_turns.entry(skill.clone()).or_insert(0) += 1;
        }
    }
    SimTrace {
        seed,
        mistakes: state.mistake_count,
        turns: state.turn_counter,
        failures: events.iter().filter(|e| e.kind == EventKind::SegmentFailed).count() as u32,
        completed: state.status == SessionStatus::Completed,
        per_skill_turns,
        per_segment_turns,
        events,
        final_state: state,
    }
}

/// The per-run figures kept by batch runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunOutcome {
    pub seed: u64,
    pub mistakes: u32,
    pub turns: u32,
    pub failures: u32,
    pub completed: bool,
}

impl From<&SimTrace> for RunOutcome {
    fn from(t: &SimTrace) -> Self {
        RunOutcome { seed: t.seed, mistakes: t.mistakes, turns: t.turns, failures: t.failures, completed: t.completed }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchSummary {
    pub runs: usize,
    pub completed_runs: usize,
    pub completion_rate: f64,
    pub mean_mistakes: f64,
    pub sd_mistakes: f64,
    pub mean_turns: f64,
    pub sd_turns: f64,
}

/// Mean and sample standard deviation.
fn mean_sd(xs: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = xs.clone().count() as f64;
    let mean = xs.clone().sum::<f64>() / n;
    if n < 2.0 {
        return (mean, 0.0);
    }
    let var = xs.map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

impl BatchSummary {
    pub fn from_outcomes(outcomes: &[RunOutcome]) -> Self {
        let runs = outcomes.len();
        let completed_runs = outcomes.iter().filter(|o| o.completed).count();
        let (mean_mistakes, sd_mistakes) = mean_sd(outcomes.iter().map(|o| f64::from(o.mistakes)));
        let (mean_turns, sd_turns) = mean_sd(outcomes.iter().map(|o| f64::from(o.turns)));
        BatchSummary {
            runs,
            completed_runs,
            completion_rate: completed_runs as f64 / runs as f64,
            mean_mistakes,
            sd_mistakes,
            mean_turns,
            sd_turns,
        }
    }
}

/// Run `n_runs` sessions with seeds `policy.seed`, `policy.seed + 1`, …,
/// returning outcomes sorted by seed.
pub fn batch_runs(program: &Program, mode: Mode, policy: &Policy, n_runs: usize) -> Result<Vec<RunOutcome>, SimError> {
    if n_runs == 0 {
        return Err(SimError::NoRuns);
    }
    let one = |i: usize| {
        let p = policy.clone().with_seed(policy.seed.wrapping_add(i as u64));
        simulate(program, mode, &p).map(|t| RunOutcome::from(&t))
    };
    #[cfg(feature = "parallel")]
    let outcomes: Result<Vec<_>, _> = {
        use rayon::prelude::*;
        (0..n_runs).into_par_iter().map(one).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let outcomes: Result<Vec<_>, _> = (0..n_runs).map(one).collect();
    outcomes
}

pub fn batch_stats(program: &Program, mode: Mode, policy: &Policy, n_runs: usize) -> Result<BatchSummary, SimError> {
    Ok(BatchSummary::from_outcomes(&batch_runs(program, mode, policy, n_runs)?))
}

#[derive(Serialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum TraceLine<'a> {
    Header { script: &'a str, mode: Mode, policy: &'a Policy, runs: usize },
    Run { seed: u64, mistakes: u32, turns: u32, completed: bool },
    Event { seed: u64, #[serde(flatten)] event: &'a TurnEvent },
    Summary(&'a BatchSummary),
}

/// Writes simulation traces as JSON lines: a header, then per run a `run`
/// line followed by its events, then a summary.
pub struct TraceWriter<W: Write> {
    out: W,
}

impl<W: Write> TraceWriter<W> {
    pub fn new(out: W) -> Self {
        TraceWriter { out }
    }

    fn line(&mut self, line: &TraceLine<'_>) -> io::Result<()> {
        serde_json::to_writer(&mut self.out, line)?;
        self.out.write_all(b"\n")
    }

    pub fn header(&mut self, script: &str, mode: Mode, policy: &Policy, runs: usize) -> io::Result<()> {
        self.line(&TraceLine::Header { script, mode, policy, runs })
    }

    pub fn run(&mut self, t: &SimTrace) -> io::Result<()> {
        self.line(&TraceLine::Run { seed: t.seed, mistakes: t.mistakes, turns: t.turns, completed: t.completed })?;
        for event in &t.events {
            self.line(&TraceLine::Event { seed: t.seed, event })?;
        }
        Ok(())
    }

    pub fn summary(&mut self, s: &BatchSummary) -> io::Result<()> {
        self.line(&TraceLine::Summary(s))?;
        self.out.flush()
    }

    pub fn into_inner(self) -> W {
        self.out
    }
}
