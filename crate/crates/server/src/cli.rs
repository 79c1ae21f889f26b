//! Implementations behind the `micoach` subcommands.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::Path;

use anyhow::{bail, Context, Result};
use micoach_core::curriculum::{self, curriculum_lint, load_curriculum, Curriculum};
use micoach_core::engine::{Mode, Program};
use micoach_core::scorer::{
    cronbach_alpha, icc_avg_consistency, score_transcript, AnnotatedTranscript, MitiScorecard, RatingsMatrix,
};
use micoach_core::script::{self, ValidationReport};
use micoach_core::simulator::{batch_runs, simulate, BatchSummary, Policy, PolicyKind, ScriptedChoice, TraceWriter};
use serde::Serialize;

/// The script or curriculum a command operates on: `bundled`, a
/// `.miscript` file, or a curriculum directory / manifest.
pub fn load_program(source: &str) -> Result<Program> {
    if source == "bundled" {
        return Ok(curriculum::bundled().program);
    }
    let path = Path::new(source);
    if path.is_dir() || path.extension().is_some_and(|e| e == "json") {
        return Ok(load_curriculum_dir(path)?.program);
    }
    let src = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let ast = script::parse(&src).map_err(|e| anyhow::anyhow!("{}:{e}", path.display()))?;
    Program::new(ast).map_err(|e| match e {
        micoach_core::engine::EngineError::UnvalidatedScript(report) => {
            anyhow::anyhow!("{} is invalid:\n{}", path.display(), format_report(&report))
        }
        other => other.into(),
    })
}

pub fn load_curriculum_dir(path: &Path) -> Result<Curriculum> {
    let (ast, manifest) = load_curriculum(path).map_err(|e| match e {
        curriculum::CurriculumError::Invalid(report) => {
            anyhow::anyhow!("curriculum at {} is invalid:\n{}", path.display(), format_report(&report))
        }
        other => anyhow::anyhow!("{}: {other}", path.display()),
    })?;
    Ok(Curriculum::from_parts(ast, manifest)?)
}

pub fn format_report(report: &ValidationReport) -> String {
    let line = |kind: &str, d: &script::Diagnostic| {
        let mut where_ = format!("{}:{}", d.location.line, d.location.column);
        if let Some(seg) = &d.location.segment {
            where_ += &format!(" {seg}");
            if let Some(st) = &d.location.state {
                where_ += &format!(".{st}");
            }
        }
        format!("{kind} {} at {where_}: {}", d.code, d.message)
    };
    report
        .errors
        .iter()
        .map(|d| line("error", d))
        .chain(report.warnings.iter().map(|d| line("warning", d)))
        .collect::<Vec<_>>()
        .join("\n")
}

/// Validate a script file, or lint a curriculum directory. Returns the
/// report; parse failures are errors.
pub fn validate_path(path: &Path) -> Result<ValidationReport> {
    if path.is_dir() || path.extension().is_some_and(|e| e == "json") {
        return match load_curriculum(path) {
            Ok((ast, manifest)) => Ok(curriculum_lint(&ast, &manifest)),
            Err(curriculum::CurriculumError::Invalid(report)) => Ok(report),
            Err(e) => bail!("{}: {e}", path.display()),
        };
    }
    let src = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let ast = script::parse(&src).map_err(|e| anyhow::anyhow!("{}:{e} [{}]", path.display(), e.kind.code()))?;
    Ok(script::validate(&ast))
}

#[derive(Debug, Serialize)]
pub struct Reliability {
    pub subjects: usize,
    pub raters: usize,
    pub cronbach_alpha: Option<f64>,
    pub icc_avg_consistency: Option<f64>,
}

#[derive(Debug, Serialize)]
pub struct ScoreOutput {
    pub scorecard: MitiScorecard,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ratings: Option<Reliability>,
}

pub fn score(transcript: &Path, ratings: Option<&Path>) -> Result<ScoreOutput> {
    let text = fs::read_to_string(transcript).with_context(|| format!("reading {}", transcript.display()))?;
    let t: AnnotatedTranscript =
        serde_json::from_str(&text).with_context(|| format!("parsing {}", transcript.display()))?;
    let scorecard = score_transcript(&t).map_err(|e| anyhow::anyhow!("{} [{}]", e, e.code()))?;
    let ratings = match ratings {
        None => None,
        Some(path) => {
            let csv = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            let m = RatingsMatrix::from_csv(&csv).map_err(|e| anyhow::anyhow!("{}: {e}", path.display()))?;
            Some(Reliability {
                subjects: m.n_subjects(),
                raters: m.n_raters(),
                cronbach_alpha: cronbach_alpha(&m).ok(),
                icc_avg_consistency: icc_avg_consistency(&m).ok(),
            })
        }
    };
    Ok(ScoreOutput { scorecard, ratings })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum PolicyName {
    AlwaysAdherent,
    NonadherentOnce,
    Random,
    Scripted,
}

#[derive(Debug, Clone)]
pub struct SimulateArgs {
    pub mode: Mode,
    pub policy: PolicyName,
    pub p: f64,
    pub choices: Option<String>,
    pub seed: u64,
    pub runs: usize,
    pub summary_only: bool,
}

pub fn parse_choices(list: &str) -> Result<Vec<ScriptedChoice>> {
    list.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| match s {
            "a" | "adherent" => Ok(ScriptedChoice::Adherent),
            "n" | "nonadherent" => Ok(ScriptedChoice::Nonadherent),
            id if id.starts_with('o') && id[1..].parse::<u32>().is_ok() => Ok(ScriptedChoice::Id(id.to_string())),
            other => bail!("unknown scripted choice '{other}' (use a, n or an option id like o2)"),
        })
        .collect()
}

pub fn build_policy(args: &SimulateArgs) -> Result<Policy> {
    let kind = match args.policy {
        PolicyName::AlwaysAdherent => PolicyKind::AlwaysAdherent,
        PolicyName::NonadherentOnce => PolicyKind::AlwaysNonadherentOnceThenAdherent,
        PolicyName::Random => PolicyKind::Random { p_nonadherent: args.p },
        PolicyName::Scripted => {
            let list = args.choices.as_deref().context("--policy scripted needs --choices")?;
            PolicyKind::Scripted { choices: parse_choices(list)? }
        }
    };
    Ok(Policy { kind, seed: args.seed })
}

/// Run the simulations, optionally writing a JSONL trace, and return the
/// batch summary.
pub fn simulate_to(program: &Program, script_name: &str, args: &SimulateArgs, out: Option<&Path>) -> Result<BatchSummary> {
    let policy = build_policy(args)?;
    let Some(out) = out else {
        return Ok(BatchSummary::from_outcomes(&batch_runs(program, args.mode, &policy, args.runs)?));
    };
    if args.runs == 0 {
        bail!("--runs must be at least 1");
    }
    let file = File::create(out).with_context(|| format!("creating {}", out.display()))?;
    let mut writer = TraceWriter::new(BufWriter::new(file));
    writer.header(script_name, args.mode, &policy, args.runs)?;
    let outcomes = if args.summary_only {
        batch_runs(program, args.mode, &policy, args.runs)?
    } else {
        let mut outcomes = Vec::with_capacity(args.runs);
        for i in 0..args.runs {
            let p = policy.clone().with_seed(policy.seed.wrapping_add(i as u64));
            let trace = simulate(program, args.mode, &p)?;
            writer.run(&trace)?;
            outcomes.push((&trace).into());
        }
        outcomes
    };
    let summary = BatchSummary::from_outcomes(&outcomes);
    writer.summary(&summary)?;
    Ok(summary)
}
