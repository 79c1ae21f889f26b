//! The bundled six-skill vaccination-conversation curriculum and the
//! authoring rules it must satisfy beyond generic script validation.

use std::collections::BTreeMap;
use std::ops::RangeInclusive;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::{EngineError, Program};
use crate::script::{self, adherent_path, Action, Location, ParseError, ScriptAst, SegmentKind, ValidationReport};

pub const BUNDLED_SCRIPT: &str = include_str!("../curriculum/mi_covid19.miscript");
pub const BUNDLED_MANIFEST: &str = include_str!("../curriculum/manifest.json");
/// Small lesson with a single two-menu role-play.
pub const SAMPLE_SCRIPT: &str = include_str!("../curriculum/sample.miscript");

/// Skills in teaching order.
pub const SKILL_ORDER: [&str; 6] = [
    "rapport",
    "permission",
    "vaccination_status",
    "open_questions",
    "active_listening",
    "sharing_experiences",
];

/// Target length of one role-play, in turns.
pub const TARGET_TURNS_PER_SKILL: usize = 12;
/// Accepted adherent-path length of a role-play segment.
pub const TURN_BUDGET: RangeInclusive<usize> = 8..=16;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkillEntry {
    pub id: String,
    pub pedagogy: String,
    pub roleplay: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Persona {
    pub name: String,
    pub role: String,
    #[serde(default)]
    pub description: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CurriculumManifest {
    /// Script path, relative to the manifest file.
    pub script: PathBuf,
    pub skills: Vec<SkillEntry>,
    pub personas: BTreeMap<String, Persona>,
}

#[derive(Debug, Error)]
pub enum CurriculumError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("manifest is not valid JSON: {0}")]
    Manifest(#[from] serde_json::Error),
    #[error("script does not parse: {0}")]
    Parse(#[from] ParseError),
    #[error("script has {} validation error(s)", .0.errors.len())]
    Invalid(ValidationReport),
    #[error("manifest does not match script: {0}")]
    ManifestMismatch(String),
}

impl CurriculumError {
    pub fn code(&self) -> &'static str {
        match self {
            CurriculumError::Io { .. } => "IO",
            CurriculumError::Manifest(_) => "MANIFEST_PARSE",
            CurriculumError::Parse(_) => "PARSE_ERROR",
            CurriculumError::Invalid(_) => "VALIDATION_FAILED",
            CurriculumError::ManifestMismatch(_) => "MANIFEST_MISMATCH",
        }
    }
}

/// A loaded, validated curriculum.
#[derive(Debug, Clone)]
pub struct Curriculum {
    pub program: Program,
    pub manifest: CurriculumManifest,
}

impl Curriculum {
    pub fn ast(&self) -> &ScriptAst {
        self.program.ast()
    }

    pub fn from_parts(ast: ScriptAst, manifest: CurriculumManifest) -> Result<Self, CurriculumError> {
        let program = Program::new(ast).map_err(|e| match e {
            EngineError::UnvalidatedScript(report) => CurriculumError::Invalid(report),
            other => CurriculumError::ManifestMismatch(other.to_string()),
        })?;
        Ok(Curriculum { program, manifest })
    }
}

/// Load a curriculum from a manifest file or a directory containing
/// `manifest.json`.
pub fn load_curriculum(path: &Path) -> Result<(ScriptAst, CurriculumManifest), CurriculumError> {
    let manifest_path = if path.is_dir() { path.join("manifest.json") } else { path.to_path_buf() };
    let read = |p: &Path| {
        std::fs::read_to_string(p).map_err(|source| CurriculumError::Io { path: p.to_path_buf(), source })
    };
    let manifest_src = read(&manifest_path)?;
    let manifest: CurriculumManifest = serde_json::from_str(&manifest_src)?;
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let script_src = read(&base.join(&manifest.script))?;
    load_from_sources(&manifest_src, &script_src)
}

pub fn load_from_sources(
    manifest_json: &str,
    script_source: &str,
) -> Result<(ScriptAst, CurriculumManifest), CurriculumError> {
    let manifest: CurriculumManifest = serde_json::from_str(manifest_json)?;
    let ast = script::parse(script_source)?;
    let report = script::validate(&ast);
    if !report.is_ok() {
        return Err(CurriculumError::Invalid(report));
    }
    check_manifest(&ast, &manifest)?;
    Ok((ast, manifest))
}

/// The curriculum compiled into this crate.
pub fn bundled() -> Curriculum {
    let (ast, manifest) =
        load_from_sources(BUNDLED_MANIFEST, BUNDLED_SCRIPT).expect("bundled curriculum is valid");
    Curriculum::from_parts(ast, manifest).expect("bundled curriculum is valid")
}

/// Cross-check manifest entries against segment attributes.
pub fn check_manifest(ast: &ScriptAst, manifest: &CurriculumManifest) -> Result<(), CurriculumError> {
    let mismatch = |msg: String| Err(CurriculumError::ManifestMismatch(msg));
    if manifest.skills.len() != SKILL_ORDER.len() {
        return mismatch(format!("{} skills required, manifest lists {}", SKILL_ORDER.len(), manifest.skills.len()));
    }
    for (entry, expected) in manifest.skills.iter().zip(SKILL_ORDER) {
        if entry.id != expected {
            return mismatch(format!("expected skill '{expected}' in this position, found '{}'", entry.id));
        }
        for (seg_id, kind) in [(&entry.pedagogy, SegmentKind::Pedagogy), (&entry.roleplay, SegmentKind::Roleplay)] {
            let Some(seg) = ast.segment(seg_id) else {
                return mismatch(format!("skill '{}' names missing segment '{seg_id}'", entry.id));
            };
            if seg.kind != kind {
                return mismatch(format!(
                    "segment '{seg_id}' of skill '{}' is {}, expected {}",
                    entry.id,
                    seg.kind.as_str(),
                    kind.as_str()
                ));
            }
            if seg.skill.as_deref() != Some(entry.id.as_str()) {
                return mismatch(format!("segment '{seg_id}' is not marked skill={}", entry.id));
            }
        }
    }
    for seg in &ast.segments {
        if !manifest.personas.contains_key(&seg.agent) {
            return mismatch(format!("agent '{}' of segment '{}' has no persona", seg.agent, seg.id));
        }
    }
    Ok(())
}

/// Curriculum-level authoring checks: skill ordering, teach-then-practice
/// pairing, role-play length and fallback text for every placeholder.
pub fn curriculum_lint(ast: &ScriptAst, manifest: &CurriculumManifest) -> ValidationReport {
    let mut report = ValidationReport::default();
    let seg_loc = |id: &str| {
        let span = ast.segment(id).map(|s| s.span).unwrap_or_default();
        Location::at(span, Some(id), None)
    };

    let expected: Vec<&str> = manifest.skills.iter().map(|s| s.pedagogy.as_str()).collect();
    let called: Vec<&str> = ast
        .segment(&ast.entry)
        .into_iter()
        .flat_map(|seg| seg.states.iter().flat_map(|st| st.actions.iter()))
        .filter_map(|a| match a {
            Action::Call { segment, .. } if expected.contains(&segment.as_str()) => Some(segment.as_str()),
            _ => None,
        })
        .collect();
    if called != expected {
        report.error(
            "ORDERING",
            seg_loc(&ast.entry),
            format!("entry segment teaches skills as {called:?}, expected {expected:?}"),
        );
    }

    for skill in &manifest.skills {
        let Some(ped) = ast.segment(&skill.pedagogy) else { continue };
        let paired = ped.states.iter().flat_map(|st| st.actions.iter()).any(|a| {
            matches!(a, Action::Call { segment, onfail: Some(_) } if *segment == skill.roleplay)
        });
        if !paired {
            report.error(
                "PAIRING",
                seg_loc(&ped.id),
                format!("'{}' must call '{}' with an onfail retry state", ped.id, skill.roleplay),
            );
        }
    }

    for seg in ast.segments.iter().filter(|s| s.is_roleplay()) {
        match adherent_path(ast, &seg.id) {
            Ok(path) if !TURN_BUDGET.contains(&path.len()) => report.warning(
                "TURN_BUDGET",
                seg_loc(&seg.id),
                format!(
                    "role-play '{}' runs {} turns on its adherent path, outside {}..={}",
                    seg.id,
                    path.len(),
                    TURN_BUDGET.start(),
                    TURN_BUDGET.end()
                ),
            ),
            Ok(_) => {}
            Err(e) => report.error(e.code(), seg_loc(&seg.id), e.to_string()),
        }
    }

    for seg in &ast.segments {
        let states = seg.states.iter().map(|st| {
            let templates: Vec<_> = st
                .actions
                .iter()
                .flat_map(|a| match a {
                    Action::Say(t) => vec![t],
                    Action::Menu(opts) => opts.iter().map(|o| &o.label).collect(),
                    _ => vec![],
                })
                .collect();
            (Location::at(st.span, Some(&seg.id), Some(&st.id)), templates)
        });
        let handlers = seg
            .failure_handlers
            .iter()
            .map(|h| (Location::at(h.span, Some(&seg.id), None), h.lines.iter().collect()));
        for (loc, templates) in states.chain(handlers) {
            for t in templates {
                for (path, fallback) in t.placeholders() {
                    if fallback.is_none() {
                        report.warning(
                            "MISSING_FALLBACK",
                            loc.clone(),
                            format!("placeholder '{path}' has no fallback; video mode cannot render it"),
                        );
                    }
                }
            }
        }
    }

    report.sort();
    report
}
