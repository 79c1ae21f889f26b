//! The `.miscript` dialogue-scripting language.
//!
//! A script is a set of segments. Each segment is one layer of a
//! hierarchical transition network: a finite-state machine whose states emit
//! agent utterances and branch on the trainee's menu choice. Segments call
//! one another; role-play segments fail into a handler when the trainee
//! picks a non-adherent response.

mod ast;
mod lexer;
mod parser;
mod path;
mod printer;
mod template;
mod validate;

pub use ast::*;
pub use lexer::is_identifier;
pub use parser::{parse, ParseError, ParseErrorKind};
pub use path::{adherent_path, adherent_path_bounded, adherent_turns, PathError, PathStep, Speaker, DEFAULT_PATH_STEP_BOUND};
pub use template::{Template, TemplateError, TemplateErrorKind, TemplatePart};
pub use validate::{
    validate, Diagnostic, Location, ValidationReport, PEDAGOGY_MAX_OPTIONS, ROLEPLAY_MAX_OPTIONS,
};

