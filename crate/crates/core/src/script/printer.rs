use std::fmt::{self, Write};

use super::ast::*;
use super::template::Template;

/// Canonical source form. Parsing the output yields an AST equal to `self`.
impl fmt::Display for ScriptAst {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "script {} version {} entry {}", Template::literal(&self.name), self.version, self.entry)?;
        for seg in &self.segments {
            writeln!(f)?;
            write!(f, "segment {} (kind={}, agent={}", seg.id, seg.kind.as_str(), seg.agent)?;
            if let Some(skill) = &seg.skill {
                write!(f, ", skill={skill}")?;
            }
            writeln!(f, ") {{")?;
            for state in &seg.states {
                writeln!(f, "  state {} {{", state.id)?;
                for action in &state.actions {
                    write_action(f, action)?;
                }
                writeln!(f, "  }}")?;
            }
            for handler in &seg.failure_handlers {
                f.write_str("  failure ")?;
                if !handler.for_states.is_empty() {
                    write!(f, "for {} ", handler.for_states.join(", "))?;
                }
                writeln!(f, "{{")?;
                for line in &handler.lines {
                    writeln!(f, "    say {line}")?;
                }
                writeln!(f, "  }}")?;
            }
            writeln!(f, "}}")?;
        }
        Ok(())
    }
}

fn write_action(f: &mut fmt::Formatter<'_>, action: &Action) -> fmt::Result {
    match action {
        Action::Say(t) => writeln!(f, "    say {t}"),
        Action::Menu(options) => {
            writeln!(f, "    menu {{")?;
            for opt in options {
                let mut line = String::from("      option ");
                match opt.tag {
                    AdherenceTag::Adherent => line.push_str("adherent "),
                    AdherenceTag::Nonadherent => line.push_str("nonadherent "),
                    AdherenceTag::Untagged => {}
                }
                write!(line, "{} -> {}", opt.label, opt.target)?;
                writeln!(f, "{line}")?;
            }
            writeln!(f, "    }}")
        }
        Action::Goto(s) => writeln!(f, "    goto {s}"),
        Action::Call { segment, onfail: Some(s) } => writeln!(f, "    call {segment} onfail {s}"),
        Action::Call { segment, onfail: None } => writeln!(f, "    call {segment}"),
        Action::Recap(s) => writeln!(f, "    recap {s}"),
        Action::End => writeln!(f, "    end"),
    }
}
