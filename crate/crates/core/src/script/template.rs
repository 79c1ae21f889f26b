//! Utterance templates: literal text with `{path}` and `{path|fallback}`
//! placeholders. `\{`, `\}`, `\"` and `\\` escape the corresponding
//! character.

use std::fmt;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "part", rename_all = "snake_case")]
pub enum TemplatePart {
    Literal { text: String },
    Placeholder { path: String, fallback: Option<String> },
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Template {
    pub parts: Vec<TemplatePart>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TemplateErrorKind {
    MalformedPlaceholder,
    InvalidEscape,
}

/// Error inside a template; `offset` counts characters from the start of the
/// string contents.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TemplateError {
    pub offset: usize,
    pub kind: TemplateErrorKind,
    pub message: String,
}

impl Template {
    /// A template holding only literal text.
    pub fn literal(text: impl Into<String>) -> Self {
        let text = text.into();
        if text.is_empty() {
            return Template::default();
        }
        Template { parts: vec![TemplatePart::Literal { text }] }
    }

    /// Lex the raw (still escaped) contents of a string literal.
    pub fn parse(raw: &str) -> Result<Self, TemplateError> {
        let chars: Vec<char> = raw.chars().collect();
        let mut parts = Vec::new();
        let mut lit = String::new();
        let mut i = 0;
        while i < chars.len() {
            match chars[i] {
                '\\' => {
                    lit.push(unescape(&chars, i)?);
                    i += 2;
                }
                '{' => {
                    let (part, next) = lex_placeholder(&chars, i)?;
                    if !lit.is_empty() {
                        parts.push(TemplatePart::Literal { text: std::mem::take(&mut lit) });
                    }
                    parts.push(part);
                    i = next;
                }
                '}' => {
                    return Err(TemplateError {
                        offset: i,
                        kind: TemplateErrorKind::MalformedPlaceholder,
                        message: "unmatched '}' in template (escape it as \\})".into(),
                    })
                }
                c => {
                    lit.push(c);
                    i += 1;
                }
            }
        }
        if !lit.is_empty() {
            parts.push(TemplatePart::Literal { text: lit });
        }
        Ok(Template { parts })
    }

    pub fn placeholders(&self) -> impl Iterator<Item = (&str, Option<&str>)> {
        self.parts.iter().filter_map(|p| match p {
            TemplatePart::Placeholder { path, fallback } => Some((path.as_str(), fallback.as_deref())),
            TemplatePart::Literal { .. } => None,
        })
    }

    pub fn has_placeholders(&self) -> bool {
        self.placeholders().next().is_some()
    }

    /// Render, resolving each placeholder through `resolve(path, fallback)`.
    pub fn render_with<E>(
        &self,
        mut resolve: impl FnMut(&str, Option<&str>) -> Result<String, E>,
    ) -> Result<String, E> {
        let mut out = String::new();
        for part in &self.parts {
            match part {
                TemplatePart::Literal { text } => out.push_str(text),
                TemplatePart::Placeholder { path, fallback } => {
                    out.push_str(&resolve(path, fallback.as_deref())?)
                }
            }
        }
        Ok(out)
    }

    /// Text with every placeholder replaced by its fallback, or by `{path}`
    /// when it has none.
    pub fn generic_text(&self) -> String {
        self.render_with::<()>(|path, fb| Ok(fb.map_or_else(|| format!("{{{path}}}"), str::to_owned)))
            .unwrap_or_default()
    }

    /// Escaped source form, without surrounding quotes.
    pub fn to_source(&self) -> String {
        let mut out = String::new();
        for part in &self.parts {
            match part {
                TemplatePart::Literal { text } => escape_into(&mut out, text),
                TemplatePart::Placeholder { path, fallback } => {
                    out.push('{');
                    out.push_str(path);
                    if let Some(fb) = fallback {
                        out.push('|');
                        escape_into(&mut out, fb);
                    }
                    out.push('}');
                }
            }
        }
        out
    }
}

impl fmt::Display for Template {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "\"{}\"", self.to_source())
    }
}

fn escape_into(out: &mut String, text: &str) {
    for c in text.chars() {
        if matches!(c, '\\' | '"' | '{' | '}') {
            out.push('\\');
        }
        out.push(c);
    }
}

fn unescape(chars: &[char], at: usize) -> Result<char, TemplateError> {
    match chars.get(at + 1) {
        Some(&c @ ('\\' | '"' | '{' | '}')) => Ok(c),
        Some(c) => Err(TemplateError {
            offset: at,
            kind: TemplateErrorKind::InvalidEscape,
            message: format!("unknown escape '\\{c}'"),
        }),
        None => Err(TemplateError {
            offset: at,
            kind: TemplateErrorKind::InvalidEscape,
            message: "dangling '\\' at end of template".into(),
        }),
    }
}

fn lex_placeholder(chars: &[char], open: usize) -> Result<(TemplatePart, usize), TemplateError> {
    let malformed = |offset: usize, message: String| TemplateError {
        offset,
        kind: TemplateErrorKind::MalformedPlaceholder,
        message,
    };
    let mut i = open + 1;
    let mut path = String::new();
    while i < chars.len() && !matches!(chars[i], '|' | '}') {
        path.push(chars[i]);
        i += 1;
    }
    if !is_valid_path(&path) {
        return Err(malformed(open, format!("invalid placeholder path '{path}'")));
    }
    match chars.get(i) {
        Some('}') => Ok((TemplatePart::Placeholder { path, fallback: None }, i + 1)),
        Some('|') => {
            i += 1;
            let mut fallback = String::new();
            loop {
                match chars.get(i) {
                    Some('}') => {
                        return Ok((
                            TemplatePart::Placeholder { path, fallback: Some(fallback) },
                            i + 1,
                        ))
                    }
                    Some('\\') => {
                        fallback.push(unescape(chars, i)?);
                        i += 2;
                    }
                    Some('{') => return Err(malformed(i, "nested '{' in placeholder fallback".into())),
                    Some(&c) => {
                        fallback.push(c);
                        i += 1;
                    }
                    None => return Err(malformed(open, "unterminated placeholder".into())),
                }
            }
        }
        _ => Err(malformed(open, "unterminated placeholder".into())),
    }
}

/// `ident ("." ident)*`
pub fn is_valid_path(path: &str) -> bool {
    !path.is_empty() && path.split('.').all(super::lexer::is_identifier)
}
