use std::collections::HashSet;

use thiserror::Error;

use super::ast::*;
use super::lexer::{Lexer, Token, TokenKind};
use super::template::{Template, TemplateErrorKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParseErrorKind {
    UnterminatedString,
    UnknownKeyword,
    DuplicateSegment,
    DuplicateState,
    MalformedPlaceholder,
    InvalidEscape,
    UnbalancedBraces,
    UnexpectedToken,
    UnexpectedCharacter,
    MissingAttribute,
    DuplicateAttribute,
    InvalidAttribute,
    DeadAction,
}

impl ParseErrorKind {
    pub fn code(self) -> &'static str {
        match self {
            ParseErrorKind::UnterminatedString => "UNTERMINATED_STRING",
            ParseErrorKind::UnknownKeyword => "UNKNOWN_KEYWORD",
            ParseErrorKind::DuplicateSegment => "DUPLICATE_SEGMENT",
            ParseErrorKind::DuplicateState => "DUPLICATE_STATE",
            ParseErrorKind::MalformedPlaceholder => "MALFORMED_PLACEHOLDER",
            ParseErrorKind::InvalidEscape => "INVALID_ESCAPE",
            ParseErrorKind::UnbalancedBraces => "UNBALANCED_BRACES",
            ParseErrorKind::UnexpectedToken => "UNEXPECTED_TOKEN",
            ParseErrorKind::UnexpectedCharacter => "UNEXPECTED_CHARACTER",
            ParseErrorKind::MissingAttribute => "MISSING_ATTRIBUTE",
            ParseErrorKind::DuplicateAttribute => "DUPLICATE_ATTRIBUTE",
            ParseErrorKind::InvalidAttribute => "INVALID_ATTRIBUTE",
            ParseErrorKind::DeadAction => "DEAD_ACTION",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{line}:{column}: {message}")]
pub struct ParseError {
    pub kind: ParseErrorKind,
    pub line: u32,
    pub column: u32,
    pub message: String,
}

impl ParseError {
    pub fn new(kind: ParseErrorKind, at: Span, message: impl Into<String>) -> Self {
        ParseError { kind, line: at.line, column: at.column, message: message.into() }
    }

    pub fn code(&self) -> &'static str {
        self.kind.code()
    }
}

/// Parse `.miscript` source into an AST.
pub fn parse(source: &str) -> Result<ScriptAst, ParseError> {
    Parser::new(source).script()
}

const ACTION_KEYWORDS: &str = "say, menu, goto, call, recap or end";

struct Parser<'a> {
    lexer: Lexer<'a>,
    peeked: Option<Token>,
}

impl<'a> Parser<'a> {
    fn new(source: &'a str) -> Self {
        Parser { lexer: Lexer::new(source), peeked: None }
    }

    fn peek(&mut self) -> Result<&Token, ParseError> {
        if self.peeked.is_none() {
            self.peeked = Some(self.lexer.next_token()?);
        }
        Ok(self.peeked.as_ref().expect("peeked token"))
    }

    fn next(&mut self) -> Result<Token, ParseError> {
        match self.peeked.take() {
            Some(t) => Ok(t),
            None => self.lexer.next_token(),
        }
    }

    fn unexpected(tok: &Token, expected: &str) -> ParseError {
        if tok.kind == TokenKind::Eof {
            return ParseError::new(
                ParseErrorKind::UnbalancedBraces,
                tok.span,
                format!("unbalanced braces: reached end of input, expected {expected}"),
            );
        }
        ParseError::new(
            ParseErrorKind::UnexpectedToken,
            tok.span,
            format!("expected {expected}, found {}", tok.kind.describe()),
        )
    }

    fn expect(&mut self, kind: TokenKind, expected: &str) -> Result<Token, ParseError> {
        let tok = self.next()?;
        if tok.kind == kind {
            Ok(tok)
        } else {
            Err(Self::unexpected(&tok, expected))
        }
    }

    fn ident(&mut self, expected: &str) -> Result<(String, Span), ParseError> {
        let tok = self.next()?;
        match tok.kind {
            TokenKind::Ident(s) => Ok((s, tok.span)),
            _ => Err(Self::unexpected(&tok, expected)),
        }
    }

    /// An identifier that must be one of `allowed`.
    fn keyword(&mut self, allowed: &[&str], expected: &str) -> Result<(String, Span), ParseError> {
        let tok = self.next()?;
        match tok.kind {
            TokenKind::Ident(s) if allowed.contains(&s.as_str()) => Ok((s, tok.span)),
            TokenKind::Ident(s) => Err(ParseError::new(
                ParseErrorKind::UnknownKeyword,
                tok.span,
                format!("unknown keyword '{s}', expected {expected}"),
            )),
            _ => Err(Self::unexpected(&tok, expected)),
        }
    }

    fn template(&mut self) -> Result<(Template, Span), ParseError> {
        let tok = self.next()?;
        let TokenKind::Str(raw) = tok.kind else {
            return Err(Self::unexpected(&tok, "a quoted string"));
        };
        let tpl = Template::parse(&raw).map_err(|e| {
            // string literals are single-line; +1 skips the opening quote
            let at = Span::new(tok.span.line, tok.span.column + 1 + e.offset as u32);
            let kind = match e.kind {
                TemplateErrorKind::MalformedPlaceholder => ParseErrorKind::MalformedPlaceholder,
                TemplateErrorKind::InvalidEscape => ParseErrorKind::InvalidEscape,
            };
            ParseError::new(kind, at, e.message)
        })?;
        Ok((tpl, tok.span))
    }

    fn script(&mut self) -> Result<ScriptAst, ParseError> {
        self.keyword(&["script"], "'script'")?;
        let name_tok = self.next()?;
        let TokenKind::Str(raw) = name_tok.kind else {
            return Err(Self::unexpected(&name_tok, "the script name"));
        };
        let name = Template::parse(&raw)
            .map_err(|e| {
                ParseError::new(ParseErrorKind::MalformedPlaceholder, name_tok.span, e.message)
            })?
            .generic_text();
        self.keyword(&["version"], "'version'")?;
        let tok = self.next()?;
        let version = match tok.kind {
            TokenKind::Int(v) => u32::try_from(v).map_err(|_| {
                ParseError::new(ParseErrorKind::UnexpectedToken, tok.span, "version out of range")
            })?,
            _ => return Err(Self::unexpected(&tok, "a version number")),
        };
        self.keyword(&["entry"], "'entry'")?;
        let (entry, _) = self.ident("the entry segment id")?;

        let mut segments: Vec<Segment> = Vec::new();
        let mut seen = HashSet::new();
        loop {
            let tok = self.peek()?;
            match &tok.kind {
                TokenKind::Eof => break,
                TokenKind::RBrace => {
                    return Err(ParseError::new(
                        ParseErrorKind::UnbalancedBraces,
                        tok.span,
                        "unbalanced braces: unexpected '}'",
                    ))
                }
                _ => {}
            }
            let seg = self.segment()?;
            if !seen.insert(seg.id.clone()) {
                return Err(ParseError::new(
                    ParseErrorKind::DuplicateSegment,
                    seg.span,
                    format!("duplicate segment id '{}'", seg.id),
                ));
            }
            segments.push(seg);
        }
        Ok(ScriptAst { name, version, entry, segments })
    }

    fn segment(&mut self) -> Result<Segment, ParseError> {
        self.keyword(&["segment"], "'segment'")?;
        let (id, span) = self.ident("a segment id")?;
        let (kind, agent, skill) = self.attributes(span)?;
        let seg_span = span;
        self.expect(TokenKind::LBrace, "'{'")?;
        let mut states: Vec<State> = Vec::new();
        let mut failure_handlers = Vec::new();
        loop {
            if self.peek()?.kind == TokenKind::RBrace {
                self.next()?;
                break;
            }
            let (kw, kw_span) = self.keyword(&["state", "failure"], "'state', 'failure' or '}'")?;
            if kw == "state" {
                let state = self.state()?;
                if states.iter().any(|s| s.id == state.id) {
                    return Err(ParseError::new(
                        ParseErrorKind::DuplicateState,
                        state.span,
                        format!("duplicate state id '{}' in segment '{id}'", state.id),
                    ));
                }
                states.push(state);
            } else {
                failure_handlers.push(self.failure(kw_span)?);
            }
        }
        Ok(Segment { id, kind, agent, skill, states, failure_handlers, span: seg_span })
    }

    fn attributes(&mut self, seg_span: Span) -> Result<(SegmentKind, String, Option<String>), ParseError> {
        self.expect(TokenKind::LParen, "'('")?;
        let mut kind = None;
        let mut agent = None;
        let mut skill = None;
        loop {
            let (name, span) = self.keyword(&["kind", "agent", "skill"], "kind, agent or skill")?;
            self.expect(TokenKind::Eq, "'='")?;
            let (value, value_span) = self.ident("an attribute value")?;
            let slot_taken = match name.as_str() {
                "kind" => {
                    let k = match value.as_str() {
                        "pedagogy" => SegmentKind::Pedagogy,
                        "roleplay" => SegmentKind::Roleplay,
                        _ => {
                            return Err(ParseError::new(
                                ParseErrorKind::InvalidAttribute,
                                value_span,
                                format!("segment kind must be pedagogy or roleplay, found '{value}'"),
                            ))
                        }
                    };
                    kind.replace(k).is_some()
                }
                "agent" => agent.replace(value).is_some(),
                _ => skill.replace(value).is_some(),
            };
            if slot_taken {
                return Err(ParseError::new(
                    ParseErrorKind::DuplicateAttribute,
                    span,
                    format!("attribute '{name}' given twice"),
                ));
            }
            let tok = self.next()?;
            match tok.kind {
                TokenKind::Comma => continue,
                TokenKind::RParen => break,
                _ => return Err(Self::unexpected(&tok, "',' or ')'")),
            }
        }
        let kind = kind.ok_or_else(|| {
            ParseError::new(ParseErrorKind::MissingAttribute, seg_span, "segment is missing 'kind'")
        })?;
        let agent = agent.ok_or_else(|| {
            ParseError::new(ParseErrorKind::MissingAttribute, seg_span, "segment is missing 'agent'")
        })?;
        Ok((kind, agent, skill))
    }

    fn state(&mut self) -> Result<State, ParseError> {
        let (id, span) = self.ident("a state id")?;
        self.expect(TokenKind::LBrace, "'{'")?;
        let mut actions: Vec<Action> = Vec::new();
        loop {
            if self.peek()?.kind == TokenKind::RBrace {
                self.next()?;
                break;
            }
            let (kw, kw_span) = self.keyword(
                &["say", "menu", "goto", "call", "recap", "end"],
                ACTION_KEYWORDS,
            )?;
            if let Some(last) = actions.last().filter(|a| a.transfers_control()) {
                return Err(ParseError::new(
                    ParseErrorKind::DeadAction,
                    kw_span,
                    format!("'{kw}' can never run: '{}' already ends state '{id}'", last.keyword()),
                ));
            }
            let action = match kw.as_str() {
                "say" => Action::Say(self.template()?.0),
                "menu" => Action::Menu(self.menu()?),
                "goto" => Action::Goto(self.ident("a state id")?.0),
                "call" => {
                    let (segment, _) = self.ident("a segment id")?;
                    let onfail = match &self.peek()?.kind {
                        TokenKind::Ident(w) if w == "onfail" => {
                            self.next()?;
                            Some(self.ident("a state id")?.0)
                        }
                        _ => None,
                    };
                    Action::Call { segment, onfail }
                }
                "recap" => Action::Recap(self.ident("a segment id")?.0),
                _ => Action::End,
            };
            actions.push(action);
        }
        Ok(State { id, actions, span })
    }

    fn menu(&mut self) -> Result<Vec<MenuOption>, ParseError> {
        self.expect(TokenKind::LBrace, "'{'")?;
        let mut options = Vec::new();
        loop {
            if self.peek()?.kind == TokenKind::RBrace && !options.is_empty() {
                self.next()?;
                return Ok(options);
            }
            let (_, span) = self.keyword(&["option"], "'option'")?;
            let tag = match self.peek()?.kind.clone() {
                TokenKind::Ident(w) => {
                    let tok = self.next()?;
                    match w.as_str() {
                        "adherent" => AdherenceTag::Adherent,
                        "nonadherent" => AdherenceTag::Nonadherent,
                        _ => {
                            return Err(ParseError::new(
                                ParseErrorKind::UnknownKeyword,
                                tok.span,
                                format!("unknown keyword '{w}', expected adherent, nonadherent or a label"),
                            ))
                        }
                    }
                }
                _ => AdherenceTag::Untagged,
            };
            let (label, _) = self.template()?;
            self.expect(TokenKind::Arrow, "'->'")?;
            let tok = self.next()?;
            let target = match tok.kind {
                TokenKind::Ident(s) => Target::State(s),
                TokenKind::Fail => Target::Fail,
                TokenKind::End => Target::End,
                _ => return Err(Self::unexpected(&tok, "a state id, '!fail' or '!end'")),
            };
            options.push(MenuOption { id: option_id(options.len()), tag, label, target, span });
        }
    }

    fn failure(&mut self, span: Span) -> Result<FailureHandler, ParseError> {
        let mut for_states = Vec::new();
        if let TokenKind::Ident(w) = self.peek()?.kind.clone() {
            if w == "for" {
                self.next()?;
                loop {
                    for_states.push(self.ident("a state id")?.0);
                    if self.peek()?.kind == TokenKind::Comma {
                        self.next()?;
                    } else {
                        break;
                    }
                }
            } else {
                let tok = self.next()?;
                return Err(ParseError::new(
                    ParseErrorKind::UnknownKeyword,
                    tok.span,
                    format!("unknown keyword '{w}', expected 'for' or '{{'"),
                ));
            }
        }
        self.expect(TokenKind::LBrace, "'{'")?;
        let mut lines = Vec::new();
        loop {
            if self.peek()?.kind == TokenKind::RBrace && !lines.is_empty() {
                self.next()?;
                break;
            }
            self.keyword(&["say"], "'say'")?;
            lines.push(self.template()?.0);
        }
        Ok(FailureHandler { for_states, lines, span })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str =
        r#"script "t" version 1 entry s segment s (kind=pedagogy, agent=clara) { state a { say "Hi" end } }"#;

    #[test]
    fn minimal_script() {
        let ast = parse(MINIMAL).unwrap();
        assert_eq!(ast.name, "t");
        assert_eq!(ast.version, 1);
        assert_eq!(ast.entry, "s");
        assert_eq!(ast.segments.len(), 1);
        let seg = &ast.segments[0];
        assert_eq!(seg.kind, SegmentKind::Pedagogy);
        assert_eq!(seg.agent, "clara");
        assert_eq!(seg.skill, None);
        assert_eq!(seg.states.len(), 1);
        assert_eq!(seg.states[0].actions, vec![Action::Say(Template::literal("Hi")), Action::End]);
    }

    #[test]
    fn missing_close_brace_is_unbalanced_at_eof() {
        let src = MINIMAL.strip_suffix('}').unwrap();
        let err = parse(src).unwrap_err();
        assert_eq!(err.kind, ParseErrorKind::UnbalancedBraces);
        assert!(err.message.contains("unbalanced braces"));
        assert_eq!((err.line, err.column), (1, src.chars().count() as u32 + 1));
    }

    #[test]
    fn extra_close_brace() {
        let err = parse(&format!("{MINIMAL}\n}}")).unwrap_err();
        assert_eq!(err.kind, ParseErrorKind::UnbalancedBraces);
        assert_eq!((err.line, err.column), (2, 1));
    }

    #[test]
    fn duplicate_state_reported_at_second_declaration() {
        let src = "script \"t\" version 1 entry s\nsegment s (kind=pedagogy, agent=clara) {\n  state a { end }\n  state a { end }\n}";
        let err = parse(src).unwrap_err();
        assert_eq!(err.kind, ParseErrorKind::DuplicateState);
        assert!(err.message.contains("duplicate state id"));
        assert_eq!((err.line, err.column), (4, 9));
    }

    #[test]
    fn duplicate_segment() {
        let src = format!("{MINIMAL}\nsegment s (kind=roleplay, agent=mary) {{ }}");
        let err = parse(&src).unwrap_err();
        assert_eq!(err.kind, ParseErrorKind::DuplicateSegment);
        assert_eq!((err.line, err.column), (2, 9));
    }

    #[test]
    fn error_kinds() {
        let cases = [
            (MINIMAL.replace("say \"Hi\"", "sya \"Hi\""), ParseErrorKind::UnknownKeyword),
            (MINIMAL.replace("\"Hi\"", "\"Hi"), ParseErrorKind::UnterminatedString),
            (MINIMAL.replace("\"Hi\"", "\"Hi {user.}\""), ParseErrorKind::MalformedPlaceholder),
            (MINIMAL.replace("say \"Hi\" end", "end say \"Hi\""), ParseErrorKind::DeadAction),
            (MINIMAL.replace("kind=pedagogy, ", ""), ParseErrorKind::MissingAttribute),
            (MINIMAL.replace("kind=pedagogy", "kind=lecture"), ParseErrorKind::InvalidAttribute),
            (MINIMAL.replace("agent=clara", "agent=clara, agent=mary"), ParseErrorKind::DuplicateAttribute),
            (MINIMAL.replace("version 1", "version x"), ParseErrorKind::UnexpectedToken),
            (MINIMAL.replace("say", "say @"), ParseErrorKind::UnexpectedCharacter),
        ];
        for (src, kind) in cases {
            assert_eq!(parse(&src).unwrap_err().kind, kind, "{src}");
        }
    }

    #[test]
    fn placeholder_error_column_points_into_string() {
        let err = parse(&MINIMAL.replace("\"Hi\"", "\"Hi {}\"")).unwrap_err();
        let col = MINIMAL.find("\"Hi\"").unwrap() as u32 + 1 + 1 + 3;
        assert_eq!((err.line, err.column), (1, col));
    }

    #[test]
    fn menus_calls_and_failure_handlers() {
        let src = r#"
            script "demo" version 2 entry intro
            segment intro (kind=pedagogy, agent=clara) {
              state a { say "Ready, {user.first_name|friend}?" menu { option "Yes" -> b option "No" -> !end } }
              state b { call rp onfail c }
              state c { recap rp goto a }
            }
            segment rp (kind=roleplay, agent=mary, skill=listening) {
              state m1 { say "Hm." menu {
                option adherent "Tell me more." -> !end
                option nonadherent "You're wrong." -> !fail
              } }
              failure for m1 { say "I have to go." }
              failure { say "Bye." }
            }
        "#;
        let err = parse(src).unwrap_err();
        assert_eq!(err.kind, ParseErrorKind::DeadAction);

        let src = src.replace("recap rp goto a", "recap rp");
        let ast = parse(&src).unwrap();
        let rp = ast.segment("rp").unwrap();
        assert_eq!(rp.skill.as_deref(), Some("listening"));
        let menu = rp.states[0].menu().unwrap();
        assert_eq!(menu[0].id, "o1");
        assert_eq!(menu[0].tag, AdherenceTag::Adherent);
        assert_eq!(menu[1].target, Target::Fail);
        assert_eq!(rp.failure_handlers.len(), 2);
        assert_eq!(rp.failure_handler_for("m1").unwrap().lines[0], Template::literal("I have to go."));
        assert_eq!(
            ast.segments[0].states[1].actions[0],
            Action::Call { segment: "rp".into(), onfail: Some("c".into()) }
        );
    }

    #[test]
    fn crlf_and_bom_accepted() {
        let src = format!("\u{feff}{}", MINIMAL.replace(' ', "\r\n"));
        assert_eq!(parse(&src).unwrap(), parse(MINIMAL).unwrap());
    }
}
