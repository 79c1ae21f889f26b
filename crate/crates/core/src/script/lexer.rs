use super::ast::Span;
use super::parser::{ParseError, ParseErrorKind};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TokenKind {
    Ident(String),
    /// Raw string contents, escapes still in place.
    Str(String),
    Int(u64),
    LParen,
    RParen,
    LBrace,
    RBrace,
    Comma,
    Eq,
    Arrow,
    Fail,
    End,
    Eof,
}

impl TokenKind {
    pub fn describe(&self) -> String {
        match self {
            TokenKind::Ident(s) => format!("identifier '{s}'"),
            TokenKind::Str(_) => "string".into(),
            TokenKind::Int(n) => format!("integer {n}"),
            TokenKind::LParen => "'('".into(),
            TokenKind::RParen => "')'".into(),
            TokenKind::LBrace => "'{'".into(),
            TokenKind::RBrace => "'}'".into(),
            TokenKind::Comma => "','".into(),
            TokenKind::Eq => "'='".into(),
            TokenKind::Arrow => "'->'".into(),
            TokenKind::Fail => "'!fail'".into(),
            TokenKind::End => "'!end'".into(),
            TokenKind::Eof => "end of input".into(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Token {
    pub kind: TokenKind,
    pub span: Span,
}

pub fn is_identifier(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

/// On-demand tokenizer so that a lexical error later in the file never masks
/// an earlier syntax error.
pub struct Lexer<'a> {
    chars: std::iter::Peekable<std::str::Chars<'a>>,
    line: u32,
    column: u32,
}

impl<'a> Lexer<'a> {
    pub fn new(source: &'a str) -> Self {
        let source = source.strip_prefix('\u{feff}').unwrap_or(source);
        Lexer { chars: source.chars().peekable(), line: 1, column: 1 }
    }

    fn bump(&mut self) -> Option<char> {
        let c = self.chars.next()?;
        if c == '\n' {
            self.line += 1;
            self.column = 1;
        } else {
            self.column += 1;
        }
        Some(c)
    }

    fn here(&self) -> Span {
        Span::new(self.line, self.column)
    }

    fn skip_trivia(&mut self) {
        while let Some(&c) = self.chars.peek() {
            if c == '#' {
                while let Some(&c) = self.chars.peek() {
                    if c == '\n' {
                        break;
                    }
                    self.bump();
                }
            } else if c.is_whitespace() {
                self.bump();
            } else {
                break;
            }
        }
    }

    pub fn next_token(&mut self) -> Result<Token, ParseError> {
        self.skip_trivia();
        let span = self.here();
        let Some(c) = self.bump() else {
            return Ok(Token { kind: TokenKind::Eof, span });
        };
        let kind = match c {
            '(' => TokenKind::LParen,
            ')' => TokenKind::RParen,
            '{' => TokenKind::LBrace,
            '}' => TokenKind::RBrace,
            ',' => TokenKind::Comma,
            '=' => TokenKind::Eq,
            '-' if self.chars.peek() == Some(&'>') => {
                self.bump();
                TokenKind::Arrow
            }
            '!' => {
                let word = self.take_while(|c| c.is_ascii_alphanumeric() || c == '_');
                match word.as_str() {
                    "fail" => TokenKind::Fail,
                    "end" => TokenKind::End,
                    _ => {
                        return Err(ParseError::new(
                            ParseErrorKind::UnknownKeyword,
                            span,
                            format!("unknown keyword '!{word}'"),
                        ))
                    }
                }
            }
            '"' => TokenKind::Str(self.string_body(span)?),
            c if c.is_ascii_digit() => {
                let mut digits = c.to_string();
                digits.push_str(&self.take_while(|c| c.is_ascii_digit()));
                let value = digits.parse().map_err(|_| {
                    ParseError::new(ParseErrorKind::UnexpectedToken, span, "integer out of range")
                })?;
                TokenKind::Int(value)
            }
            c if c.is_ascii_alphabetic() || c == '_' => {
                let mut word = c.to_string();
                word.push_str(&self.take_while(|c| c.is_ascii_alphanumeric() || c == '_'));
                TokenKind::Ident(word)
            }
            other => {
                return Err(ParseError::new(
                    ParseErrorKind::UnexpectedCharacter,
                    span,
                    format!("unexpected character '{}'", other.escape_default()),
                ))
            }
        };
        Ok(Token { kind, span })
    }

    fn take_while(&mut self, pred: impl Fn(char) -> bool) -> String {
        let mut out = String::new();
        while let Some(&c) = self.chars.peek() {
            if !pred(c) {
                break;
            }
            out.push(c);
            self.bump();
        }
        out
    }

    fn string_body(&mut self, open: Span) -> Result<String, ParseError> {
        let unterminated =
            || ParseError::new(ParseErrorKind::UnterminatedString, open, "unterminated string");
        let mut raw = String::new();
        loop {
            match self.chars.peek().copied() {
                None | Some('\n') | Some('\r') => return Err(unterminated()),
                Some('"') => {
                    self.bump();
                    return Ok(raw);
                }
                Some('\\') => {
                    self.bump();
                    raw.push('\\');
                    match self.chars.peek().copied() {
                        None | Some('\n') | Some('\r') => return Err(unterminated()),
                        Some(c) => {
                            self.bump();
                            raw.push(c);
                        }
                    }
                }
                Some(c) => {
                    self.bump();
                    raw.push(c);
                }
            }
        }
    }
}
