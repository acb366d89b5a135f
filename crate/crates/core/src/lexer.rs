//! Tokenizer shared by the contract DSL and the gateway query language.

use std::fmt;

use crate::value::Date;

/// Source position, 1-based line and column (in characters).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Pos {
    pub offset: usize,
    pub line: usize,
    pub column: usize,
}

impl Pos {
    /// Position of byte `offset` within `src`.
    pub fn at(src: &str, offset: usize) -> Pos {
        let before = &src[..offset];
        let line = before.matches('\n').count() + 1;
        let column = before.rsplit('\n').next().map_or(0, |l| l.chars().count()) + 1;
        Pos {
            offset,
            line,
            column,
        }
    }
}

/// A grammar violation with the position it was detected at.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("line {}, column {}: expected {expected}, found {found}", pos.line, pos.column)]
pub struct ParseError {
    pub pos: Pos,
    pub expected: String,
    pub found: String,
}

impl ParseError {
    pub fn new(pos: Pos, expected: impl Into<String>, found: impl Into<String>) -> Self {
        ParseError {
            pos,
            expected: expected.into(),
            found: found.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub enum CmpOp {
    #[serde(rename = "=")]
    Eq,
    #[serde(rename = "!=")]
    Ne,
    #[serde(rename = "<")]
    Lt,
    #[serde(rename = "<=")]
    Le,
    #[serde(rename = ">")]
    Gt,
    #[serde(rename = ">=")]
    Ge,
}

impl CmpOp {
    pub fn as_str(self) -> &'static str {
        match self {
            CmpOp::Eq => "=",
            CmpOp::Ne => "!=",
            CmpOp::Lt => "<",
            CmpOp::Le => "<=",
            CmpOp::Gt => ">",
            CmpOp::Ge => ">=",
        }
    }

    pub fn holds(self, ord: std::cmp::Ordering) -> bool {
        use std::cmp::Ordering::*;
        match self {
            CmpOp::Eq => ord == Equal,
            CmpOp::Ne => ord != Equal,
            CmpOp::Lt => ord == Less,
            CmpOp::Le => ord != Greater,
            CmpOp::Gt => ord == Greater,
            CmpOp::Ge => ord != Less,
        }
    }
}

impl fmt::Display for CmpOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Tok {
    Ident(String),
    Str(String),
    Int(i64),
    Decimal(f64),
    Date(Date),
    Op(CmpOp),
    LBrace,
    RBrace,
    LBracket,
    RBracket,
    Comma,
    Dot,
    Star,
    Eof,
}

impl Tok {
    pub fn describe(&self) -> String {
        match self {
            Tok::Ident(s) => format!("identifier `{s}`"),
            Tok::Str(_) => "string".to_string(),
            Tok::Int(v) => format!("integer {v}"),
            Tok::Decimal(v) => format!("decimal {v}"),
            Tok::Date(d) => format!("date {d}"),
            Tok::Op(op) => format!("`{op}`"),
            Tok::LBrace => "`{`".to_string(),
            Tok::RBrace => "`}`".to_string(),
            Tok::LBracket => "`[`".to_string(),
            Tok::RBracket => "`]`".to_string(),
            Tok::Comma => "`,`".to_string(),
            Tok::Dot => "`.`".to_string(),
            Tok::Star => "`*`".to_string(),
            Tok::Eof => "end of input".to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Token {
    pub tok: Tok,
    pub start: Pos,
    /// Byte offset just past the token.
    pub end: usize,
}

pub struct Lexer<'a> {
    src: &'a str,
    pos: Pos,
    comments: bool,
}

impl<'a> Lexer<'a> {
    /// `comments` enables `#`-to-end-of-line comments.
    pub fn new(src: &'a str, comments: bool) -> Self {
        Lexer {
            src,
            pos: Pos {
                offset: 0,
                line: 1,
                column: 1,
            },
            comments,
        }
    }

    pub fn source(&self) -> &'a str {
        self.src
    }

    pub fn pos(&self) -> Pos {
        self.pos
    }

    fn peek_char(&self) -> Option<char> {
        self.src[self.pos.offset..].chars().next()
    }

    fn peek_char_at(&self, n: usize) -> Option<char> {
        self.src[self.pos.offset..].chars().nth(n)
    }

    fn bump(&mut self) -> Option<char> {
        let c = self.peek_char()?;
        self.pos.offset += c.len_utf8();
        if c == '\n' {
            self.pos.line += 1;
            self.pos.column = 1;
        } else {
            self.pos.column += 1;
        }
        Some(c)
    }

    fn skip_trivia(&mut self) {
        while let Some(c) = self.peek_char() {
            if c.is_whitespace() {
                self.bump();
            } else if c == '#' && self.comments {
                while let Some(c) = self.bump() {
                    if c == '\n' {
                        break;
                    }
                }
            } else {
                break;
            }
        }
    }

    pub fn next_token(&mut self) -> Result<Token, ParseError> {
        self.skip_trivia();
        let start = self.pos;
        let Some(c) = self.peek_char() else {
            return Ok(Token {
                tok: Tok::Eof,
                start,
                end: start.offset,
            });
        };
        let tok = match c {
            '{' => self.single(Tok::LBrace),
            '}' => self.single(Tok::RBrace),
            '[' => self.single(Tok::LBracket),
            ']' => self.single(Tok::RBracket),
            ',' => self.single(Tok::Comma),
            '.' => self.single(Tok::Dot),
            '*' => self.single(Tok::Star),
            '=' => self.single(Tok::Op(CmpOp::Eq)),
            '!' => {
                self.bump();
                if self.peek_char() == Some('=') {
                    self.bump();
                    Tok::Op(CmpOp::Ne)
                } else {
                    return Err(ParseError::new(start, "`!=`", "`!`"));
                }
            }
            '<' | '>' => {
                self.bump();
                let eq = self.peek_char() == Some('=');
                if eq {
                    self.bump();
                }
                Tok::Op(match (c, eq) {
                    ('<', false) => CmpOp::Lt,
                    ('<', true) => CmpOp::Le,
                    ('>', false) => CmpOp::Gt,
                    _ => CmpOp::Ge,
                })
            }
            '"' => self.string(start)?,
            c if c.is_ascii_digit() => self.number(start, false)?,
            '-' if self.peek_char_at(1).is_some_and(|d| d.is_ascii_digit()) => {
                self.bump();
                self.number(start, true)?
            }
            c if c.is_ascii_alphabetic() || c == '_' => {
                let begin = self.pos.offset;
                while self
                    .peek_char()
                    .is_some_and(|c| c.is_ascii_alphanumeric() || c == '_')
                {
                    self.bump();
                }
                Tok::Ident(self.src[begin..self.pos.offset].to_string())
            }
            other => {
                return Err(ParseError::new(
                    start,
                    "a token",
                    format!("unexpected character {other:?}"),
                ))
            }
        };
        Ok(Token {
            tok,
            start,
            end: self.pos.offset,
        })
    }

    fn single(&mut self, tok: Tok) -> Tok {
        self.bump();
        tok
    }

    fn string(&mut self, start: Pos) -> Result<Tok, ParseError> {
        self.bump();
        let mut out = String::new();
        loop {
            let here = self.pos;
            match self.bump() {
                None => return Err(ParseError::new(start, "closing `\"`", "end of input")),
                Some('"') => return Ok(Tok::Str(out)),
                Some('\\') => match self.bump() {
                    Some('"') => out.push('"'),
                    Some('\\') => out.push('\\'),
                    Some('n') => out.push('\n'),
                    Some('t') => out.push('\t'),
                    Some('r') => out.push('\r'),
                    Some(other) => {
                        return Err(ParseError::new(
                            here,
                            "escape sequence",
                            format!("`\\{other}`"),
                        ))
                    }
                    None => {
                        return Err(ParseError::new(here, "escape sequence", "end of input"))
                    }
                },
                Some(c) => out.push(c),
            }
        }
    }

    fn number(&mut self, start: Pos, negative: bool) -> Result<Tok, ParseError> {
        let digits_start = self.pos.offset;
        while self.peek_char().is_some_and(|c| c.is_ascii_digit()) {
            self.bump();
        }
        let int_len = self.pos.offset - digits_start;

        // DATE: exactly YYYY-MM-DD.
        if !negative && int_len == 4 && self.looks_like_date_tail() {
            for _ in 0..6 {
                self.bump();
            }
            let text = &self.src[digits_start..self.pos.offset];
            return Date::parse(text)
                .map(Tok::Date)
                .ok_or_else(|| ParseError::new(start, "valid date", format!("`{text}`")));
        }

        if self.peek_char() == Some('.') && self.peek_char_at(1).is_some_and(|c| c.is_ascii_digit())
        {
            self.bump();
            while self.peek_char().is_some_and(|c| c.is_ascii_digit()) {
                self.bump();
            }
            let text = &self.src[start.offset..self.pos.offset];
            return match text.parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(Tok::Decimal(v)),
                _ => Err(ParseError::new(start, "finite decimal", format!("`{text}`"))),
            };
        }

        let text = &self.src[start.offset..self.pos.offset];
        text.parse::<i64>()
            .map(Tok::Int)
            .map_err(|_| ParseError::new(start, "64-bit integer", format!("`{text}`")))
    }

    fn looks_like_date_tail(&self) -> bool {
        let rest = &self.src.as_bytes()[self.pos.offset..];
        rest.len() >= 6
            && rest[0] == b'-'
            && rest[1].is_ascii_digit()
            && rest[2].is_ascii_digit()
            && rest[3] == b'-'
            && rest[4].is_ascii_digit()
            && rest[5].is_ascii_digit()
    }
}

/// One-token-lookahead cursor over a [`Lexer`].
pub struct Cursor<'a> {
    lexer: Lexer<'a>,
    peeked: Option<Token>,
}

impl<'a> Cursor<'a> {
    pub fn new(src: &'a str, comments: bool) -> Self {
        Cursor {
            lexer: Lexer::new(src, comments),
            peeked: None,
        }
    }

    pub fn peek(&mut self) -> Result<&Token, ParseError> {
        if self.peeked.is_none() {
            self.peeked = Some(self.lexer.next_token()?);
        }
        Ok(self.peeked.as_ref().expect("peeked"))
    }

    pub fn bump(&mut self) -> Result<Token, ParseError> {
        match self.peeked.take() {
            Some(t) => Ok(t),
            None => self.lexer.next_token(),
        }
    }

    /// Source text and lexer position. Only meaningful with nothing peeked.
    pub fn raw_rest(&self) -> (&'a str, Pos) {
        debug_assert!(self.peeked.is_none());
        let pos = self.lexer.pos();
        (&self.lexer.source()[pos.offset..], pos)
    }

    pub fn unexpected(&mut self, expected: &str) -> ParseError {
        match self.peek() {
            Ok(t) => {
                let (pos, found) = (t.start, t.tok.describe());
                ParseError::new(pos, expected, found)
            }
            Err(e) => e,
        }
    }

    pub fn ident(&mut self, what: &str) -> Result<(String, Pos), ParseError> {
        match self.peek()?.tok {
            Tok::Ident(_) => {
                let t = self.bump()?;
                match t.tok {
                    Tok::Ident(s) => Ok((s, t.start)),
                    _ => unreachable!(),
                }
            }
            _ => Err(self.unexpected(what)),
        }
    }

    pub fn expect(&mut self, tok: Tok, what: &str) -> Result<Pos, ParseError> {
        if self.peek()?.tok == tok {
            Ok(self.bump()?.start)
        } else {
            Err(self.unexpected(what))
        }
    }

    /// Literal: STRING | INTEGER | DECIMAL | DATE.
    pub fn literal(&mut self) -> Result<crate::value::Value, ParseError> {
        use crate::value::Value;
        let v = match &self.peek()?.tok {
            Tok::Str(s) => Value::Text(s.clone()),
            Tok::Int(i) => Value::Int(*i),
            Tok::Decimal(d) => Value::Real(*d),
            Tok::Date(d) => Value::Date(*d),
            _ => return Err(self.unexpected("literal (string, integer, decimal or date)")),
        };
        self.bump()?;
        Ok(v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(src: &str) -> Vec<Tok> {
        let mut lx = Lexer::new(src, true);
        let mut out = Vec::new();
        loop {
            let t = lx.next_token().unwrap();
            if t.tok == Tok::Eof {
                return out;
            }
            out.push(t.tok);
        }
    }

    #[test]
    fn lexes_dates_numbers_and_units() {
        assert_eq!(
            toks("3600s 2025-01-01 -4 1.5 >= != # note\n x"),
            vec![
                Tok::Int(3600),
                Tok::Ident("s".into()),
                Tok::Date(Date::parse("2025-01-01").unwrap()),
                Tok::Int(-4),
                Tok::Decimal(1.5),
                Tok::Op(CmpOp::Ge),
                Tok::Op(CmpOp::Ne),
                Tok::Ident("x".into()),
            ]
        );
    }

    #[test]
    fn string_escapes() {
        assert_eq!(toks(r#""a\"b\\c\n""#), vec![Tok::Str("a\"b\\c\n".into())]);
    }

    #[test]
    fn errors_are_positioned() {
        let mut lx = Lexer::new("a\n  \"open", true);
        lx.next_token().unwrap();
        let err = lx.next_token().unwrap_err();
        assert_eq!((err.pos.line, err.pos.column), (2, 3));

        let mut lx = Lexer::new("2025-13-01", true);
        assert!(lx.next_token().is_err());
    }
}
