//! The gateway's query language: a SELECT subset, SHOW TABLES, and COPY INTO
//! (recognized so it can be refused and flagged).

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::contract::{Comparison, Predicate};
use crate::lexer::{Cursor, ParseError, Pos, Tok};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Projection {
    Star,
    Columns(Vec<String>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Select {
    pub projection: Projection,
    pub table: String,
    pub predicate: Option<Predicate>,
    pub limit: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum QueryAst {
    Select(Select),
    ShowTables,
    /// Never executed. `target` is the raw statement remainder.
    CopyInto { target: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum StatementKind {
    Select,
    ShowTables,
    CopyInto,
}

impl QueryAst {
    pub fn kind(&self) -> StatementKind {
        match self {
            QueryAst::Select(_) => StatementKind::Select,
            QueryAst::ShowTables => StatementKind::ShowTables,
            QueryAst::CopyInto { .. } => StatementKind::CopyInto,
        }
    }

    pub fn is_star_select(&self) -> bool {
        matches!(
            self,
            QueryAst::Select(Select {
                projection: Projection::Star,
                ..
            })
        )
    }
}

impl fmt::Display for QueryAst {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            QueryAst::ShowTables => f.write_str("SHOW TABLES"),
            QueryAst::CopyInto { target } => write!(f, "COPY INTO {target}"),
            QueryAst::Select(s) => {
                f.write_str("SELECT ")?;
                match &s.projection {
                    Projection::Star => f.write_str("*")?,
                    Projection::Columns(cols) => f.write_str(&cols.join(", "))?,
                }
                write!(f, " FROM {}", s.table)?;
                if let Some(p) = &s.predicate {
                    // Same comparison syntax as the contract DSL, upper-case AND.
                    for (i, c) in p.conjuncts.iter().enumerate() {
                        f.write_str(if i == 0 { " WHERE " } else { " AND " })?;
                        write!(f, "{} {} {}", c.column, c.op, c.value.literal())?;
                    }
                }
                if let Some(n) = s.limit {
                    write!(f, " LIMIT {n}")?;
                }
                Ok(())
            }
        }
    }
}

struct Parser<'a> {
    cur: Cursor<'a>,
    source: &'a str,
}

impl Parser<'_> {
    fn at_keyword(&mut self, kw: &str) -> Result<bool, ParseError> {
        Ok(matches!(&self.cur.peek()?.tok, Tok::Ident(s) if s.eq_ignore_ascii_case(kw)))
    }

    fn keyword(&mut self, kw: &str) -> Result<(), ParseError> {
        if self.at_keyword(kw)? {
            self.cur.bump()?;
            Ok(())
        } else {
            Err(self.cur.unexpected(kw))
        }
    }

    fn end(&mut self) -> Result<(), ParseError> {
        match self.cur.peek()?.tok {
            Tok::Eof => Ok(()),
            _ => Err(self.cur.unexpected("end of statement")),
        }
    }

    fn statement(&mut self) -> Result<QueryAst, ParseError> {
        if self.at_keyword("SELECT")? {
            self.cur.bump()?;
            self.select()
        } else if self.at_keyword("SHOW")? {
            self.cur.bump()?;
            self.keyword("TABLES")?;
            self.end()?;
            Ok(QueryAst::ShowTables)
        } else if self.at_keyword("COPY")? {
            self.cur.bump()?;
            self.keyword("INTO")?;
            self.copy_target()
        } else {
            Err(self.cur.unexpected("SELECT, SHOW or COPY"))
        }
    }

    fn copy_target(&mut self) -> Result<QueryAst, ParseError> {
        let (rest, pos) = self.cur.raw_rest();
        let (line, tail) = rest.split_once('\n').unwrap_or((rest, ""));
        let target = line.trim();
        if target.is_empty() {
            return Err(ParseError::new(pos, "COPY INTO target", "end of line"));
        }
        if !tail.trim().is_empty() {
            let skipped = tail.len() - tail.trim_start().len();
            let offset = pos.offset + line.len() + 1 + skipped;
            return Err(ParseError::new(
                Pos::at(self.source, offset),
                "end of statement",
                "another line",
            ));
        }
        Ok(QueryAst::CopyInto {
            target: target.to_string(),
        })
    }

    fn select(&mut self) -> Result<QueryAst, ParseError> {
        let projection = if self.cur.peek()?.tok == Tok::Star {
            self.cur.bump()?;
            Projection::Star
        } else {
            let mut cols = vec![self.cur.ident("`*` or column name")?.0];
            while self.cur.peek()?.tok == Tok::Comma {
                self.cur.bump()?;
                cols.push(self.cur.ident("column name")?.0);
            }
            Projection::Columns(cols)
        };
        self.keyword("FROM")?;
        let (table, _) = self.cur.ident("table name")?;

        let predicate = if self.at_keyword("WHERE")? {
            self.cur.bump()?;
            let mut conjuncts = vec![self.comparison()?];
            while self.at_keyword("AND")? {
                self.cur.bump()?;
                conjuncts.push(self.comparison()?);
            }
            Some(Predicate { conjuncts })
        } else {
            None
        };

        let limit = if self.at_keyword("LIMIT")? {
            self.cur.bump()?;
            let pos = self.cur.peek()?.start;
            match self.cur.peek()?.tok {
                Tok::Int(n) if n > 0 => {
                    self.cur.bump()?;
                    Some(n as u64)
                }
                _ => {
                    let found = self.cur.peek()?.tok.describe();
                    return Err(ParseError::new(pos, "positive integer limit", found));
                }
            }
        } else {
            None
        };
        self.end()?;
        Ok(QueryAst::Select(Select {
            projection,
            table,
            predicate,
            limit,
        }))
    }

    fn comparison(&mut self) -> Result<Comparison, ParseError> {
        let (column, _) = self.cur.ident("column name")?;
        let op = match self.cur.peek()?.tok {
            Tok::Op(op) => {
                self.cur.bump()?;
                op
            }
            _ => return Err(self.cur.unexpected("comparison operator")),
        };
        let value = self.cur.literal()?;
        Ok(Comparison { column, op, value })
    }
}

/// Parses one statement. Keywords are case-insensitive; identifiers are not.
pub fn parse_query(text: &str) -> Result<QueryAst, ParseError> {
    let mut p = Parser {
        cur: Cursor::new(text, false),
        source: text,
    };
    p.statement()
}
