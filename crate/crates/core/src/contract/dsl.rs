//! Recursive-descent parser and printer for the contract DSL.
//!
//! ```text
//! contract "c1" {
//!   principal "svc-reporting"
//!   purpose "q report"
//!   expires_in 1h
//!   grant {
//!     source warehouse.orders
//!     columns [order_id, amount, created_at]
//!     where created_at >= 2025-01-01 and amount > 10
//!     row_limit 100
//!   }
//! }
//! ```

use std::fmt::Write as _;

use super::{Columns, Comparison, ContractStatus, DataContract, Grant, Origin, Predicate, QualifiedName};
use crate::lexer::{Cursor, ParseError, Tok};
use crate::value::quote;

/// Parses one contract document into a Draft contract with Standard origin.
pub fn parse_contract(text: &str) -> Result<DataContract, ParseError> {
    let mut p = Parser {
        cur: Cursor::new(text, true),
    };
    let c = p.contract()?;
    match p.cur.peek()?.tok {
        Tok::Eof => Ok(c),
        _ => Err(p.cur.unexpected("end of input")),
    }
}

struct Parser<'a> {
    cur: Cursor<'a>,
}

impl Parser<'_> {
    fn keyword(&mut self, kw: &str) -> Result<(), ParseError> {
        match &self.cur.peek()?.tok {
            Tok::Ident(s) if s == kw => {
                self.cur.bump()?;
                Ok(())
            }
            _ => Err(self.cur.unexpected(&format!("`{kw}`"))),
        }
    }

    fn at_keyword(&mut self, kw: &str) -> Result<bool, ParseError> {
        Ok(matches!(&self.cur.peek()?.tok, Tok::Ident(s) if s == kw))
    }

    fn string(&mut self, what: &str) -> Result<String, ParseError> {
        match &self.cur.peek()?.tok {
            Tok::Str(_) => match self.cur.bump()?.tok {
                Tok::Str(s) => Ok(s),
                _ => unreachable!(),
            },
            _ => Err(self.cur.unexpected(what)),
        }
    }

    fn unsigned(&mut self, what: &str) -> Result<u64, ParseError> {
        match self.cur.peek()?.tok {
            Tok::Int(v) if v >= 0 => {
                self.cur.bump()?;
                Ok(v as u64)
            }
            _ => Err(self.cur.unexpected(what)),
        }
    }

    fn contract(&mut self) -> Result<DataContract, ParseError> {
        self.keyword("contract")?;
        let contract_id = self.string("contract id string")?;
        self.cur.expect(Tok::LBrace, "`{`")?;
        self.keyword("principal")?;
        let principal = self.string("principal string")?;
        self.keyword("purpose")?;
        let purpose = self.string("purpose string")?;
        self.keyword("expires_in")?;
        let ttl = self.ttl()?;
        let mut grants = vec![self.grant()?];
        while self.at_keyword("grant")? {
            grants.push(self.grant()?);
        }
        self.cur.expect(Tok::RBrace, "`grant` or `}`")?;
        Ok(DataContract {
            contract_id,
            principal,
            purpose,
            grants,
            ttl,
            status: ContractStatus::Draft,
            activated_at: None,
            origin: Origin::Standard,
            approved_by: Vec::new(),
            revoke_reason: None,
        })
    }

    fn ttl(&mut self) -> Result<u64, ParseError> {
        let pos = self.cur.peek()?.start;
        let amount = self.unsigned("non-negative integer duration")?;
        let (unit, unit_pos) = self.cur.ident("duration unit `s`, `m` or `h`")?;
        let scale = match unit.as_str() {
            "s" => 1,
            "m" => 60,
            "h" => 3600,
            other => {
                return Err(ParseError::new(
                    unit_pos,
                    "duration unit `s`, `m` or `h`",
                    format!("`{other}`"),
                ))
            }
        };
        amount
            .checked_mul(scale)
            .ok_or_else(|| ParseError::new(pos, "duration within range", "overflow"))
    }

    fn grant(&mut self) -> Result<Grant, ParseError> {
        self.keyword("grant")?;
        self.cur.expect(Tok::LBrace, "`{`")?;
        self.keyword("source")?;
        let (namespace, _) = self.cur.ident("source namespace")?;
        self.cur.expect(Tok::Dot, "`.`")?;
        let (table, _) = self.cur.ident("source table")?;
        self.keyword("columns")?;
        let columns = if self.cur.peek()?.tok == Tok::Star {
            self.cur.bump()?;
            Columns::All
        } else {
            self.cur.expect(Tok::LBracket, "`[` or `*`")?;
            let mut cols = vec![self.cur.ident("column name")?.0];
            while self.cur.peek()?.tok == Tok::Comma {
                self.cur.bump()?;
                cols.push(self.cur.ident("column name")?.0);
            }
            self.cur.expect(Tok::RBracket, "`,` or `]`")?;
            Columns::Named(cols)
        };
        let row_predicate = if self.at_keyword("where")? {
            self.cur.bump()?;
            Some(self.predicate()?)
        } else {
            None
        };
        let row_limit = if self.at_keyword("row_limit")? {
            self.cur.bump()?;
            let pos = self.cur.peek()?.start;
            match self.unsigned("positive integer row limit")? {
                0 => return Err(ParseError::new(pos, "positive integer row limit", "0")),
                n => Some(n),
            }
        } else {
            None
        };
        self.cur.expect(Tok::RBrace, "`where`, `row_limit` or `}`")?;
        Ok(Grant {
            source: QualifiedName::new(namespace, table),
            columns,
            row_predicate,
            row_limit,
        })
    }

    fn predicate(&mut self) -> Result<Predicate, ParseError> {
        let mut conjuncts = vec![self.comparison()?];
        while self.at_keyword("and")? {
            self.cur.bump()?;
            conjuncts.push(self.comparison()?);
        }
        Ok(Predicate { conjuncts })
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

/// Renders a contract in the DSL. Lifecycle fields (status, activation,
/// origin) are not part of the surface syntax.
pub fn print_contract(c: &DataContract) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "contract {} {{", quote(&c.contract_id));
    let _ = writeln!(out, "  principal {}", quote(&c.principal));
    let _ = writeln!(out, "  purpose {}", quote(&c.purpose));
    let _ = writeln!(out, "  expires_in {}s", c.ttl);
    for g in &c.grants {
        out.push_str("  grant {\n");
        let _ = writeln!(out, "    source {}", g.source);
        match &g.columns {
            Columns::All => out.push_str("    columns *\n"),
            Columns::Named(cols) => {
                let _ = writeln!(out, "    columns [{}]", cols.join(", "));
            }
        }
        if let Some(p) = &g.row_predicate {
            let _ = writeln!(out, "    where {p}");
        }
        if let Some(n) = g.row_limit {
            let _ = writeln!(out, "    row_limit {n}");
        }
        out.push_str("  }\n");
    }
    out.push_str("}\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lexer::CmpOp;
    use crate::value::{Date, Value};

    const C1: &str = r#"contract "c1" { principal "svc-reporting" purpose "q report" expires_in 3600s grant { source warehouse.orders columns [order_id, amount, created_at] where created_at >= 2025-01-01 } }"#;

    #[test]
    fn parses_reporting_contract() {
        let c = parse_contract(C1).unwrap();
        assert_eq!(c.contract_id, "c1");
        assert_eq!(c.principal, "svc-reporting");
        assert_eq!(c.purpose, "q report");
        assert_eq!(c.ttl, 3600);
        assert_eq!(c.status, ContractStatus::Draft);
        assert_eq!(c.origin, Origin::Standard);
        assert!(c.activated_at.is_none());
        assert_eq!(c.grants.len(), 1);
        let g = &c.grants[0];
        assert_eq!(g.source, QualifiedName::new("warehouse", "orders"));
        assert_eq!(
            g.columns,
            Columns::Named(vec!["order_id".into(), "amount".into(), "created_at".into()])
        );
        assert_eq!(
            g.row_predicate.as_ref().unwrap().conjuncts,
            vec![Comparison {
                column: "created_at".into(),
                op: CmpOp::Ge,
                value: Value::Date(Date::parse("2025-01-01").unwrap()),
            }]
        );
    }

    #[test]
    fn parses_star_grant_without_predicate() {
        let c = parse_contract(
            r#"contract "c2" { principal "p" purpose "x" expires_in 60s grant { source a.t columns * } }"#,
        )
        .unwrap();
        assert_eq!(c.grants[0].columns, Columns::All);
        assert!(c.grants[0].row_predicate.is_none());
        assert_eq!(c.ttl, 60);
    }

    #[test]
    fn missing_clauses_are_errors() {
        let err = parse_contract(r#"contract "c3" { principal "p" }"#).unwrap_err();
        assert_eq!(err.expected, "`purpose`");
        assert_eq!((err.pos.line, err.pos.column), (1, 31));
    }

    #[test]
    fn units_comments_and_row_limit() {
        let c = parse_contract(
            "# header\ncontract \"x\" {\n principal \"p\" # who\n purpose \"q\"\n expires_in 2h\n grant { source a.t columns [a] row_limit 5 }\n grant { source b.u columns * where k = \"v\" and n != -3 and r < 1.5 }\n}\n",
        )
        .unwrap();
        assert_eq!(c.ttl, 7200);
        assert_eq!(c.grants.len(), 2);
        assert_eq!(c.grants[0].row_limit, Some(5));
        assert_eq!(c.grants[1].row_predicate.as_ref().unwrap().conjuncts.len(), 3);
    }

    #[test]
    fn rejects_zero_row_limit_and_bad_unit() {
        assert!(parse_contract(
            r#"contract "x" { principal "p" purpose "q" expires_in 1s grant { source a.t columns * row_limit 0 } }"#
        )
        .is_err());
        let err = parse_contract(
            r#"contract "x" { principal "p" purpose "q" expires_in 1d grant { source a.t columns * } }"#,
        )
        .unwrap_err();
        assert!(err.expected.contains("duration unit"));
    }

    #[test]
    fn keywords_are_case_sensitive() {
        assert!(parse_contract(
            r#"Contract "x" { principal "p" purpose "q" expires_in 1s grant { source a.t columns * } }"#
        )
        .is_err());
    }

    #[test]
    fn print_then_parse() {
        let c = parse_contract(C1).unwrap();
        assert_eq!(parse_contract(&print_contract(&c)).unwrap(), c);
    }
}
