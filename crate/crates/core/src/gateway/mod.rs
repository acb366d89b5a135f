//! Scope-enforcing query gateway. Statements are parsed, authorized against
//! the contract, and evaluated against sealed enclave segments only.

mod query;

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::contract::{Columns, ContractStatus, DataContract, Grant, Timestamp};
use crate::enclave::{Enclave, EnclaveState};
use crate::lexer::ParseError;
use crate::store::{eval_predicate, Row, Segment};

pub use query::{parse_query, Projection, QueryAst, Select, StatementKind};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Session {
    pub session_id: String,
    pub enclave_id: String,
    pub contract_id: String,
    pub opened_at: Timestamp,
    pub closed: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DenyCode {
    UnknownTable,
    ColumnOutOfScope,
    StatementForbidden,
    SessionDead,
    ContractExpired,
    RowLimitExceeded,
}

impl DenyCode {
    pub fn as_str(self) -> &'static str {
        match self {
            DenyCode::UnknownTable => "UnknownTable",
            DenyCode::ColumnOutOfScope => "ColumnOutOfScope",
            DenyCode::StatementForbidden => "StatementForbidden",
            DenyCode::SessionDead => "SessionDead",
            DenyCode::ContractExpired => "ContractExpired",
            DenyCode::RowLimitExceeded => "RowLimitExceeded",
        }
    }
}

impl fmt::Display for DenyCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Verdict {
    Allow,
    Deny,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Decision {
    pub verdict: Verdict,
    pub deny_code: Option<DenyCode>,
}

impl Decision {
    pub const ALLOW: Decision = Decision {
        verdict: Verdict::Allow,
        deny_code: None,
    };

    pub fn deny(code: DenyCode) -> Decision {
        Decision {
            verdict: Verdict::Deny,
            deny_code: Some(code),
        }
    }

    pub fn is_allow(&self) -> bool {
        self.verdict == Verdict::Allow
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryResult {
    pub columns: Vec<String>,
    pub rows: Vec<Row>,
    pub truncated: bool,
}

impl QueryResult {
    /// `{"columns": [...], "rows": [[...]], "truncated": bool}` with plain
    /// JSON cells.
    pub fn to_json(&self) -> serde_json::Value {
        let rows: Vec<serde_json::Value> = self
            .rows
            .iter()
            .map(|r| r.iter().map(|v| v.to_json()).collect())
            .collect();
        serde_json::json!({
            "columns": self.columns,
            "rows": rows,
            "truncated": self.truncated,
        })
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum QueryError {
    #[error("denied: {}", .0.deny_code.map_or("?", DenyCode::as_str))]
    Denied(Decision),
    #[error("parse error: {0}")]
    Parse(#[from] ParseError),
    #[error("literal type does not match column `{0}`")]
    TypeMismatch(String),
}

impl QueryError {
    pub fn code(&self) -> &'static str {
        match self {
            QueryError::Denied(d) => d.deny_code.map_or("Denied", DenyCode::as_str),
            QueryError::Parse(_) => "ParseError",
            QueryError::TypeMismatch(_) => "TypeMismatch",
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SessionError {
    #[error("enclave `{0}` is not serving")]
    EnclaveNotServing(String),
    #[error("token rejected")]
    BadToken,
    #[error("contract `{0}` is expired")]
    ContractExpired(String),
    #[error("session `{0}` is dead")]
    SessionDead(String),
    #[error("no session `{0}`")]
    UnknownSession(String),
}

impl SessionError {
    pub fn code(&self) -> &'static str {
        match self {
            SessionError::EnclaveNotServing(_) => "EnclaveNotServing",
            SessionError::BadToken => "BadToken",
            SessionError::ContractExpired(_) => "ContractExpired",
            SessionError::SessionDead(_) => "SessionDead",
            SessionError::UnknownSession(_) => "UnknownSession",
        }
    }
}

/// Table names visible in the enclave, one per grant source, first
/// occurrence wins.
pub fn enclave_tables(grants: &[Grant]) -> Vec<String> {
    let mut names: Vec<String> = Vec::new();
    for g in grants {
        if !names.contains(&g.source.table) {
            names.push(g.source.table.clone());
        }
    }
    names
}

fn grant_for<'g>(grants: &'g [Grant], table: &str) -> Option<(usize, &'g Grant)> {
    grants.iter().enumerate().find(|(_, g)| g.source.table == table)
}

/// Decides whether `ast` may run. Checks run against the contract even
/// though segments already exclude out-of-scope data.
pub fn authorize(
    ast: &QueryAst,
    contract: &DataContract,
    session: &Session,
    enclave: &Enclave,
    now: Timestamp,
) -> Decision {
    if matches!(ast, QueryAst::CopyInto { .. }) {
        return Decision::deny(DenyCode::StatementForbidden);
    }
    if session.closed || contract.status == ContractStatus::Revoked {
        return Decision::deny(DenyCode::SessionDead);
    }
    if !contract.is_live(now) {
        return Decision::deny(DenyCode::ContractExpired);
    }
    if enclave.state() != EnclaveState::Serving || session.enclave_id != enclave.id() {
        return Decision::deny(DenyCode::SessionDead);
    }
    let QueryAst::Select(select) = ast else {
        return Decision::ALLOW;
    };
    let Some((index, grant)) = grant_for(&contract.grants, &select.table) else {
        return Decision::deny(DenyCode::UnknownTable);
    };

    let in_scope = |col: &str| match &grant.columns {
        Columns::Named(cols) => cols.iter().any(|c| c == col),
        Columns::All => enclave
            .segment(index)
            .is_some_and(|s| s.columns.iter().any(|c| c.name == col)),
    };
    let projected: Vec<&str> = match &select.projection {
        Projection::Star => Vec::new(),
        Projection::Columns(cols) => cols.iter().map(String::as_str).collect(),
    };
    let filtered = select.predicate.iter().flat_map(|p| p.columns());
    if projected.into_iter().chain(filtered).any(|c| !in_scope(c)) {
        return Decision::deny(DenyCode::ColumnOutOfScope);
    }
    Decision::ALLOW
}

/// Evaluates an authorized SELECT against one segment.
fn evaluate(select: &Select, segment: &Segment, row_limit: Option<u64>) -> Result<QueryResult, QueryError> {
    let schema = segment.schema();
    if let Some(p) = &select.predicate {
        for cmp in &p.conjuncts {
            let (_, def) = schema
                .column(&cmp.column)
                .ok_or_else(|| QueryError::Denied(Decision::deny(DenyCode::ColumnOutOfScope)))?;
            if !cmp.value.matches(def.ty) {
                return Err(QueryError::TypeMismatch(cmp.column.clone()));
            }
        }
    }
    let indices: Vec<usize> = match &select.projection {
        Projection::Star => (0..schema.arity()).collect(),
        Projection::Columns(cols) => cols
            .iter()
            .map(|c| {
                schema
                    .column(c)
                    .map(|(i, _)| i)
                    .ok_or_else(|| QueryError::Denied(Decision::deny(DenyCode::ColumnOutOfScope)))
            })
            .collect::<Result<_, _>>()?,
    };

    let cap = match (select.limit, row_limit) {
        (Some(a), Some(b)) => Some(a.min(b)),
        (a, b) => a.or(b),
    };
    let mut rows = Vec::new();
    let mut truncated = false;
    for row in &segment.rows {
        if select
            .predicate
            .as_ref()
            .is_some_and(|p| !eval_predicate(row, &schema, p))
        {
            continue;
        }
        if cap.is_some_and(|c| rows.len() as u64 >= c) {
            truncated = true;
            break;
        }
        rows.push(indices.iter().map(|&i| row[i].clone()).collect());
    }
    Ok(QueryResult {
        columns: indices.iter().map(|&i| schema.columns[i].name.clone()).collect(),
        rows,
        truncated,
    })
}

/// What one `execute` call did, for auditing and monitoring.
#[derive(Debug, Clone, PartialEq)]
pub struct Execution {
    pub ast: Option<QueryAst>,
    /// `None` when the statement did not parse.
    pub decision: Option<Decision>,
    pub outcome: Result<QueryResult, QueryError>,
}

impl Execution {
    pub fn rows_returned(&self) -> u64 {
        self.outcome.as_ref().map_or(0, |r| r.rows.len() as u64)
    }
}

/// Parse, authorize and evaluate one statement. Never touches the table
/// store: all data comes from the enclave's segments.
pub fn execute(
    session: &Session,
    text: &str,
    contract: &DataContract,
    enclave: &Enclave,
    now: Timestamp,
) -> Execution {
    let ast = match parse_query(text) {
        Ok(ast) => ast,
        Err(e) => {
            return Execution {
                ast: None,
                decision: None,
                outcome: Err(QueryError::Parse(e)),
            }
        }
    };
    let decision = authorize(&ast, contract, session, enclave, now);
    if !decision.is_allow() {
        return Execution {
            ast: Some(ast),
            decision: Some(decision),
            outcome: Err(QueryError::Denied(decision)),
        };
    }
    let outcome = match &ast {
        QueryAst::ShowTables => Ok(QueryResult {
            columns: vec!["table".to_string()],
            rows: enclave_tables(enclave.grants())
                .into_iter()
                .map(|t| vec![crate::value::Value::Text(t)])
                .collect(),
            truncated: false,
        }),
        QueryAst::Select(select) => {
            let (index, grant) =
                grant_for(enclave.grants(), &select.table).expect("authorized table has a grant");
            match enclave.segment(index) {
                Some(segment) => evaluate(select, segment, grant.row_limit),
                None => Err(QueryError::Denied(Decision::deny(DenyCode::SessionDead))),
            }
        }
        QueryAst::CopyInto { .. } => unreachable!("COPY INTO is never authorized"),
    };
    Execution {
        ast: Some(ast),
        decision: Some(decision),
        outcome,
    }
}

/// Session table.
#[derive(Debug, Default)]
pub struct Gateway {
    sessions: BTreeMap<String, Session>,
    next_id: u64,
}

impl Gateway {
    pub fn new() -> Self {
        Self::default()
    }

    /// Session ids continue after `issued` earlier sessions.
    pub fn starting_at(issued: u64) -> Self {
        Gateway {
            sessions: BTreeMap::new(),
            next_id: issued,
        }
    }

    /// Opens a session on a serving enclave. `presented` must equal the
    /// credential bound to the contract.
    pub fn open_session(
        &mut self,
        enclave: &Enclave,
        contract: &DataContract,
        presented: Option<&str>,
        credential: Option<&str>,
        now: Timestamp,
    ) -> Result<Session, SessionError> {
        if enclave.state() != EnclaveState::Serving {
            return Err(SessionError::EnclaveNotServing(enclave.id().to_string()));
        }
        match (presented, credential) {
            (Some(p), Some(c)) if constant_time_eq(p.as_bytes(), c.as_bytes()) => {}
            _ => return Err(SessionError::BadToken),
        }
        if !contract.is_live(now) {
            return Err(SessionError::ContractExpired(contract.contract_id.clone()));
        }
        self.next_id += 1;
        let session = Session {
            session_id: format!("ses-{}", self.next_id),
            enclave_id: enclave.id().to_string(),
            contract_id: contract.contract_id.clone(),
            opened_at: now,
            closed: false,
        };
        self.sessions
            .insert(session.session_id.clone(), session.clone());
        Ok(session)
    }

    pub fn session(&self, id: &str) -> Result<&Session, SessionError> {
        self.sessions
            .get(id)
            .ok_or_else(|| SessionError::UnknownSession(id.to_string()))
    }

    pub fn close_session(&mut self, id: &str) -> Result<Session, SessionError> {
        let s = self
            .sessions
            .get_mut(id)
            .ok_or_else(|| SessionError::UnknownSession(id.to_string()))?;
        if s.closed {
            return Err(SessionError::SessionDead(id.to_string()));
        }
        s.closed = true;
        Ok(s.clone())
    }

    pub fn sessions(&self) -> impl Iterator<Item = &Session> {
        self.sessions.values()
    }
}

fn constant_time_eq(a: &[u8], b: &[u8]) -> bool {
    a.len() == b.len() && a.iter().zip(b).fold(0u8, |acc, (x, y)| acc | (x ^ y)) == 0
}
