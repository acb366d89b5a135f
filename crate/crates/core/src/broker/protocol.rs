//! NDJSON request/response framing and op dispatch.
//!
//! Request: `{"op": "...", "args": {...}, "token": "...", "id": "..."}`.
//! Response: `{"id": ..., "ok": true, "result": ...}` or
//! `{"id": ..., "ok": false, "error": {"code": "...", "message": "..."}}`.

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use super::{Broker, BrokerError};
use crate::audit::{EventKind, LogFilter};
use crate::monitor::{AlertFilter, Rule};

pub const DEFAULT_ACTOR: &str = "operator";

pub const OPS: &[&str] = &[
    "submit_contract",
    "activate_contract",
    "revoke_contract",
    "lint_contract",
    "create_enclave",
    "broker_enclave",
    "destroy_enclave",
    "open_session",
    "query",
    "close_session",
    "alerts",
    "audit_export",
    "audit_verify",
    "bg_request",
    "bg_approve",
    "bg_deny",
    "sweep",
    "tick",
    "live_grants",
    "status",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Request {
    pub op: String,
    #[serde(default)]
    pub args: Map<String, Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token: Option<String>,
    #[serde(default)]
    pub id: Value,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Response {
    pub id: Value,
    pub ok: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub result: Option<Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<ErrorBody>,
}

impl Response {
    pub fn success(id: Value, result: Value) -> Self {
        Response {
            id,
            ok: true,
            result: Some(result),
            error: None,
        }
    }

    pub fn failure(id: Value, code: &str, message: impl Into<String>) -> Self {
        Response {
            id,
            ok: false,
            result: None,
            error: Some(ErrorBody {
                code: code.to_string(),
                message: message.into(),
            }),
        }
    }

    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("response serializes")
    }
}

/// Errors raised while dispatching, before or instead of a broker error.
#[derive(Debug)]
enum DispatchError {
    BadRequest(String),
    UnknownOp(String),
    Broker(BrokerError),
}

impl From<BrokerError> for DispatchError {
    fn from(e: BrokerError) -> Self {
        DispatchError::Broker(e)
    }
}

type Dispatch = Result<Value, DispatchError>;

struct Args<'a>(&'a Map<String, Value>);

impl Args<'_> {
    fn str(&self, key: &str) -> Result<&str, DispatchError> {
        self.opt_str(key)?
            .ok_or_else(|| DispatchError::BadRequest(format!("missing string argument `{key}`")))
    }

    fn opt_str(&self, key: &str) -> Result<Option<&str>, DispatchError> {
        match self.0.get(key) {
            None | Some(Value::Null) => Ok(None),
            Some(Value::String(s)) => Ok(Some(s)),
            Some(_) => Err(DispatchError::BadRequest(format!("argument `{key}` must be a string"))),
        }
    }

    fn opt_i64(&self, key: &str) -> Result<Option<i64>, DispatchError> {
        match self.0.get(key) {
            None | Some(Value::Null) => Ok(None),
            Some(v) => v
                .as_i64()
                .map(Some)
                .ok_or_else(|| DispatchError::BadRequest(format!("argument `{key}` must be an integer"))),
        }
    }

    fn u64(&self, key: &str) -> Result<u64, DispatchError> {
        self.0
            .get(key)
            .and_then(Value::as_u64)
            .ok_or_else(|| DispatchError::BadRequest(format!("missing non-negative integer argument `{key}`")))
    }

    fn actor(&self) -> Result<&str, DispatchError> {
        Ok(self.opt_str("actor")?.unwrap_or(DEFAULT_ACTOR))
    }
}

fn to_value<T: Serialize>(v: T) -> Value {
    serde_json::to_value(v).expect("result serializes")
}

/// Parses one line and produces exactly one response line.
pub fn handle_line(broker: &mut Broker, line: &str) -> String {
    let req: Request = match serde_json::from_str(line) {
        Ok(r) => r,
        Err(e) => {
            // Echo the id when the line is JSON but not a valid request.
            let id = serde_json::from_str::<Value>(line)
                .ok()
                .and_then(|v| v.get("id").cloned())
                .unwrap_or(Value::Null);
            return Response::failure(id, "BadRequest", e.to_string()).to_line();
        }
    };
    handle(broker, &req).to_line()
}

pub fn handle(broker: &mut Broker, req: &Request) -> Response {
    match dispatch(broker, req) {
        Ok(result) => Response::success(req.id.clone(), result),
        Err(DispatchError::BadRequest(m)) => Response::failure(req.id.clone(), "BadRequest", m),
        Err(DispatchError::UnknownOp(op)) => {
            Response::failure(req.id.clone(), "UnknownOp", format!("unknown op `{op}`"))
        }
        Err(DispatchError::Broker(e)) => Response::failure(req.id.clone(), e.code(), e.to_string()),
    }
}

fn dispatch(b: &mut Broker, req: &Request) -> Dispatch {
    let a = Args(&req.args);
    let token = match req.token.as_deref() {
        Some(t) => Some(t),
        None => a.opt_str("token")?,
    };
    let v = match req.op.as_str() {
        "submit_contract" => {
            let c = b.submit_contract(a.str("text")?, a.actor()?)?;
            json!({"contract_id": c.contract_id, "status": c.status})
        }
        "activate_contract" => to_value(b.activate_contract(a.str("contract_id")?, a.actor()?)?),
        "revoke_contract" => {
            let id = a.str("contract_id")?;
            let reason = a.opt_str("reason")?.unwrap_or("revoked by operator");
            let enclaves = b.revoke_contract(id, reason, a.actor()?)?;
            json!({"contract_id": id, "status": "Revoked", "enclaves": enclaves})
        }
        "lint_contract" => {
            let c = b.lint(a.str("text")?)?;
            json!({"contract_id": c.contract_id, "ok": true})
        }
        "create_enclave" => json!({"enclave_id": b.create_enclave(a.str("contract_id")?)?}),
        "broker_enclave" => {
            let id = b.broker_enclave(a.str("contract_id")?)?;
            let e = b.enclave(&id)?;
            json!({
                "enclave_id": id,
                "state": e.state(),
                "seal_digest": e.seal_digest(),
                "segments": e.segments().values().map(|s| json!({
                    "source": s.origin.to_string(),
                    "rows": s.rows.len(),
                })).collect::<Vec<_>>(),
            })
        }
        "destroy_enclave" => {
            let id = a.str("enclave_id")?;
            b.destroy_enclave(id)?;
            json!({"enclave_id": id, "state": b.enclave(id)?.state()})
        }
        "open_session" => to_value(b.open_session(a.str("enclave_id")?, token)?),
        "query" => b.query(a.str("session_id")?, a.str("statement")?)?.to_json(),
        "close_session" => {
            let id = a.str("session_id")?;
            b.close_session(id)?;
            json!({"session_id": id, "closed": true})
        }
        "alerts" => {
            let rule = match a.opt_str("rule")? {
                Some(r) => Some(r.parse::<Rule>().map_err(DispatchError::BadRequest)?),
                None => None,
            };
            let filter = AlertFilter {
                contract_id: a.opt_str("contract_id")?.map(str::to_string),
                enclave_id: a.opt_str("enclave_id")?.map(str::to_string),
                rule,
                since: a.opt_i64("since")?,
                until: a.opt_i64("until")?,
            };
            to_value(b.alerts(&filter))
        }
        "audit_export" => {
            let kind = match a.opt_str("kind")? {
                Some(k) => Some(k.parse::<EventKind>().map_err(DispatchError::BadRequest)?),
                None => None,
            };
            let filter = LogFilter {
                kind,
                actor: a.opt_str("actor")?.map(str::to_string),
                contract_id: a.opt_str("contract_id")?.map(str::to_string),
                since: a.opt_i64("since")?,
                until: a.opt_i64("until")?,
            };
            to_value(b.query_log(&filter))
        }
        "audit_verify" => to_value(b.audit_verify()?),
        "bg_request" => to_value(b.bg_request(
            a.str("account")?,
            a.str("template")?,
            a.str("justification")?,
        )?),
        "bg_approve" => to_value(b.bg_approve(a.str("request_id")?, a.str("approver")?)?),
        "bg_deny" => to_value(b.bg_deny(a.str("request_id")?, a.actor()?)?),
        "sweep" => to_value(b.sweep()?),
        "tick" => {
            let now = b.tick(a.u64("seconds")?)?;
            json!({"now": now})
        }
        "live_grants" => to_value(b.live_grants()),
        "status" => json!({
            "now": b.now(),
            "contracts": b.contracts().count(),
            "enclaves": b.enclaves().count(),
            "queries": b.execute_calls(),
            "audit_events": b.ledger().len(),
            "audit_head": b.ledger().head(),
        }),
        other => return Err(DispatchError::UnknownOp(other.to_string())),
    };
    Ok(v)
}

/// Error codes that report a policy decision rather than a fault.
pub const POLICY_CODES: &[&str] = &[
    "StatementForbidden",
    "ColumnOutOfScope",
    "UnknownTable",
    "ContractExpired",
    "SessionDead",
    "RowLimitExceeded",
    "ParseError",
    "TypeMismatch",
    "BadToken",
    "EnclaveNotServing",
    "ContractNotLive",
    "ValidationFailed",
    "StandingPrivilegeForbidden",
    "SelfApproval",
    "DuplicateApproval",
    "UnauthorizedApprover",
    "UnknownAccount",
];

pub fn is_policy_code(code: &str) -> bool {
    POLICY_CODES.contains(&code)
}
