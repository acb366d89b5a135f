//! Composition root. Every state transition of contracts, enclaves,
//! sessions and break-glass requests goes through [`Broker`], which audits
//! it before reporting success. Callers serialize access (the server holds
//! the broker behind one mutex), which gives per-object transition
//! serialization and a single global audit order.

mod config;
pub mod protocol;
pub mod server;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::RngCore;
use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::audit::{AuditEvent, EventKind, Ledger, LedgerError, LogFilter, VerifyOutcome};
use crate::breakglass::{ApproveError, ApproveOutcome, BreakGlassDesk, BreakGlassError, BreakGlassRequest};
use crate::contract::{
    parse_contract, validate_contract, ContractStatus, DataContract, Origin, QualifiedName,
    StateError, Timestamp, ValidationReport,
};
use crate::enclave::{Enclave, EnclaveError, TransitionCause};
use crate::gateway::{self, Execution, Gateway, QueryError, QueryResult, Session, SessionError};
use crate::lexer::ParseError;
use crate::monitor::{Alert, AlertFilter, EventKind as MonitorKind, Monitor, MonitorEvent};
use crate::store::{StoreError, TableStore};

pub use config::{BreakGlassConfig, BrokerConfig, Clock, ClockMode, TableSource};

const SYSTEM_ACTOR: &str = "broker";

#[derive(Debug, thiserror::Error)]
pub enum BrokerError {
    #[error("{0}")]
    Parse(#[from] ParseError),
    #[error("contract failed validation: {}", summarize(.0))]
    Validation(ValidationReport),
    #[error(transparent)]
    ContractState(#[from] StateError),
    #[error(transparent)]
    Enclave(#[from] EnclaveError),
    #[error(transparent)]
    Session(#[from] SessionError),
    #[error(transparent)]
    Query(#[from] QueryError),
    #[error(transparent)]
    BreakGlass(#[from] BreakGlassError),
    #[error(transparent)]
    Ledger(#[from] LedgerError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("no contract `{0}`")]
    UnknownContract(String),
    #[error("no enclave `{0}`")]
    UnknownEnclave(String),
    #[error("contract `{0}` already exists")]
    DuplicateContract(String),
    #[error("contract id `{0}` must match [A-Za-z0-9_.-]+ and not start with `.`")]
    BadContractId(String),
    #[error("`{0}` is a break-glass account and cannot hold standard contracts")]
    StandingPrivilegeForbidden(String),
    #[error("clock is not logical")]
    ClockNotLogical,
    #[error("{0}")]
    BadConfig(String),
    #[error("persistence failure: {0}")]
    Io(#[from] std::io::Error),
}

fn summarize(r: &ValidationReport) -> String {
    r.problems
        .iter()
        .map(|p| format!("{:?}: {}", p.code, p.message))
        .collect::<Vec<_>>()
        .join("; ")
}

impl BrokerError {
    pub fn code(&self) -> &'static str {
        match self {
            BrokerError::Parse(_) => "ParseError",
            BrokerError::Validation(_) => "ValidationFailed",
            BrokerError::ContractState(_) => "StateError",
            BrokerError::Enclave(e) => e.code(),
            BrokerError::Session(e) => e.code(),
            BrokerError::Query(e) => e.code(),
            BrokerError::BreakGlass(e) => e.code(),
            BrokerError::Ledger(e) => e.code(),
            BrokerError::Store(e) => e.code(),
            BrokerError::UnknownContract(_) => "UnknownContract",
            BrokerError::UnknownEnclave(_) => "UnknownEnclave",
            BrokerError::DuplicateContract(_) => "DuplicateContract",
            BrokerError::BadContractId(_) => "BadContractId",
            BrokerError::StandingPrivilegeForbidden(_) => "StandingPrivilegeForbidden",
            BrokerError::ClockNotLogical => "ClockNotLogical",
            BrokerError::BadConfig(_) => "BadConfig",
            BrokerError::Io(_) => "StorageFailure",
        }
    }

    /// Policy outcomes (as opposed to malformed requests or broker faults).
    pub fn is_denial(&self) -> bool {
        protocol::is_policy_code(self.code())
    }
}

pub type Result<T, E = BrokerError> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Activation {
    pub contract_id: String,
    pub token: String,
    pub activated_at: Timestamp,
    pub expires_at: Timestamp,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize)]
pub struct SweepReport {
    /// Contracts moved to Expired.
    pub expired: Vec<String>,
    pub expired_enclaves: Vec<String>,
    /// Break-glass requests moved to AutoRevoked.
    pub auto_revoked: Vec<String>,
}

impl SweepReport {
    pub fn is_empty(&self) -> bool {
        self.expired.is_empty() && self.expired_enclaves.is_empty() && self.auto_revoked.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LiveGrant {
    pub contract_id: String,
    pub principal: String,
    pub grant_index: usize,
    pub source: String,
    pub expires_at: Timestamp,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum ApprovalResult {
    Pending {
        request_id: String,
        approvals: usize,
        quorum: usize,
    },
    Activated {
        request_id: String,
        contract_id: String,
        enclave_id: String,
        token: String,
        alert_id: String,
        expires_at: Timestamp,
    },
}

fn digest_hex(s: &str) -> String {
    hex::encode(Sha256::digest(s.as_bytes()))
}

fn valid_contract_id(id: &str) -> bool {
    !id.is_empty()
        && !id.starts_with('.')
        && id
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '.' | '-'))
}

fn mint_token() -> String {
    let mut bytes = [0u8; 24];
    rand::thread_rng().fill_bytes(&mut bytes);
    hex::encode(bytes)
}

pub struct Broker {
    clock: Clock,
    store: TableStore,
    contracts: BTreeMap<String, DataContract>,
    /// SHA-256 of each contract's bearer token.
    credentials: BTreeMap<String, String>,
    enclaves: BTreeMap<String, Enclave>,
    gateway: Gateway,
    monitor: Monitor,
    ledger: Ledger,
    desk: BreakGlassDesk,
    data_dir: Option<PathBuf>,
    next_enclave: u64,
    execute_calls: u64,
}

impl Broker {
    /// Builds a broker from configuration: loads tables, opens or creates the
    /// ledger and contract store, restores the clock, and sweeps anything
    /// that expired while the broker was down.
    pub fn open(config: &BrokerConfig) -> Result<Broker> {
        config.validate().map_err(BrokerError::BadConfig)?;
        let mut store = TableStore::new();
        for t in &config.tables {
            let name: QualifiedName = t.name.parse().map_err(BrokerError::BadConfig)?;
            store.load_csv(name, &t.path)?;
        }
        let ledger = match &config.data_dir {
            Some(dir) => {
                std::fs::create_dir_all(dir.join("contracts"))?;
                std::fs::create_dir_all(dir.join("credentials"))?;
                Ledger::open(&dir.join("audit.jsonl"))?
            }
            None => Ledger::in_memory(),
        };
        let mut broker = Broker::with_parts(store, ledger, config);
        broker.data_dir = config.data_dir.clone();
        if let Some(dir) = &config.data_dir {
            broker.load_persisted(dir)?;
            if config.clock == ClockMode::Logical {
                if let Ok(text) = std::fs::read_to_string(dir.join("clock")) {
                    let saved: Timestamp = text.trim().parse().map_err(|_| {
                        BrokerError::BadConfig("corrupt clock file".into())
                    })?;
                    if saved > broker.clock.now() {
                        broker.clock = Clock::new(ClockMode::Logical, saved);
                    }
                }
            }
        }
        broker.sweep()?;
        Ok(broker)
    }

    /// In-memory broker over an already populated store.
    pub fn in_memory(store: TableStore, config: &BrokerConfig) -> Broker {
        Broker::with_parts(store, Ledger::in_memory(), config)
    }

    fn with_parts(store: TableStore, ledger: Ledger, config: &BrokerConfig) -> Broker {
        let start = ledger
            .events()
            .last()
            .map_or(config.start_time, |e| e.timestamp.max(config.start_time));
        let mut desk = BreakGlassDesk::new(config.break_glass.quorum, config.break_glass.window);
        for a in &config.break_glass.accounts {
            desk.register_account(a.clone());
        }
        for a in &config.break_glass.approvers {
            desk.register_approver(a.clone());
        }
        let mut broker = Broker {
            clock: Clock::new(config.clock, start),
            store,
            contracts: BTreeMap::new(),
            credentials: BTreeMap::new(),
            enclaves: BTreeMap::new(),
            gateway: Gateway::new(),
            monitor: Monitor::new(config.monitor),
            ledger,
            desk,
            data_dir: None,
            next_enclave: 0,
            execute_calls: 0,
        };
        broker.restore_counters();
        broker
    }

    /// Identifier counters continue from the ledger so ids stay unique
    /// across restarts.
    fn restore_counters(&mut self) {
        let mut enclaves = std::collections::BTreeSet::new();
        let mut sessions = 0;
        let mut requests = 0;
        for e in self.ledger.events() {
            match e.kind {
                EventKind::EnclaveTransition => {
                    if let Some(id) = e.payload_str("enclave_id") {
                        enclaves.insert(id.to_string());
                    }
                }
                EventKind::SessionOpened => sessions += 1,
                EventKind::BreakGlassRequested => requests += 1,
                _ => {}
            }
        }
        self.next_enclave = enclaves.len() as u64;
        self.gateway = Gateway::starting_at(sessions);
        self.desk.skip_ids(requests);
    }

    fn load_persisted(&mut self, dir: &Path) -> Result<()> {
        for entry in std::fs::read_dir(dir.join("contracts"))? {
            let path = entry?.path();
            if path.extension().and_then(|e| e.to_str()) != Some("json") {
                continue;
            }
            let bytes = std::fs::read(&path)?;
            let c = DataContract::canonical_decode(&bytes).map_err(|e| {
                BrokerError::BadConfig(format!("corrupt contract file {}: {e}", path.display()))
            })?;
            self.contracts.insert(c.contract_id.clone(), c);
        }
        for entry in std::fs::read_dir(dir.join("credentials"))? {
            let path = entry?.path();
            if let Some(id) = path.file_stem().and_then(|s| s.to_str()) {
                if path.extension().and_then(|e| e.to_str()) == Some("sha256") {
                    let digest = std::fs::read_to_string(&path)?.trim().to_string();
                    self.credentials.insert(id.to_string(), digest);
                }
            }
        }
        Ok(())
    }

    fn persist_contract(&self, c: &DataContract) -> Result<()> {
        if let Some(dir) = &self.data_dir {
            let path = dir.join("contracts").join(format!("{}.json", c.contract_id));
            let tmp = path.with_extension("json.tmp");
            std::fs::write(&tmp, c.canonical_encode())?;
            std::fs::rename(&tmp, &path)?;
        }
        Ok(())
    }

    fn persist_credential(&self, contract_id: &str, digest: &str) -> Result<()> {
        if let Some(dir) = &self.data_dir {
            let path = dir.join("credentials").join(format!("{contract_id}.sha256"));
            std::fs::write(path, digest)?;
        }
        Ok(())
    }

    fn audit(&mut self, actor: &str, kind: EventKind, payload: Value) -> Result<AuditEvent> {
        let now = self.clock.now();
        Ok(self.ledger.append(now, actor, kind, payload)?)
    }

    fn audit_transitions(&mut self, enclave: &Enclave, from: usize) -> Result<()> {
        for t in &enclave.transitions()[from..] {
            self.audit(
                SYSTEM_ACTOR,
                EventKind::EnclaveTransition,
                json!({
                    "enclave_id": t.enclave_id,
                    "contract_id": enclave.contract_id(),
                    "from": t.from,
                    "to": t.to,
                    "cause": t.cause,
                }),
            )?;
        }
        Ok(())
    }

    fn audit_alert(&mut self, alert: &Alert) -> Result<()> {
        self.audit(
            SYSTEM_ACTOR,
            EventKind::AlertRaised,
            json!({
                "alert_id": alert.alert_id,
                "rule": alert.rule,
                "severity": alert.severity,
                "contract_id": alert.contract_id,
                "enclave_id": alert.enclave_id,
                "session_id": alert.session_id,
                "evidence": alert.evidence,
            }),
        )?;
        Ok(())
    }

    // ----- accessors -------------------------------------------------------

    pub fn now(&self) -> Timestamp {
        self.clock.now()
    }

    pub fn store(&self) -> &TableStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut TableStore {
        &mut self.store
    }

    pub fn ledger(&self) -> &Ledger {
        &self.ledger
    }

    pub fn monitor(&self) -> &Monitor {
        &self.monitor
    }

    pub fn monitor_mut(&mut self) -> &mut Monitor {
        &mut self.monitor
    }

    pub fn desk(&self) -> &BreakGlassDesk {
        &self.desk
    }

    pub fn contract(&self, id: &str) -> Result<&DataContract> {
        self.contracts
            .get(id)
            .ok_or_else(|| BrokerError::UnknownContract(id.to_string()))
    }

    pub fn contracts(&self) -> impl Iterator<Item = &DataContract> {
        self.contracts.values()
    }

    pub fn enclave(&self, id: &str) -> Result<&Enclave> {
        self.enclaves
            .get(id)
            .ok_or_else(|| BrokerError::UnknownEnclave(id.to_string()))
    }

    pub fn enclaves(&self) -> impl Iterator<Item = &Enclave> {
        self.enclaves.values()
    }

    pub fn session(&self, id: &str) -> Result<&Session> {
        Ok(self.gateway.session(id)?)
    }

    /// Number of `query` calls served, allowed or not.
    pub fn execute_calls(&self) -> u64 {
        self.execute_calls
    }

    // ----- clock -----------------------------------------------------------

    pub fn tick(&mut self, seconds: u64) -> Result<Timestamp> {
        let mut next = self.clock;
        let now = next.tick(seconds).ok_or(BrokerError::ClockNotLogical)?;
        if let Some(dir) = &self.data_dir {
            let path = dir.join("clock");
            let tmp = dir.join("clock.tmp");
            std::fs::write(&tmp, now.to_string())?;
            std::fs::rename(&tmp, &path)?;
        }
        self.clock = next;
        Ok(now)
    }

    // ----- contracts -------------------------------------------------------

    /// Parses and validates without storing anything.
    pub fn lint(&self, text: &str) -> Result<DataContract> {
        let c = parse_contract(text)?;
        let report = validate_contract(&c, &self.store.catalog());
        if !report.ok {
            return Err(BrokerError::Validation(report));
        }
        Ok(c)
    }

    pub fn submit_contract(&mut self, text: &str, actor: &str) -> Result<DataContract> {
        let c = self.lint(text)?;
        if !valid_contract_id(&c.contract_id) {
            return Err(BrokerError::BadContractId(c.contract_id));
        }
        if self.contracts.contains_key(&c.contract_id) {
            return Err(BrokerError::DuplicateContract(c.contract_id));
        }
        if self.desk.is_account(&c.principal) {
            return Err(BrokerError::StandingPrivilegeForbidden(c.principal));
        }
        self.persist_contract(&c)?;
        self.audit(
            actor,
            EventKind::ContractSubmitted,
            json!({
                "contract_id": c.contract_id,
                "principal": c.principal,
                "purpose": c.purpose,
                "ttl": c.ttl,
                "origin": c.origin,
                "digest": hex::encode(Sha256::digest(c.canonical_encode())),
            }),
        )?;
        self.contracts.insert(c.contract_id.clone(), c.clone());
        Ok(c)
    }

    /// Activates a Draft contract and mints its bearer token. The token is
    /// returned once; only its digest is kept.
    pub fn activate_contract(&mut self, id: &str, actor: &str) -> Result<Activation> {
        let now = self.clock.now();
        let mut active = self.contract(id)?.activate(now)?;
        active.approved_by = vec![actor.to_string()];
        self.commit_activation(active, actor)
    }

    fn commit_activation(&mut self, active: DataContract, actor: &str) -> Result<Activation> {
        let token = mint_token();
        let digest = digest_hex(&token);
        let activated_at = active.activated_at.expect("active contract has activation time");
        let expires_at = active.expires_at().expect("active contract has expiry");
        self.persist_contract(&active)?;
        self.persist_credential(&active.contract_id, &digest)?;
        self.audit(
            actor,
            EventKind::ContractActivated,
            json!({
                "contract_id": active.contract_id,
                "principal": active.principal,
                "purpose": active.purpose,
                "origin": active.origin,
                "approved_by": active.approved_by,
                "activated_at": activated_at,
                "expires_at": expires_at,
            }),
        )?;
        let id = active.contract_id.clone();
        self.credentials.insert(id.clone(), digest);
        self.contracts.insert(id.clone(), active);
        Ok(Activation {
            contract_id: id,
            token,
            activated_at,
            expires_at,
        })
    }

    /// Revokes an Active contract and every active enclave serving it.
    pub fn revoke_contract(&mut self, id: &str, reason: &str, actor: &str) -> Result<Vec<String>> {
        let revoked = self.contract(id)?.revoke(reason)?;
        self.persist_contract(&revoked)?;
        self.audit(
            actor,
            EventKind::ContractRevoked,
            json!({"contract_id": id, "reason": reason}),
        )?;
        self.contracts.insert(id.to_string(), revoked);
        self.end_enclaves_of(id, TransitionCause::Revocation)
    }

    fn end_enclaves_of(&mut self, contract_id: &str, cause: TransitionCause) -> Result<Vec<String>> {
        let now = self.clock.now();
        let ids: Vec<String> = self
            .enclaves
            .values()
            .filter(|e| e.contract_id() == contract_id && e.state().is_active())
            .map(|e| e.id().to_string())
            .collect();
        for eid in &ids {
            let mut e = self.enclaves[eid].clone();
            let mark = e.transitions().len();
            e.expire_or_revoke(cause, now)?;
            self.audit_transitions(&e, mark)?;
            self.enclaves.insert(eid.clone(), e);
        }
        Ok(ids)
    }

    /// Every grant of every contract live right now.
    pub fn live_grants(&self) -> Vec<LiveGrant> {
        let now = self.clock.now();
        self.contracts
            .values()
            .filter(|c| c.is_live(now))
            .flat_map(|c| {
                c.grants.iter().enumerate().map(move |(i, g)| LiveGrant {
                    contract_id: c.contract_id.clone(),
                    principal: c.principal.clone(),
                    grant_index: i,
                    source: g.source.to_string(),
                    expires_at: c.expires_at().unwrap_or_default(),
                })
            })
            .collect()
    }

    // ----- enclaves --------------------------------------------------------

    pub fn create_enclave(&mut self, contract_id: &str) -> Result<String> {
        let now = self.clock.now();
        let contract = self.contract(contract_id)?;
        let id = format!("enc-{}", self.next_enclave + 1);
        let e = Enclave::create(id.clone(), contract, now)?;
        self.next_enclave += 1;
        self.audit_transitions(&e, 0)?;
        self.enclaves.insert(id.clone(), e);
        Ok(id)
    }

    fn step_enclave(
        &mut self,
        id: &str,
        op: impl FnOnce(&mut Enclave, &TableStore, Timestamp) -> Result<(), EnclaveError>,
    ) -> Result<()> {
        let now = self.clock.now();
        let mut e = self.enclave(id)?.clone();
        let mark = e.transitions().len();
        let result = op(&mut e, &self.store, now);
        self.audit_transitions(&e, mark)?;
        self.enclaves.insert(id.to_string(), e);
        Ok(result?)
    }

    pub fn provision(&mut self, enclave_id: &str) -> Result<()> {
        self.step_enclave(enclave_id, |e, store, now| e.provision(store, now))
    }

    pub fn seal(&mut self, enclave_id: &str) -> Result<()> {
        self.step_enclave(enclave_id, |e, _, now| e.seal(now))
    }

    pub fn open_gate(&mut self, enclave_id: &str) -> Result<()> {
        self.step_enclave(enclave_id, |e, _, now| e.open_gate(now))
    }

    pub fn destroy_enclave(&mut self, enclave_id: &str) -> Result<()> {
        self.step_enclave(enclave_id, |e, _, now| e.destroy(now))
    }

    /// create, provision, seal, open_gate as one flow.
    pub fn broker_enclave(&mut self, contract_id: &str) -> Result<String> {
        let id = self.create_enclave(contract_id)?;
        self.provision(&id)?;
        self.seal(&id)?;
        self.open_gate(&id)?;
        Ok(id)
    }

    // ----- sessions and queries -------------------------------------------

    pub fn open_session(&mut self, enclave_id: &str, token: Option<&str>) -> Result<Session> {
        let now = self.clock.now();
        let enclave = self
            .enclaves
            .get(enclave_id)
            .ok_or_else(|| BrokerError::UnknownEnclave(enclave_id.to_string()))?;
        let contract = self
            .contracts
            .get(enclave.contract_id())
            .ok_or_else(|| BrokerError::UnknownContract(enclave.contract_id().to_string()))?;
        let presented = token.map(digest_hex);
        let credential = self.credentials.get(&contract.contract_id).map(String::as_str);
        let principal = contract.principal.clone();
        let session = self.gateway.open_session(
            enclave,
            contract,
            presented.as_deref(),
            credential,
            now,
        )?;
        self.audit(
            &principal,
            EventKind::SessionOpened,
            json!({
                "session_id": session.session_id,
                "enclave_id": session.enclave_id,
                "contract_id": session.contract_id,
            }),
        )?;
        Ok(session)
    }

    pub fn close_session(&mut self, session_id: &str) -> Result<()> {
        let s = self.gateway.close_session(session_id)?;
        let actor = self
            .contracts
            .get(&s.contract_id)
            .map_or_else(|| SYSTEM_ACTOR.to_string(), |c| c.principal.clone());
        self.audit(
            &actor,
            EventKind::SessionClosed,
            json!({
                "session_id": s.session_id,
                "enclave_id": s.enclave_id,
                "contract_id": s.contract_id,
            }),
        )?;
        Ok(())
    }

    /// Runs one statement through the gateway. Every call, allowed or not,
    /// is audited and reported to the monitor before returning.
    pub fn query(&mut self, session_id: &str, text: &str) -> Result<QueryResult> {
        self.execute_calls += 1;
        let now = self.clock.now();

        let execution = match self.gateway.session(session_id) {
            Ok(session) => {
                let session = session.clone();
                match (
                    self.enclaves.get(&session.enclave_id),
                    self.contracts.get(&session.contract_id),
                ) {
                    (Some(e), Some(c)) => {
                        let ex = gateway::execute(&session, text, c, e, now);
                        (session, ex)
                    }
                    _ => (session, dead_execution(text)),
                }
            }
            Err(_) => (
                Session {
                    session_id: session_id.to_string(),
                    enclave_id: String::new(),
                    contract_id: String::new(),
                    opened_at: now,
                    closed: true,
                },
                dead_execution(text),
            ),
        };
        let (session, execution) = execution;
        let actor = self
            .contracts
            .get(&session.contract_id)
            .map_or_else(|| "unknown".to_string(), |c| c.principal.clone());

        let allowed = execution.outcome.is_ok();
        let kind = match &execution.ast {
            None => MonitorKind::Malformed,
            Some(ast) if ast.is_star_select() => MonitorKind::StarSelect,
            Some(ast) => match ast.kind() {
                gateway::StatementKind::Select => MonitorKind::Select,
                gateway::StatementKind::ShowTables => MonitorKind::ShowTables,
                gateway::StatementKind::CopyInto => MonitorKind::CopyInto,
            },
        };
        let mut payload = json!({
            "session_id": session.session_id,
            "enclave_id": session.enclave_id,
            "contract_id": session.contract_id,
            "statement": text,
            "statement_kind": kind,
        });
        match &execution.outcome {
            Ok(r) => {
                payload["rows"] = json!(r.rows.len());
                payload["truncated"] = json!(r.truncated);
            }
            Err(e) => {
                payload["deny_code"] = json!(e.code());
                payload["reason"] = json!(e.to_string());
            }
        }
        let audit_kind = if allowed {
            EventKind::QueryExecuted
        } else {
            EventKind::QueryDenied
        };
        self.audit(&actor, audit_kind, payload)?;

        let alerts = self.monitor.record_event(MonitorEvent {
            index: 0,
            session_id: session.session_id.clone(),
            enclave_id: session.enclave_id.clone(),
            contract_id: session.contract_id.clone(),
            kind,
            verdict: if allowed {
                gateway::Verdict::Allow
            } else {
                gateway::Verdict::Deny
            },
            rows_returned: execution.rows_returned(),
            timestamp: now,
        });
        for a in &alerts {
            self.audit_alert(a)?;
        }
        Ok(execution.outcome?)
    }

    pub fn alerts(&self, filter: &AlertFilter) -> Vec<Alert> {
        self.monitor.alerts(filter)
    }

    pub fn query_log(&self, filter: &LogFilter) -> Vec<AuditEvent> {
        self.ledger.query_log(filter)
    }

    /// Verifies the persisted ledger bytes (or the in-memory chain).
    pub fn audit_verify(&self) -> Result<VerifyOutcome> {
        Ok(self.ledger.verify_file()?)
    }

    // ----- break-glass -----------------------------------------------------

    pub fn bg_request(
        &mut self,
        account: &str,
        template_text: &str,
        justification: &str,
    ) -> Result<BreakGlassRequest> {
        let now = self.clock.now();
        let template = parse_contract(template_text)?;
        let req = self.desk.request_access(
            account,
            template,
            justification,
            &self.store.catalog(),
            now,
        )?;
        self.audit(
            account,
            EventKind::BreakGlassRequested,
            json!({
                "request_id": req.request_id,
                "account_id": req.account_id,
                "justification": req.justification,
                "quorum": req.quorum,
                "activation_window": req.activation_window,
                "template_id": req.contract_template.contract_id,
            }),
        )?;
        Ok(req)
    }

    /// Adds one approval. The quorum-meeting approval activates the contract,
    /// brokers a serving enclave and raises a Critical alert before
    /// returning.
    pub fn bg_approve(&mut self, request_id: &str, approver: &str) -> Result<ApprovalResult> {
        let mut desk = std::mem::take(&mut self.desk);
        let outcome = desk.approve(request_id, approver, |req| self.activate_break_glass(req, approver));
        self.desk = desk;
        match outcome {
            Ok(ApproveOutcome::Pending { approvals, quorum }) => {
                self.audit(
                    approver,
                    EventKind::BreakGlassApproved,
                    json!({
                        "request_id": request_id,
                        "approver": approver,
                        "approvals": approvals,
                        "quorum": quorum,
                    }),
                )?;
                Ok(ApprovalResult::Pending {
                    request_id: request_id.to_string(),
                    approvals,
                    quorum,
                })
            }
            Ok(ApproveOutcome::Activated(result)) => Ok(result),
            Err(ApproveError::Rejected(e)) => Err(e.into()),
            Err(ApproveError::Activation(e)) => Err(e),
        }
    }

    fn activate_break_glass(
        &mut self,
        req: &BreakGlassRequest,
        approver: &str,
    ) -> Result<(String, ApprovalResult)> {
        let now = self.clock.now();
        let base = format!("{}-{}", req.request_id, req.contract_template.contract_id);
        if !valid_contract_id(&base) {
            return Err(BrokerError::BadContractId(base));
        }
        // A failed earlier attempt leaves its revoked contract behind.
        let contract_id = std::iter::once(base.clone())
            .chain((2..).map(|n| format!("{base}-{n}")))
            .find(|id| !self.contracts.contains_key(id))
            .expect("unbounded id sequence");
        let mut draft = req.contract_template.clone();
        draft.contract_id = contract_id.clone();
        draft.origin = Origin::BreakGlass;
        draft.ttl = req.activation_window;
        let mut active = draft.activate(now)?;
        active.approved_by = req.approvals.iter().cloned().collect();

        self.audit(
            approver,
            EventKind::BreakGlassApproved,
            json!({
                "request_id": req.request_id,
                "approver": approver,
                "approvals": req.approvals.len(),
                "quorum": req.quorum,
            }),
        )?;
        let activation = self.commit_activation(active, approver)?;
        let enclave_id = match self.broker_enclave(&contract_id) {
            Ok(id) => id,
            Err(e) => {
                // No half-activated emergency grant may survive.
                let _ = self.revoke_contract(&contract_id, "break-glass activation failed", SYSTEM_ACTOR);
                return Err(e);
            }
        };
        let alert = self
            .monitor
            .raise_break_glass(&req.request_id, &contract_id, Some(&enclave_id), now);
        self.audit(
            SYSTEM_ACTOR,
            EventKind::BreakGlassActivated,
            json!({
                "request_id": req.request_id,
                "account_id": req.account_id,
                "contract_id": contract_id,
                "enclave_id": enclave_id,
                "approvals": req.approvals,
                "expires_at": activation.expires_at,
            }),
        )?;
        self.audit_alert(&alert)?;
        Ok((
            contract_id.clone(),
            ApprovalResult::Activated {
                request_id: req.request_id.clone(),
                contract_id,
                enclave_id,
                token: activation.token,
                alert_id: alert.alert_id,
                expires_at: activation.expires_at,
            },
        ))
    }

    pub fn bg_deny(&mut self, request_id: &str, actor: &str) -> Result<BreakGlassRequest> {
        let req = self.desk.deny(request_id)?;
        self.audit(
            actor,
            EventKind::BreakGlassRevoked,
            json!({"request_id": request_id, "status": req.status}),
        )?;
        Ok(req)
    }

    // ----- expiry ----------------------------------------------------------

    /// Expires every Active contract past its TTL together with its
    /// enclaves, then auto-revokes lapsed break-glass activations.
    pub fn sweep(&mut self) -> Result<SweepReport> {
        let now = self.clock.now();
        let mut report = SweepReport::default();
        let overdue: Vec<String> = self
            .contracts
            .values()
            .filter(|c| c.status == ContractStatus::Active && !c.is_live(now))
            .map(|c| c.contract_id.clone())
            .collect();
        for id in overdue {
            let expired = self.contracts[&id].expire(now)?;
            self.persist_contract(&expired)?;
            self.audit(
                SYSTEM_ACTOR,
                EventKind::ContractExpired,
                json!({"contract_id": id, "expires_at": expired.expires_at()}),
            )?;
            let cause = match expired.origin {
                Origin::BreakGlass => TransitionCause::BreakGlassAuto,
                Origin::Standard => TransitionCause::Expiry,
            };
            self.contracts.insert(id.clone(), expired);
            report.expired_enclaves.extend(self.end_enclaves_of(&id, cause)?);
            report.expired.push(id);
        }

        let contracts = &self.contracts;
        let revoked = self
            .desk
            .sweep(|cid| contracts.get(cid).is_some_and(|c| c.is_live(now)));
        for req in revoked {
            let cid = req.activated_contract_id.clone().unwrap_or_default();
            // Enclaves still active here were left over by an earlier revoke.
            report
                .expired_enclaves
                .extend(self.end_enclaves_of(&cid, TransitionCause::BreakGlassAuto)?);
            self.audit(
                SYSTEM_ACTOR,
                EventKind::BreakGlassRevoked,
                json!({
                    "request_id": req.request_id,
                    "account_id": req.account_id,
                    "contract_id": cid,
                    "status": req.status,
                }),
            )?;
            report.auto_revoked.push(req.request_id);
        }
        Ok(report)
    }
}

fn dead_execution(text: &str) -> Execution {
    let (ast, outcome) = match gateway::parse_query(text) {
        Err(e) => (None, Err(QueryError::Parse(e))),
        Ok(ast) => {
            let code = match ast {
                gateway::QueryAst::CopyInto { .. } => gateway::DenyCode::StatementForbidden,
                _ => gateway::DenyCode::SessionDead,
            };
            (Some(ast), Err(QueryError::Denied(gateway::Decision::deny(code))))
        }
    };
    let decision = match &outcome {
        Err(QueryError::Denied(d)) => Some(*d),
        _ => None,
    };
    Execution {
        ast,
        decision,
        outcome,
    }
}
