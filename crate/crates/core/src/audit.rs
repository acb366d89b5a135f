//! Append-only, SHA-256 hash-chained audit ledger.
//!
//! Each event's hash covers the canonical JSON encoding of
//! `{actor, kind, payload, prev_hash, seq, timestamp}`. The persisted form is
//! JSON Lines, one canonical event (including its hash) per line. A small
//! sidecar head file records the expected length and tip hash so that tail
//! truncation is detectable too.

use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::canonical;
use crate::contract::Timestamp;

pub const GENESIS_HASH: &str = "0000000000000000000000000000000000000000000000000000000000000000";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EventKind {
    ContractSubmitted,
    ContractActivated,
    ContractRevoked,
    ContractExpired,
    EnclaveTransition,
    SessionOpened,
    SessionClosed,
    QueryExecuted,
    QueryDenied,
    AlertRaised,
    BreakGlassRequested,
    BreakGlassApproved,
    BreakGlassActivated,
    BreakGlassRevoked,
}

impl std::str::FromStr for EventKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        serde_json::from_value(Value::String(s.to_string()))
            .map_err(|_| format!("unknown audit event kind `{s}`"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditEvent {
    pub seq: u64,
    pub timestamp: Timestamp,
    pub actor: String,
    pub kind: EventKind,
    pub payload: Value,
    pub prev_hash: String,
    pub hash: String,
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

impl AuditEvent {
    /// Canonical bytes the hash is computed over.
    pub fn preimage(
        seq: u64,
        timestamp: Timestamp,
        actor: &str,
        kind: EventKind,
        payload: &Value,
        prev_hash: &str,
    ) -> String {
        canonical::to_string(&json!({
            "seq": seq,
            "timestamp": timestamp,
            "actor": actor,
            "kind": kind,
            "payload": payload,
            "prev_hash": prev_hash,
        }))
    }

    pub fn compute_hash(&self) -> String {
        sha256_hex(
            Self::preimage(
                self.seq,
                self.timestamp,
                &self.actor,
                self.kind,
                &self.payload,
                &self.prev_hash,
            )
            .as_bytes(),
        )
    }

    /// One persisted line, without the terminator.
    pub fn to_line(&self) -> String {
        canonical::to_string(&serde_json::to_value(self).expect("event serializes"))
    }

    pub fn payload_str(&self, key: &str) -> Option<&str> {
        self.payload.get(key).and_then(Value::as_str)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChainHead {
    pub len: u64,
    pub hash: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", content = "seq")]
pub enum VerifyOutcome {
    Ok,
    FirstBadSeq(u64),
}

/// Recomputes every hash and link. Returns the lowest position whose event
/// is inconsistent with the chain. With an `anchor`, a chain shorter than
/// the anchored length or ending at a different tip is also rejected.
pub fn verify_chain(events: &[AuditEvent], anchor: Option<&ChainHead>) -> VerifyOutcome {
    let mut prev = GENESIS_HASH.to_string();
    for (i, e) in events.iter().enumerate() {
        let i = i as u64;
        if e.seq != i || e.prev_hash != prev || e.compute_hash() != e.hash {
            return VerifyOutcome::FirstBadSeq(i);
        }
        prev = e.hash.clone();
    }
    check_anchor(events.len() as u64, &prev, anchor)
}

fn check_anchor(len: u64, tip: &str, anchor: Option<&ChainHead>) -> VerifyOutcome {
    match anchor {
        Some(head) if head.len > len => VerifyOutcome::FirstBadSeq(len),
        Some(head) if head.len < len => VerifyOutcome::FirstBadSeq(head.len),
        Some(head) if head.hash != tip => VerifyOutcome::FirstBadSeq(len.saturating_sub(1)),
        _ => VerifyOutcome::Ok,
    }
}

/// Verifies the raw bytes of a JSON-Lines ledger. Each line must be valid
/// UTF-8, parse as an event, and be byte-identical to its canonical form.
pub fn verify_bytes(raw: &[u8], anchor: Option<&ChainHead>) -> VerifyOutcome {
    let body = match raw.strip_suffix(b"\n") {
        Some(body) => body,
        None if raw.is_empty() => return check_anchor(0, GENESIS_HASH, anchor),
        // Missing final terminator: the last line is damaged.
        None => {
            let lines = raw.split(|&b| b == b'\n').count() as u64;
            return match verify_lines(raw) {
                VerifyOutcome::FirstBadSeq(n) => VerifyOutcome::FirstBadSeq(n),
                VerifyOutcome::Ok => VerifyOutcome::FirstBadSeq(lines - 1),
            };
        }
    };
    if body.is_empty() {
        // A lone terminator is one empty (bad) line.
        return VerifyOutcome::FirstBadSeq(0);
    }
    match verify_lines(body) {
        VerifyOutcome::Ok => {
            let events = parse_lines(body).expect("verified lines parse");
            let tip = events.last().map_or(GENESIS_HASH, |e| e.hash.as_str());
            check_anchor(events.len() as u64, tip, anchor)
        }
        bad => bad,
    }
}

fn parse_line(line: &[u8]) -> Option<AuditEvent> {
    let text = std::str::from_utf8(line).ok()?;
    let event: AuditEvent = serde_json::from_str(text).ok()?;
    (event.to_line() == text).then_some(event)
}

fn parse_lines(body: &[u8]) -> Option<Vec<AuditEvent>> {
    body.split(|&b| b == b'\n').map(parse_line).collect()
}

fn verify_lines(body: &[u8]) -> VerifyOutcome {
    let mut prev = GENESIS_HASH.to_string();
    for (i, line) in body.split(|&b| b == b'\n').enumerate() {
        let i = i as u64;
        match parse_line(line) {
            Some(e) if e.seq == i && e.prev_hash == prev && e.compute_hash() == e.hash => {
                prev = e.hash;
            }
            _ => return VerifyOutcome::FirstBadSeq(i),
        }
    }
    VerifyOutcome::Ok
}

#[derive(Debug, thiserror::Error)]
pub enum LedgerError {
    #[error("audit storage failure: {0}")]
    StorageFailure(#[from] std::io::Error),
    #[error("existing ledger fails verification at seq {0}")]
    Corrupt(u64),
}

impl LedgerError {
    pub fn code(&self) -> &'static str {
        match self {
            LedgerError::StorageFailure(_) => "StorageFailure",
            LedgerError::Corrupt(_) => "LedgerCorrupt",
        }
    }
}

/// Filter for [`Ledger::query_log`]. Time range is inclusive.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LogFilter {
    pub kind: Option<EventKind>,
    pub actor: Option<String>,
    pub contract_id: Option<String>,
    pub since: Option<Timestamp>,
    pub until: Option<Timestamp>,
}

impl LogFilter {
    fn matches(&self, e: &AuditEvent) -> bool {
        self.kind.is_none_or(|k| k == e.kind)
            && self.actor.as_ref().is_none_or(|a| *a == e.actor)
            && self
                .contract_id
                .as_ref()
                .is_none_or(|c| e.payload_str("contract_id") == Some(c.as_str()))
            && self.since.is_none_or(|t| e.timestamp >= t)
            && self.until.is_none_or(|t| e.timestamp <= t)
    }
}

#[derive(Debug)]
struct Sink {
    path: PathBuf,
    head_path: PathBuf,
    file: File,
}

/// The ledger. In-memory, or backed by a JSON-Lines file plus head file.
#[derive(Debug, Default)]
pub struct Ledger {
    events: Vec<AuditEvent>,
    sink: Option<Sink>,
}

pub fn head_path_for(path: &Path) -> PathBuf {
    let mut p = path.as_os_str().to_owned();
    p.push(".head");
    PathBuf::from(p)
}

pub fn read_head(path: &Path) -> Option<ChainHead> {
    let text = std::fs::read_to_string(head_path_for(path)).ok()?;
    serde_json::from_str(&text).ok()
}

impl Ledger {
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Opens (or creates) a file-backed ledger. An existing file must verify.
    pub fn open(path: &Path) -> Result<Ledger, LedgerError> {
        let raw = match std::fs::read(path) {
            Ok(raw) => raw,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Vec::new(),
            Err(e) => return Err(e.into()),
        };
        let head = read_head(path);
        if let VerifyOutcome::FirstBadSeq(n) = verify_bytes(&raw, head.as_ref()) {
            return Err(LedgerError::Corrupt(n));
        }
        let events = match raw.strip_suffix(b"\n") {
            Some(body) => parse_lines(body).ok_or(LedgerError::Corrupt(0))?,
            None => Vec::new(),
        };
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Ledger {
            events,
            sink: Some(Sink {
                path: path.to_path_buf(),
                head_path: head_path_for(path),
                file,
            }),
        })
    }

    pub fn path(&self) -> Option<&Path> {
        self.sink.as_ref().map(|s| s.path.as_path())
    }

    pub fn events(&self) -> &[AuditEvent] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn head(&self) -> ChainHead {
        ChainHead {
            len: self.events.len() as u64,
            hash: self
                .events
                .last()
                .map_or_else(|| GENESIS_HASH.to_string(), |e| e.hash.clone()),
        }
    }

    /// Seals and stores one event. For file-backed ledgers the line is
    /// flushed and synced before this returns.
    pub fn append(
        &mut self,
        timestamp: Timestamp,
        actor: &str,
        kind: EventKind,
        payload: Value,
    ) -> Result<AuditEvent, LedgerError> {
        let seq = self.events.len() as u64;
        let prev_hash = self
            .events
            .last()
            .map_or_else(|| GENESIS_HASH.to_string(), |e| e.hash.clone());
        let hash = sha256_hex(
            AuditEvent::preimage(seq, timestamp, actor, kind, &payload, &prev_hash).as_bytes(),
        );
        let event = AuditEvent {
            seq,
            timestamp,
            actor: actor.to_string(),
            kind,
            payload,
            prev_hash,
            hash,
        };
        if let Some(sink) = &mut self.sink {
            let mut line = event.to_line();
            line.push('\n');
            sink.file.write_all(line.as_bytes())?;
            sink.file.sync_data()?;
            let head = ChainHead {
                len: seq + 1,
                hash: event.hash.clone(),
            };
            let tmp = sink.head_path.with_extension("head.tmp");
            std::fs::write(&tmp, serde_json::to_vec(&head).expect("head serializes"))?;
            std::fs::rename(&tmp, &sink.head_path)?;
        }
        self.events.push(event.clone());
        Ok(event)
    }

    pub fn verify(&self) -> VerifyOutcome {
        verify_chain(&self.events, None)
    }

    /// Verifies the persisted file (raw bytes) against the in-memory head.
    pub fn verify_file(&self) -> Result<VerifyOutcome, LedgerError> {
        match &self.sink {
            Some(sink) => {
                let raw = std::fs::read(&sink.path)?;
                Ok(verify_bytes(&raw, Some(&self.head())))
            }
            None => Ok(self.verify()),
        }
    }

    pub fn query_log(&self, filter: &LogFilter) -> Vec<AuditEvent> {
        self.events.iter().filter(|e| filter.matches(e)).cloned().collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ledger(n: usize) -> Ledger {
        let mut l = Ledger::in_memory();
        for i in 0..n {
            l.append(
                i as i64,
                "op",
                EventKind::QueryExecuted,
                json!({"contract_id": "c1", "i": i}),
            )
            .unwrap();
        }
        l
    }

    #[test]
    fn genesis_and_chain_links() {
        let l = ledger(2);
        assert_eq!(l.events()[0].seq, 0);
        assert_eq!(l.events()[0].prev_hash, GENESIS_HASH);
        assert_eq!(l.events()[1].prev_hash, l.events()[0].hash);
        assert_eq!(l.events()[0].hash.len(), 64);
        assert!(l.events()[0].hash.chars().all(|c| c.is_ascii_hexdigit() && !c.is_ascii_uppercase()));
    }

    #[test]
    fn seq_is_hashed() {
        let mut l = Ledger::in_memory();
        let a = l.append(5, "op", EventKind::AlertRaised, json!({"x": 1})).unwrap();
        let mut other = Ledger::in_memory();
        other.append(0, "pad", EventKind::AlertRaised, json!({})).unwrap();
        let b = other.append(5, "op", EventKind::AlertRaised, json!({"x": 1})).unwrap();
        assert_ne!(a.hash, b.hash);
        // Same fields except seq and prev_hash: recompute with forged prev.
        let forged = AuditEvent {
            seq: 1,
            prev_hash: a.prev_hash.clone(),
            ..a.clone()
        };
        assert_ne!(forged.compute_hash(), a.hash);
    }

    #[test]
    fn verify_detects_payload_edit_and_deletion() {
        let l = ledger(10);
        assert_eq!(l.verify(), VerifyOutcome::Ok);

        let mut edited = l.events().to_vec();
        edited[4].payload = json!({"contract_id": "c1", "i": 40});
        assert_eq!(verify_chain(&edited, None), VerifyOutcome::FirstBadSeq(4));

        let mut deleted = l.events().to_vec();
        deleted.remove(7);
        assert_eq!(verify_chain(&deleted, None), VerifyOutcome::FirstBadSeq(7));

        let mut truncated = l.events().to_vec();
        truncated.pop();
        assert_eq!(verify_chain(&truncated, None), VerifyOutcome::Ok);
        assert_eq!(
            verify_chain(&truncated, Some(&l.head())),
            VerifyOutcome::FirstBadSeq(9)
        );
    }

    #[test]
    fn query_log_filters() {
        let mut l = ledger(3);
        assert!(Ledger::in_memory().query_log(&LogFilter::default()).is_empty());
        l.append(10, "admin", EventKind::ContractRevoked, json!({"contract_id": "c2"}))
            .unwrap();
        let by_kind = l.query_log(&LogFilter {
            kind: Some(EventKind::QueryExecuted),
            ..Default::default()
        });
        assert_eq!(by_kind.len(), 3);
        let by_contract = l.query_log(&LogFilter {
            contract_id: Some("c2".into()),
            ..Default::default()
        });
        assert_eq!(by_contract.len(), 1);
        let none = l.query_log(&LogFilter {
            since: Some(100),
            ..Default::default()
        });
        assert!(none.is_empty());
    }

    #[test]
    fn file_backed_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("audit.jsonl");
        {
            let mut l = Ledger::open(&path).unwrap();
            for i in 0..5 {
                let before = std::fs::read(&path).unwrap();
                l.append(i, "op", EventKind::SessionOpened, json!({"i": i})).unwrap();
                let after = std::fs::read(&path).unwrap();
                assert!(after.starts_with(&before), "append must only grow the file");
            }
            assert_eq!(l.verify_file().unwrap(), VerifyOutcome::Ok);
        }
        let mut reopened = Ledger::open(&path).unwrap();
        assert_eq!(reopened.len(), 5);
        reopened.append(9, "op", EventKind::SessionClosed, json!({})).unwrap();
        assert_eq!(reopened.verify_file().unwrap(), VerifyOutcome::Ok);

        let mut raw = std::fs::read(&path).unwrap();
        let at = raw.len() / 2;
        raw[at] ^= 0x01;
        std::fs::write(&path, &raw).unwrap();
        assert!(matches!(reopened.verify_file().unwrap(), VerifyOutcome::FirstBadSeq(_)));
        assert!(matches!(Ledger::open(&path), Err(LedgerError::Corrupt(_))));
    }
}
