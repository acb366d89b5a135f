//! Data contracts: temporary, scoped grants that stand in for standing
//! database permissions.
//!
//! A contract moves `Draft -> Active -> {Expired, Revoked}`. Liveness is the
//! half-open interval `[activated_at, activated_at + ttl)` and is evaluated
//! lazily by [`DataContract::is_live`]; the broker's sweep makes expiry
//! observable in the status field.

mod dsl;
mod validate;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::canonical;
use crate::lexer::CmpOp;
use crate::value::Value;

pub use dsl::{parse_contract, print_contract};
pub use validate::{validate_contract, Problem, ProblemCode, ValidationReport};

/// Seconds on the broker clock (logical or wall).
pub type Timestamp = i64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ContractStatus {
    Draft,
    Active,
    Expired,
    Revoked,
}

impl ContractStatus {
    pub fn is_terminal(self) -> bool {
        matches!(self, ContractStatus::Expired | ContractStatus::Revoked)
    }
}

impl fmt::Display for ContractStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Origin {
    Standard,
    BreakGlass,
}

/// `namespace.table`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct QualifiedName {
    pub namespace: String,
    pub table: String,
}

impl QualifiedName {
    pub fn new(namespace: impl Into<String>, table: impl Into<String>) -> Self {
        QualifiedName {
            namespace: namespace.into(),
            table: table.into(),
        }
    }
}

impl fmt::Display for QualifiedName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}", self.namespace, self.table)
    }
}

fn is_ident(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

impl FromStr for QualifiedName {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.split_once('.') {
            Some((ns, t)) if is_ident(ns) && is_ident(t) => Ok(QualifiedName::new(ns, t)),
            _ => Err(format!("`{s}` is not a qualified name (namespace.table)")),
        }
    }
}

impl Serialize for QualifiedName {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for QualifiedName {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d)?
            .parse()
            .map_err(serde::de::Error::custom)
    }
}

/// Column projection of a grant.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Columns {
    All,
    Named(Vec<String>),
}

impl Serialize for Columns {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Columns::All => s.serialize_str("*"),
            Columns::Named(cols) => cols.serialize(s),
        }
    }
}

impl<'de> Deserialize<'de> for Columns {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Star(String),
            Named(Vec<String>),
        }
        match Repr::deserialize(d)? {
            Repr::Star(s) if s == "*" => Ok(Columns::All),
            Repr::Star(s) => Err(serde::de::Error::custom(format!(
                "expected \"*\" or a column list, found {s:?}"
            ))),
            Repr::Named(cols) => Ok(Columns::Named(cols)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub column: String,
    pub op: CmpOp,
    pub value: Value,
}

/// Conjunction of comparisons.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Predicate {
    pub conjuncts: Vec<Comparison>,
}

impl Predicate {
    pub fn columns(&self) -> impl Iterator<Item = &str> {
        self.conjuncts.iter().map(|c| c.column.as_str())
    }
}

impl fmt::Display for Predicate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, c) in self.conjuncts.iter().enumerate() {
            if i > 0 {
                f.write_str(" and ")?;
            }
            write!(f, "{} {} {}", c.column, c.op, c.value.literal())?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grant {
    pub source: QualifiedName,
    pub columns: Columns,
    pub row_predicate: Option<Predicate>,
    pub row_limit: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataContract {
    pub contract_id: String,
    pub principal: String,
    pub purpose: String,
    pub grants: Vec<Grant>,
    pub ttl: u64,
    pub status: ContractStatus,
    pub activated_at: Option<Timestamp>,
    pub origin: Origin,
    /// Operator (or break-glass approvers) that activated the contract.
    #[serde(default)]
    pub approved_by: Vec<String>,
    #[serde(default)]
    pub revoke_reason: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("cannot {op} contract `{contract_id}` in state {status}")]
pub struct StateError {
    pub contract_id: String,
    pub status: ContractStatus,
    pub op: &'static str,
}

impl DataContract {
    fn state_error(&self, op: &'static str) -> StateError {
        StateError {
            contract_id: self.contract_id.clone(),
            status: self.status,
            op,
        }
    }

    pub fn activate(&self, now: Timestamp) -> Result<DataContract, StateError> {
        if self.status != ContractStatus::Draft {
            return Err(self.state_error("activate"));
        }
        Ok(DataContract {
            status: ContractStatus::Active,
            activated_at: Some(now),
            ..self.clone()
        })
    }

    pub fn is_live(&self, now: Timestamp) -> bool {
        match (self.status, self.activated_at) {
            (ContractStatus::Active, Some(start)) => {
                now >= start && (now - start) < self.ttl_secs()
            }
            _ => false,
        }
    }

    /// Timestamp at which liveness ends, for active contracts.
    pub fn expires_at(&self) -> Option<Timestamp> {
        self.activated_at
            .map(|start| start.saturating_add(self.ttl_secs()))
    }

    fn ttl_secs(&self) -> i64 {
        i64::try_from(self.ttl).unwrap_or(i64::MAX)
    }

    pub fn revoke(&self, reason: &str) -> Result<DataContract, StateError> {
        if self.status != ContractStatus::Active {
            return Err(self.state_error("revoke"));
        }
        Ok(DataContract {
            status: ContractStatus::Revoked,
            revoke_reason: Some(reason.to_string()),
            ..self.clone()
        })
    }

    /// Active contract whose interval has elapsed at `now` becomes Expired.
    pub fn expire(&self, now: Timestamp) -> Result<DataContract, StateError> {
        if self.status != ContractStatus::Active || self.is_live(now) {
            return Err(self.state_error("expire"));
        }
        Ok(DataContract {
            status: ContractStatus::Expired,
            ..self.clone()
        })
    }

    /// Every column name referenced by the contract, with its source.
    pub fn referenced_columns(&self) -> Vec<(&QualifiedName, &str)> {
        let mut out = Vec::new();
        for g in &self.grants {
            if let Columns::Named(cols) = &g.columns {
                out.extend(cols.iter().map(|c| (&g.source, c.as_str())));
            }
            if let Some(p) = &g.row_predicate {
                out.extend(p.columns().map(|c| (&g.source, c)));
            }
        }
        out
    }

    /// Deterministic canonical-JSON bytes (sorted keys, no whitespace).
    pub fn canonical_encode(&self) -> Vec<u8> {
        let value = serde_json::to_value(self).expect("contract serializes");
        canonical::to_string(&value).into_bytes()
    }

    pub fn canonical_decode(bytes: &[u8]) -> Result<DataContract, serde_json::Error> {
        serde_json::from_slice(bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn draft(ttl: u64) -> DataContract {
        parse_contract(&format!(
            "contract \"c\" {{ principal \"p\" purpose \"x\" expires_in {ttl}s grant {{ source a.t columns * }} }}"
        ))
        .unwrap()
    }

    #[test]
    fn activation_lifecycle() {
        let c = draft(60);
        let active = c.activate(1000).unwrap();
        assert_eq!(active.status, ContractStatus::Active);
        assert_eq!(active.activated_at, Some(1000));
        assert!(active.activate(1001).is_err());

        let revoked = active.revoke("done").unwrap();
        assert!(revoked.activate(1002).is_err());
        assert!(!revoked.is_live(1001));
    }

    #[test]
    fn liveness_is_half_open() {
        let c = draft(60).activate(1000).unwrap();
        assert!(!c.is_live(999));
        assert!(c.is_live(1000));
        assert!(c.is_live(1059));
        assert!(!c.is_live(1060));
        assert!(c.expire(1059).is_err());
        assert_eq!(c.expire(1060).unwrap().status, ContractStatus::Expired);
    }

    #[test]
    fn revoke_requires_active() {
        let c = draft(60);
        assert!(c.revoke("r").is_err());
        let expired = c.activate(0).unwrap().expire(60).unwrap();
        assert!(expired.revoke("r").is_err());
    }

    #[test]
    fn canonical_encoding_is_deterministic() {
        let a = draft(60);
        let mut b = a.clone();
        assert_eq!(a.canonical_encode(), a.canonical_encode());
        b.purpose = "y".into();
        assert_ne!(a.canonical_encode(), b.canonical_encode());
        let decoded = DataContract::canonical_decode(&a.canonical_encode()).unwrap();
        assert_eq!(decoded, a);
        assert_eq!(decoded.canonical_encode(), a.canonical_encode());
    }
}
