//! Enclave lifecycle with the man-trap door interlock.
//!
//! The upstream door (to the table store) is open only while
//! `Provisioning`; the gateway door is open only while `Serving`. The two are
//! never open at the same time. The store is passed into [`Enclave::provision`]
//! by reference and never retained, so a sealed enclave has no path back to
//! the sources.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::contract::{DataContract, Grant, Timestamp};
use crate::store::{Segment, StoreError, TableStore};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EnclaveState {
    Defined,
    Provisioning,
    Sealed,
    Serving,
    Expired,
    Revoked,
    Destroyed,
}

impl EnclaveState {
    pub fn is_active(self) -> bool {
        matches!(
            self,
            EnclaveState::Defined
                | EnclaveState::Provisioning
                | EnclaveState::Sealed
                | EnclaveState::Serving
        )
    }
}

impl fmt::Display for EnclaveState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TransitionCause {
    Operator,
    Expiry,
    Revocation,
    BreakGlassAuto,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransitionRecord {
    pub enclave_id: String,
    /// `None` for the creation record.
    pub from: Option<EnclaveState>,
    pub to: EnclaveState,
    pub at: Timestamp,
    pub cause: TransitionCause,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EnclaveError {
    #[error("contract `{0}` is not live")]
    ContractNotLive(String),
    #[error("enclave `{enclave_id}`: cannot {op} in state {state}")]
    StateError {
        enclave_id: String,
        state: EnclaveState,
        op: &'static str,
    },
    #[error("enclave `{0}`: upstream and gateway doors would both be open")]
    ManTrapViolation(String),
    #[error("enclave `{enclave_id}` revoked during provisioning: {source}")]
    ProvisionFailed {
        enclave_id: String,
        #[source]
        source: StoreError,
    },
}

impl EnclaveError {
    pub fn code(&self) -> &'static str {
        match self {
            EnclaveError::ContractNotLive(_) => "ContractNotLive",
            EnclaveError::StateError { .. } => "StateError",
            EnclaveError::ManTrapViolation(_) => "ManTrapViolation",
            EnclaveError::ProvisionFailed { source, .. } => source.code(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Enclave {
    id: String,
    contract_id: String,
    grants: Vec<Grant>,
    state: EnclaveState,
    upstream_open: bool,
    gateway_open: bool,
    segments: BTreeMap<usize, Segment>,
    created_at: Timestamp,
    sealed_at: Option<Timestamp>,
    seal_digest: Option<String>,
    transitions: Vec<TransitionRecord>,
}

impl Enclave {
    /// New enclave over a live contract, both doors closed.
    pub fn create(
        id: impl Into<String>,
        contract: &DataContract,
        now: Timestamp,
    ) -> Result<Enclave, EnclaveError> {
        if !contract.is_live(now) {
            return Err(EnclaveError::ContractNotLive(contract.contract_id.clone()));
        }
        let id = id.into();
        let mut e = Enclave {
            id: id.clone(),
            contract_id: contract.contract_id.clone(),
            grants: contract.grants.clone(),
            state: EnclaveState::Defined,
            upstream_open: false,
            gateway_open: false,
            segments: BTreeMap::new(),
            created_at: now,
            sealed_at: None,
            seal_digest: None,
            transitions: Vec::new(),
        };
        e.transitions.push(TransitionRecord {
            enclave_id: id,
            from: None,
            to: EnclaveState::Defined,
            at: now,
            cause: TransitionCause::Operator,
        });
        Ok(e)
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn contract_id(&self) -> &str {
        &self.contract_id
    }

    pub fn grants(&self) -> &[Grant] {
        &self.grants
    }

    pub fn state(&self) -> EnclaveState {
        self.state
    }

    pub fn upstream_open(&self) -> bool {
        self.upstream_open
    }

    pub fn gateway_open(&self) -> bool {
        self.gateway_open
    }

    pub fn segments(&self) -> &BTreeMap<usize, Segment> {
        &self.segments
    }

    pub fn segment(&self, grant_index: usize) -> Option<&Segment> {
        self.segments.get(&grant_index)
    }

    pub fn created_at(&self) -> Timestamp {
        self.created_at
    }

    pub fn sealed_at(&self) -> Option<Timestamp> {
        self.sealed_at
    }

    /// Digest of all segments recorded at seal time.
    pub fn seal_digest(&self) -> Option<&str> {
        self.seal_digest.as_deref()
    }

    pub fn transitions(&self) -> &[TransitionRecord] {
        &self.transitions
    }

    /// Combined digest over all segments in grant order.
    pub fn segments_digest(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        for (i, seg) in &self.segments {
            h.update(i.to_le_bytes());
            h.update(seg.digest().as_bytes());
        }
        hex::encode(h.finalize())
    }

    /// Door and state coupling. Holds after every public operation.
    pub fn check_invariants(&self) -> Result<(), String> {
        if self.upstream_open && self.gateway_open {
            return Err("both doors open".into());
        }
        if self.upstream_open && self.state != EnclaveState::Provisioning {
            return Err(format!("upstream open in {}", self.state));
        }
        if self.gateway_open && self.state != EnclaveState::Serving {
            return Err(format!("gateway open in {}", self.state));
        }
        if self.state == EnclaveState::Destroyed && !self.segments.is_empty() {
            return Err("destroyed enclave still holds segments".into());
        }
        Ok(())
    }

    fn state_error(&self, op: &'static str) -> EnclaveError {
        EnclaveError::StateError {
            enclave_id: self.id.clone(),
            state: self.state,
            op,
        }
    }

    fn transition(&mut self, to: EnclaveState, at: Timestamp, cause: TransitionCause) {
        self.transitions.push(TransitionRecord {
            enclave_id: self.id.clone(),
            from: Some(self.state),
            to,
            at,
            cause,
        });
        self.state = to;
        assert!(
            !(self.upstream_open && self.gateway_open),
            "man-trap invariant broken in enclave {}",
            self.id
        );
    }

    /// Opens the upstream door and materializes one segment per grant. The
    /// door stays open until [`Enclave::seal`]. A failed extraction revokes
    /// the enclave.
    pub fn provision(&mut self, store: &TableStore, now: Timestamp) -> Result<(), EnclaveError> {
        if self.state != EnclaveState::Defined || self.gateway_open {
            return Err(self.state_error("provision"));
        }
        self.transition(EnclaveState::Provisioning, now, TransitionCause::Operator);
        self.upstream_open = true;

        let extracted: Result<BTreeMap<usize, Segment>, StoreError> = self
            .grants
            .iter()
            .enumerate()
            .map(|(i, g)| store.extract_segment(&g.source, g, now).map(|s| (i, s)))
            .collect();
        match extracted {
            Ok(segments) => {
                self.segments = segments;
                Ok(())
            }
            Err(source) => {
                self.upstream_open = false;
                self.transition(EnclaveState::Revoked, now, TransitionCause::Revocation);
                Err(EnclaveError::ProvisionFailed {
                    enclave_id: self.id.clone(),
                    source,
                })
            }
        }
    }

    /// Closes the upstream door. Segments are immutable from here on.
    pub fn seal(&mut self, now: Timestamp) -> Result<(), EnclaveError> {
        if self.state != EnclaveState::Provisioning || self.segments.len() != self.grants.len() {
            return Err(self.state_error("seal"));
        }
        self.upstream_open = false;
        self.sealed_at = Some(now);
        self.seal_digest = Some(self.segments_digest());
        self.transition(EnclaveState::Sealed, now, TransitionCause::Operator);
        Ok(())
    }

    /// Opens the gateway door on a sealed enclave.
    pub fn open_gate(&mut self, now: Timestamp) -> Result<(), EnclaveError> {
        if self.state != EnclaveState::Sealed {
            return Err(self.state_error("open_gate"));
        }
        if self.upstream_open {
            return Err(EnclaveError::ManTrapViolation(self.id.clone()));
        }
        self.transition(EnclaveState::Serving, now, TransitionCause::Operator);
        self.gateway_open = true;
        Ok(())
    }

    /// Closes both doors. `Expiry` and `BreakGlassAuto` end in `Expired`;
    /// `Revocation` and `Operator` end in `Revoked`.
    pub fn expire_or_revoke(
        &mut self,
        cause: TransitionCause,
        now: Timestamp,
    ) -> Result<EnclaveState, EnclaveError> {
        if !self.state.is_active() {
            return Err(self.state_error("expire_or_revoke"));
        }
        let to = match cause {
            TransitionCause::Expiry | TransitionCause::BreakGlassAuto => EnclaveState::Expired,
            TransitionCause::Revocation | TransitionCause::Operator => EnclaveState::Revoked,
        };
        self.upstream_open = false;
        self.gateway_open = false;
        self.transition(to, now, cause);
        Ok(to)
    }

    /// Erases segments of an expired or revoked enclave.
    pub fn destroy(&mut self, now: Timestamp) -> Result<(), EnclaveError> {
        if !matches!(self.state, EnclaveState::Expired | EnclaveState::Revoked) {
            return Err(self.state_error("destroy"));
        }
        self.segments.clear();
        self.transition(EnclaveState::Destroyed, now, TransitionCause::Operator);
        Ok(())
    }

    #[cfg(test)]
    pub(crate) fn forge_upstream_open(&mut self) {
        self.upstream_open = true;
    }
}
