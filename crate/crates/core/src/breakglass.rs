//! Break-glass emergency access: accounts with no standing permissions,
//! quorum approval by distinct identities, short automatic activation, and
//! automatic revocation.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::contract::{validate_contract, DataContract, Origin, Timestamp};
use crate::store::SchemaCatalog;

pub const DEFAULT_QUORUM: usize = 2;
pub const DEFAULT_WINDOW_SECS: u64 = 900;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RequestStatus {
    Pending,
    Activated,
    Denied,
    AutoRevoked,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BreakGlassRequest {
    pub request_id: String,
    pub account_id: String,
    pub justification: String,
    pub contract_template: DataContract,
    pub approvals: BTreeSet<String>,
    pub quorum: usize,
    pub status: RequestStatus,
    pub activation_window: u64,
    pub activated_contract_id: Option<String>,
    pub requested_at: Timestamp,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum BreakGlassError {
    #[error("`{0}` is not a registered break-glass account")]
    UnknownAccount(String),
    #[error("template rejected: {0}")]
    ValidationFailed(String),
    #[error("no break-glass request `{0}`")]
    UnknownRequest(String),
    #[error("an account cannot approve its own request")]
    SelfApproval,
    #[error("`{0}` already approved this request")]
    DuplicateApproval(String),
    #[error("`{0}` is not an authorized approver")]
    UnauthorizedApprover(String),
    #[error("request `{request_id}` is {status:?}")]
    StateError {
        request_id: String,
        status: RequestStatus,
    },
}

impl BreakGlassError {
    pub fn code(&self) -> &'static str {
        match self {
            BreakGlassError::UnknownAccount(_) => "UnknownAccount",
            BreakGlassError::ValidationFailed(_) => "ValidationFailed",
            BreakGlassError::UnknownRequest(_) => "UnknownRequest",
            BreakGlassError::SelfApproval => "SelfApproval",
            BreakGlassError::DuplicateApproval(_) => "DuplicateApproval",
            BreakGlassError::UnauthorizedApprover(_) => "UnauthorizedApprover",
            BreakGlassError::StateError { .. } => "StateError",
        }
    }
}

/// Failure of [`BreakGlassDesk::approve`]: either the approval itself was
/// refused, or the quorum was met but activation failed (the approval is
/// then rolled back).
#[derive(Debug, PartialEq, thiserror::Error)]
pub enum ApproveError<E> {
    #[error(transparent)]
    Rejected(BreakGlassError),
    #[error("activation failed")]
    Activation(E),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ApproveOutcome<T> {
    Pending { approvals: usize, quorum: usize },
    Activated(T),
}

#[derive(Debug, Default)]
pub struct BreakGlassDesk {
    accounts: BTreeSet<String>,
    /// Empty means any identity other than the requester may approve.
    approvers: BTreeSet<String>,
    quorum: usize,
    window: u64,
    requests: BTreeMap<String, BreakGlassRequest>,
    next_id: u64,
}

impl BreakGlassDesk {
    pub fn new(quorum: usize, window: u64) -> Self {
        BreakGlassDesk {
            quorum: quorum.max(2),
            window,
            ..Default::default()
        }
    }

    /// Request ids continue after `issued` earlier requests.
    pub fn skip_ids(&mut self, issued: u64) {
        self.next_id = self.next_id.max(issued);
    }

    pub fn register_account(&mut self, account: impl Into<String>) {
        self.accounts.insert(account.into());
    }

    pub fn register_approver(&mut self, approver: impl Into<String>) {
        self.approvers.insert(approver.into());
    }

    pub fn is_account(&self, id: &str) -> bool {
        self.accounts.contains(id)
    }

    pub fn quorum(&self) -> usize {
        self.quorum
    }

    pub fn window(&self) -> u64 {
        self.window
    }

    pub fn request(&self, id: &str) -> Result<&BreakGlassRequest, BreakGlassError> {
        self.requests
            .get(id)
            .ok_or_else(|| BreakGlassError::UnknownRequest(id.to_string()))
    }

    pub fn requests(&self) -> impl Iterator<Item = &BreakGlassRequest> {
        self.requests.values()
    }

    /// Files a Pending request. The template must name the account as its
    /// principal and validate against the catalog.
    pub fn request_access(
        &mut self,
        account: &str,
        mut template: DataContract,
        justification: &str,
        catalog: &SchemaCatalog,
        now: Timestamp,
    ) -> Result<BreakGlassRequest, BreakGlassError> {
        if !self.accounts.contains(account) {
            return Err(BreakGlassError::UnknownAccount(account.to_string()));
        }
        if template.principal != account {
            return Err(BreakGlassError::ValidationFailed(format!(
                "template principal `{}` is not the requesting account",
                template.principal
            )));
        }
        template.origin = Origin::BreakGlass;
        template.ttl = self.window;
        let report = validate_contract(&template, catalog);
        if !report.ok {
            let msgs: Vec<_> = report.problems.iter().map(|p| p.message.as_str()).collect();
            return Err(BreakGlassError::ValidationFailed(msgs.join("; ")));
        }
        self.next_id += 1;
        let req = BreakGlassRequest {
            request_id: format!("bg-{}", self.next_id),
            account_id: account.to_string(),
            justification: justification.to_string(),
            contract_template: template,
            approvals: BTreeSet::new(),
            quorum: self.quorum,
            status: RequestStatus::Pending,
            activation_window: self.window,
            activated_contract_id: None,
            requested_at: now,
        };
        self.requests.insert(req.request_id.clone(), req.clone());
        Ok(req)
    }

    /// Records an approval. When it meets the quorum, `activate` runs with
    /// the request; its returned contract id marks the request Activated. If
    /// `activate` fails the approval is not recorded.
    pub fn approve<T, E>(
        &mut self,
        request_id: &str,
        approver: &str,
        activate: impl FnOnce(&BreakGlassRequest) -> Result<(String, T), E>,
    ) -> Result<ApproveOutcome<T>, ApproveError<E>> {
        let req = self
            .requests
            .get(request_id)
            .ok_or_else(|| ApproveError::Rejected(BreakGlassError::UnknownRequest(request_id.into())))?;
        if req.status != RequestStatus::Pending {
            return Err(ApproveError::Rejected(BreakGlassError::StateError {
                request_id: request_id.to_string(),
                status: req.status,
            }));
        }
        if approver == req.account_id {
            return Err(ApproveError::Rejected(BreakGlassError::SelfApproval));
        }
        if !self.approvers.is_empty() && !self.approvers.contains(approver) {
            return Err(ApproveError::Rejected(BreakGlassError::UnauthorizedApprover(
                approver.to_string(),
            )));
        }
        if req.approvals.contains(approver) {
            return Err(ApproveError::Rejected(BreakGlassError::DuplicateApproval(
                approver.to_string(),
            )));
        }

        let mut next = req.clone();
        next.approvals.insert(approver.to_string());
        if next.approvals.len() < next.quorum {
            let outcome = ApproveOutcome::Pending {
                approvals: next.approvals.len(),
                quorum: next.quorum,
            };
            self.requests.insert(request_id.to_string(), next);
            return Ok(outcome);
        }

        let (contract_id, extra) = activate(&next).map_err(ApproveError::Activation)?;
        next.status = RequestStatus::Activated;
        next.activated_contract_id = Some(contract_id);
        assert!(
            next.approvals.len() >= next.quorum && !next.approvals.contains(&next.account_id),
            "quorum soundness"
        );
        self.requests.insert(request_id.to_string(), next);
        Ok(ApproveOutcome::Activated(extra))
    }

    /// Operator denial of a Pending request.
    pub fn deny(&mut self, request_id: &str) -> Result<BreakGlassRequest, BreakGlassError> {
        let req = self
            .requests
            .get_mut(request_id)
            .ok_or_else(|| BreakGlassError::UnknownRequest(request_id.to_string()))?;
        if req.status != RequestStatus::Pending {
            return Err(BreakGlassError::StateError {
                request_id: request_id.to_string(),
                status: req.status,
            });
        }
        req.status = RequestStatus::Denied;
        Ok(req.clone())
    }

    /// Moves every Activated request whose contract is no longer live to
    /// AutoRevoked and returns them.
    pub fn sweep(&mut self, is_live: impl Fn(&str) -> bool) -> Vec<BreakGlassRequest> {
        let mut revoked = Vec::new();
        for req in self.requests.values_mut() {
            if req.status != RequestStatus::Activated {
                continue;
            }
            let live = req.activated_contract_id.as_deref().is_some_and(&is_live);
            if !live {
                req.status = RequestStatus::AutoRevoked;
                revoked.push(req.clone());
            }
        }
        revoked
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::contract::parse_contract;
    use crate::store::fixtures::orders_store;

    fn template(principal: &str, column: &str) -> DataContract {
        parse_contract(&format!(
            "contract \"bg\" {{ principal \"{principal}\" purpose \"incident\" expires_in 1s grant {{ source warehouse.orders columns [{column}] }} }}"
        ))
        .unwrap()
    }

    fn desk() -> BreakGlassDesk {
        let mut d = BreakGlassDesk::new(DEFAULT_QUORUM, DEFAULT_WINDOW_SECS);
        d.register_account("bg-admin");
        d
    }

    fn file(d: &mut BreakGlassDesk) -> String {
        d.request_access(
            "bg-admin",
            template("bg-admin", "amount"),
            "prod outage",
            &orders_store().catalog(),
            0,
        )
        .unwrap()
        .request_id
    }

    #[test]
    fn request_validation() {
        let mut d = desk();
        let cat = orders_store().catalog();
        let r = d
            .request_access("bg-admin", template("bg-admin", "amount"), "why", &cat, 0)
            .unwrap();
        assert_eq!(r.status, RequestStatus::Pending);
        assert!(r.approvals.is_empty());
        assert_eq!(r.contract_template.origin, Origin::BreakGlass);
        assert_eq!(r.contract_template.ttl, DEFAULT_WINDOW_SECS);
        assert_eq!(
            d.request_access("mallory", template("mallory", "amount"), "", &cat, 0),
            Err(BreakGlassError::UnknownAccount("mallory".into()))
        );
        assert!(matches!(
            d.request_access("bg-admin", template("bg-admin", "price"), "", &cat, 0),
            Err(BreakGlassError::ValidationFailed(_))
        ));
    }

    #[test]
    fn quorum_of_two_distinct_approvers() {
        let mut d = desk();
        let id = file(&mut d);
        let never = |_: &BreakGlassRequest| -> Result<(String, ()), ()> { panic!("no activation yet") };
        assert_eq!(
            d.approve(&id, "alice", never),
            Ok(ApproveOutcome::Pending {
                approvals: 1,
                quorum: 2
            })
        );
        assert_eq!(d.request(&id).unwrap().status, RequestStatus::Pending);
        assert_eq!(
            d.approve(&id, "alice", never),
            Err(ApproveError::Rejected(BreakGlassError::DuplicateApproval("alice".into())))
        );
        assert_eq!(
            d.approve(&id, "bg-admin", never),
            Err(ApproveError::Rejected(BreakGlassError::SelfApproval))
        );
        let out = d.approve(&id, "bob", |req: &BreakGlassRequest| -> Result<(String, u8), ()> {
            assert_eq!(req.approvals.len(), 2);
            Ok(("bg-c".into(), 7))
        });
        assert_eq!(out, Ok(ApproveOutcome::Activated(7)));
        let req = d.request(&id).unwrap();
        assert_eq!(req.status, RequestStatus::Activated);
        assert_eq!(req.activated_contract_id.as_deref(), Some("bg-c"));
        assert!(matches!(
            d.approve(&id, "carol", never),
            Err(ApproveError::Rejected(BreakGlassError::StateError { .. }))
        ));
    }

    #[test]
    fn failed_activation_rolls_back_approval() {
        let mut d = desk();
        let id = file(&mut d);
        d.approve(&id, "alice", |_| Ok::<_, ()>((String::new(), ()))).unwrap();
        let out = d.approve(&id, "bob", |_| Err::<(String, ()), _>("boom"));
        assert_eq!(out, Err(ApproveError::Activation("boom")));
        let req = d.request(&id).unwrap();
        assert_eq!(req.status, RequestStatus::Pending);
        assert_eq!(req.approvals.len(), 1);
    }

    #[test]
    fn approver_allow_list() {
        let mut d = desk();
        d.register_approver("alice");
        let id = file(&mut d);
        assert!(matches!(
            d.approve(&id, "eve", |_| Ok::<_, ()>((String::new(), ()))),
            Err(ApproveError::Rejected(BreakGlassError::UnauthorizedApprover(_)))
        ));
    }

    #[test]
    fn deny_and_sweep() {
        let mut d = desk();
        let id = file(&mut d);
        assert_eq!(d.deny(&id).unwrap().status, RequestStatus::Denied);
        assert!(d.deny(&id).is_err());
        assert!(d.sweep(|_| false).is_empty());

        let id = file(&mut d);
        for who in ["alice", "bob"] {
            d.approve(&id, who, |_| Ok::<_, ()>(("bg-c".to_string(), ()))).unwrap();
        }
        assert!(d.sweep(|_| true).is_empty());
        let revoked = d.sweep(|c| c != "bg-c");
        assert_eq!(revoked.len(), 1);
        assert_eq!(d.request(&id).unwrap().status, RequestStatus::AutoRevoked);
    }
}
