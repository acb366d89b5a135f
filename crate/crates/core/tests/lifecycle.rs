use proptest::prelude::*;

use dataenclave_core::contract::{parse_contract, ContractStatus, DataContract, QualifiedName};
use dataenclave_core::enclave::{Enclave, EnclaveError, EnclaveState, TransitionCause};
use dataenclave_core::store::{ColumnDef, Schema, TableStore};
use dataenclave_core::value::{ColumnType, Value};

fn store() -> TableStore {
    let mut s = TableStore::new();
    s.register_table(
        QualifiedName::new("w", "t"),
        Schema::new(vec![
            ColumnDef::new("id", ColumnType::Int),
            ColumnDef::new("v", ColumnType::Text),
        ]),
        (0..5).map(|i| vec![Value::Int(i), Value::Text(format!("r{i}"))]).collect(),
    )
    .unwrap();
    s
}

fn contract(ttl: u64) -> DataContract {
    parse_contract(&format!(
        "contract \"k\" {{ principal \"p\" purpose \"x\" expires_in {ttl}s grant {{ source w.t columns [id] where id < 3 }} }}"
    ))
    .unwrap()
}

#[derive(Debug, Clone, Copy)]
enum Op {
    Provision,
    ProvisionBroken,
    Seal,
    OpenGate,
    Expire,
    Revoke,
    Destroy,
}

fn op() -> impl Strategy<Value = Op> {
    prop_oneof![
        Just(Op::Provision),
        Just(Op::ProvisionBroken),
        Just(Op::Seal),
        Just(Op::OpenGate),
        Just(Op::Expire),
        Just(Op::Revoke),
        Just(Op::Destroy),
    ]
}

/// Reference transition table. `None` means the operation must be refused.
fn model(s: EnclaveState, op: Op) -> Option<EnclaveState> {
    use EnclaveState::*;
    let active = matches!(s, Defined | Provisioning | Sealed | Serving);
    match op {
        Op::Provision if s == Defined => Some(Provisioning),
        Op::ProvisionBroken if s == Defined => Some(Revoked),
        Op::Seal if s == Provisioning => Some(Sealed),
        Op::OpenGate if s == Sealed => Some(Serving),
        Op::Expire if active => Some(Expired),
        Op::Revoke if active => Some(Revoked),
        Op::Destroy if matches!(s, Expired | Revoked) => Some(Destroyed),
        _ => None,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn enclave_follows_the_reference_machine(ops in prop::collection::vec(op(), 0..12)) {
        let good = store();
        let broken = TableStore::new();
        let c = contract(60).activate(0).unwrap();
        let mut e = Enclave::create("e", &c, 0).unwrap();
        let mut expected = EnclaveState::Defined;
        for (t, op) in ops.into_iter().enumerate() {
            let now = t as i64;
            let before = e.state();
            let r = match op {
                Op::Provision => e.provision(&good, now),
                Op::ProvisionBroken => e.provision(&broken, now),
                Op::Seal => e.seal(now),
                Op::OpenGate => e.open_gate(now),
                Op::Expire => e.expire_or_revoke(TransitionCause::Expiry, now).map(|_| ()),
                Op::Revoke => e.expire_or_revoke(TransitionCause::Revocation, now).map(|_| ()),
                Op::Destroy => e.destroy(now),
            };
            match model(expected, op) {
                Some(next) => {
                    if matches!(op, Op::ProvisionBroken) {
                        let is_provision_failure = matches!(r, Err(EnclaveError::ProvisionFailed { .. }));
                        prop_assert!(is_provision_failure);
                    } else {
                        prop_assert!(r.is_ok(), "{:?} from {:?}: {:?}", op, before, r);
                    }
                    expected = next;
                }
                None => {
                    let is_state_error = matches!(r, Err(EnclaveError::StateError { .. }));
                    prop_assert!(is_state_error);
                    prop_assert_eq!(e.state(), before);
                }
            }
            prop_assert_eq!(e.state(), expected);
            prop_assert!(!(e.upstream_open() && e.gateway_open()));
            prop_assert!(e.check_invariants().is_ok());
        }
        // Transition log replays to the current state.
        let log = e.transitions();
        prop_assert_eq!(log.last().unwrap().to, e.state());
        for w in log.windows(2) {
            prop_assert_eq!(w[1].from, Some(w[0].to));
        }
    }

    #[test]
    fn contract_liveness_is_a_half_open_interval(ttl in 1u64..1000, start in -1000i64..1000, probe in -3000i64..3000) {
        let c = contract(ttl).activate(start).unwrap();
        let live = probe >= start && probe < start + ttl as i64;
        prop_assert_eq!(c.is_live(probe), live);
        prop_assert_eq!(c.expires_at(), Some(start + ttl as i64));
        match c.expire(probe) {
            Ok(x) => {
                prop_assert!(!live);
                prop_assert_eq!(x.status, ContractStatus::Expired);
                prop_assert!(!x.is_live(probe));
            }
            Err(_) => prop_assert!(live),
        }
    }

    #[test]
    fn contract_terminal_states_absorb(ops in prop::collection::vec(0u8..4, 0..10), ttl in 1u64..100) {
        let mut c = contract(ttl);
        let mut now = 0i64;
        for op in ops {
            let before = c.status;
            let next = match op {
                0 => c.activate(now),
                1 => c.revoke("r"),
                2 => c.expire(now),
                _ => {
                    now += 37;
                    continue;
                }
            };
            match next {
                Ok(n) => {
                    let legal = matches!(
                        (before, n.status),
                        (ContractStatus::Draft, ContractStatus::Active)
                            | (ContractStatus::Active, ContractStatus::Revoked)
                            | (ContractStatus::Active, ContractStatus::Expired)
                    );
                    prop_assert!(legal);
                    c = n;
                }
                Err(_) => prop_assert_eq!(c.status, before),
            }
            if c.status.is_terminal() {
                prop_assert!(!c.is_live(now));
            }
        }
    }
}

#[test]
fn segments_are_snapshots() {
    let mut s = store();
    let c = contract(60).activate(0).unwrap();
    let mut e = Enclave::create("e", &c, 0).unwrap();
    e.provision(&s, 0).unwrap();
    e.seal(0).unwrap();
    let digest = e.seal_digest().unwrap().to_string();
    let name = QualifiedName::new("w", "t");
    s.update_cell(&name, 0, 0, Value::Int(99)).unwrap();
    s.insert_rows(&name, vec![vec![Value::Int(-1), Value::Text("new".into())]])
        .unwrap();
    e.open_gate(1).unwrap();
    assert_eq!(e.segments_digest(), digest);
    let ids: Vec<_> = e.segment(0).unwrap().rows.iter().map(|r| r[0].clone()).collect();
    assert_eq!(ids, [Value::Int(0), Value::Int(1), Value::Int(2)]);
}
