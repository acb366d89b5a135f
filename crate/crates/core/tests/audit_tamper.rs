mod common;

use common::ref_first_bad;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use dataenclave_core::audit::{
    head_path_for, read_head, verify_bytes, verify_chain, AuditEvent, EventKind, Ledger,
    VerifyOutcome,
};

fn ledger(dir: &std::path::Path, n: usize) -> (std::path::PathBuf, Vec<u8>) {
    let path = dir.join("audit.jsonl");
    let mut l = Ledger::open(&path).unwrap();
    let kinds = [
        EventKind::QueryExecuted,
        EventKind::QueryDenied,
        EventKind::SessionOpened,
        EventKind::AlertRaised,
    ];
    for i in 0..n {
        l.append(
            i as i64 * 3,
            if i % 2 == 0 { "svc" } else { "op\u{e9}" },
            kinds[i % kinds.len()],
            json!({"statement": format!("SELECT * FROM t{i}"), "rows": i, "note": "q\"\n\\"}),
        )
        .unwrap();
    }
    let raw = std::fs::read(&path).unwrap();
    (path, raw)
}

fn outcome(n: Option<u64>) -> VerifyOutcome {
    n.map_or(VerifyOutcome::Ok, VerifyOutcome::FirstBadSeq)
}

fn line_of(raw: &[u8], offset: usize) -> u64 {
    raw[..offset].iter().filter(|&&b| b == b'\n').count() as u64
}

#[test]
fn untampered_file_verifies() {
    let dir = tempfile::tempdir().unwrap();
    let (path, raw) = ledger(dir.path(), 50);
    let head = read_head(&path).unwrap();
    assert_eq!(head.len, 50);
    assert_eq!(verify_bytes(&raw, Some(&head)), VerifyOutcome::Ok);
    assert_eq!(ref_first_bad(&raw, Some(50)), None);
    let reopened = Ledger::open(&path).unwrap();
    assert_eq!(reopened.verify(), VerifyOutcome::Ok);
    assert_eq!(reopened.len(), 50);
}

#[test]
fn byte_flips_are_located() {
    let dir = tempfile::tempdir().unwrap();
    let (path, raw) = ledger(dir.path(), 50);
    let head = read_head(&path).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..200 {
        let mut bad = raw.clone();
        let at = rng.gen_range(0..bad.len());
        let old = bad[at];
        while bad[at] == old {
            bad[at] = rng.gen();
        }
        let expected = ref_first_bad(&bad, Some(head.len));
        assert_eq!(expected, Some(line_of(&raw, at)), "offset {at}");
        assert_eq!(verify_bytes(&bad, Some(&head)), outcome(expected), "offset {at}");
    }
}

#[test]
fn deletions_and_reorderings_are_located() {
    let dir = tempfile::tempdir().unwrap();
    let (path, raw) = ledger(dir.path(), 50);
    let head = read_head(&path).unwrap();
    let lines: Vec<&[u8]> = raw.split_inclusive(|&b| b == b'\n').collect();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for k in 0..lines.len() {
        let mut kept = lines.clone();
        kept.remove(k);
        let bad = kept.concat();
        assert_eq!(ref_first_bad(&bad, Some(50)), Some(k as u64));
        assert_eq!(verify_bytes(&bad, Some(&head)), VerifyOutcome::FirstBadSeq(k as u64));
    }
    for _ in 0..40 {
        let i = rng.gen_range(0..lines.len() - 1);
        let j = rng.gen_range(i + 1..lines.len());
        let mut shuffled = lines.clone();
        shuffled.swap(i, j);
        let bad = shuffled.concat();
        assert_eq!(ref_first_bad(&bad, Some(50)), Some(i as u64));
        assert_eq!(verify_bytes(&bad, Some(&head)), VerifyOutcome::FirstBadSeq(i as u64));
    }
}

#[test]
fn in_memory_chain_detects_edits() {
    let mut l = Ledger::in_memory();
    for i in 0..10 {
        l.append(i, "a", EventKind::QueryExecuted, json!({"i": i})).unwrap();
    }
    let mut events: Vec<AuditEvent> = l.events().to_vec();
    events[4].payload = json!({"i": 99});
    assert_eq!(verify_chain(&events, None), VerifyOutcome::FirstBadSeq(4));
    let mut events = l.events().to_vec();
    events[7].hash = events[7].compute_hash();
    events[7].actor = "b".into();
    assert_eq!(verify_chain(&events, None), VerifyOutcome::FirstBadSeq(7));
}

#[test]
fn corrupt_ledger_refuses_to_open() {
    let dir = tempfile::tempdir().unwrap();
    let (path, raw) = ledger(dir.path(), 5);
    let mut bad = raw.clone();
    let at = raw.len() / 2;
    bad[at] ^= 0x20;
    std::fs::write(&path, &bad).unwrap();
    assert_eq!(Ledger::open(&path).unwrap_err().code(), "LedgerCorrupt");
    std::fs::write(&path, &raw).unwrap();
    std::fs::remove_file(head_path_for(&path)).unwrap();
    assert!(Ledger::open(&path).is_ok());
}
