//! Seeded generators and independent reference evaluators shared by the
//! integration and acceptance suites.
#![allow(dead_code)]

use std::cmp::Ordering;

use rand::seq::SliceRandom;
use rand::Rng;
use sha2::{Digest, Sha256};

use dataenclave_core::contract::{
    Columns, Comparison, ContractStatus, DataContract, Grant, Origin, Predicate, QualifiedName,
};
use dataenclave_core::gateway::{Projection, QueryAst, Select};
use dataenclave_core::lexer::CmpOp;
use dataenclave_core::store::{ColumnDef, Row, Schema};
use dataenclave_core::value::{ColumnType, Date, Value};

pub const OPS: [CmpOp; 6] = [
    CmpOp::Eq,
    CmpOp::Ne,
    CmpOp::Lt,
    CmpOp::Le,
    CmpOp::Gt,
    CmpOp::Ge,
];
pub const TYPES: [ColumnType; 4] = [
    ColumnType::Int,
    ColumnType::Text,
    ColumnType::Date,
    ColumnType::Real,
];
const WORDS: [&str; 8] = ["acme", "globex", "initech", "umbrella", "hooli", "stark", "wayne", "wonka"];

/// Identifier that is never a keyword of either language.
pub fn ident<R: Rng>(rng: &mut R) -> String {
    let len = rng.gen_range(0..6);
    let tail: String = (0..len)
        .map(|_| *b"abcdefghijklmnopqrstuvwxyz0123456789_".choose(rng).unwrap() as char)
        .collect();
    format!("c_{tail}")
}

/// Any string, including quotes, escapes and non-ASCII.
pub fn any_text<R: Rng>(rng: &mut R) -> String {
    const ALPHABET: &[char] = &[
        'a', 'b', 'z', 'A', 'Q', '0', '9', ' ', '_', '-', '.', '#', '"', '\\', '\n', '\t', '\r',
        '{', '}', '[', ']', ',', '*', 'é', 'ß', '日', '🙂',
    ];
    let len = rng.gen_range(0..12);
    (0..len).map(|_| *ALPHABET.choose(rng).unwrap()).collect()
}

/// Value drawn from a small domain so predicates are selective but not empty.
pub fn small_value<R: Rng>(rng: &mut R, ty: ColumnType) -> Value {
    match ty {
        ColumnType::Int => Value::Int(rng.gen_range(-50..=50)),
        ColumnType::Text => Value::Text(WORDS.choose(rng).unwrap().to_string()),
        ColumnType::Date => {
            Value::Date(Date(Date::from_ymd(2025, 1, 1).unwrap().days() + rng.gen_range(0..60)))
        }
        ColumnType::Real => Value::Real(f64::from(rng.gen_range(-80..=80)) / 4.0),
    }
}

/// Value drawn from the whole domain of its type.
pub fn wide_value<R: Rng>(rng: &mut R, ty: ColumnType) -> Value {
    match ty {
        ColumnType::Int => match rng.gen_range(0..4) {
            0 => Value::Int(i64::MIN),
            1 => Value::Int(i64::MAX),
            _ => Value::Int(rng.gen()),
        },
        ColumnType::Text => Value::Text(any_text(rng)),
        ColumnType::Date => {
            let lo = Date::from_ymd(1000, 1, 1).unwrap().days();
            let hi = Date::from_ymd(9999, 12, 31).unwrap().days();
            Value::Date(Date(rng.gen_range(lo..=hi)))
        }
        ColumnType::Real => loop {
            let v = match rng.gen_range(0..3) {
                0 => f64::from(rng.gen_range(-1000..1000)) / 8.0,
                1 => rng.gen_range(-1e6..1e6),
                _ => f64::from_bits(rng.gen()),
            };
            if v.is_finite() {
                break Value::Real(v);
            }
        },
    }
}

/// Literal comparable with a column of `ty`; REAL columns sometimes get an
/// integer literal.
pub fn literal_for<R: Rng>(rng: &mut R, ty: ColumnType, wide: bool) -> Value {
    if ty == ColumnType::Real && rng.gen_bool(0.25) {
        return if wide {
            wide_value(rng, ColumnType::Int)
        } else {
            small_value(rng, ColumnType::Int)
        };
    }
    if wide {
        wide_value(rng, ty)
    } else {
        small_value(rng, ty)
    }
}

pub struct Table {
    pub name: QualifiedName,
    pub schema: Schema,
    pub rows: Vec<Row>,
}

pub fn table<R: Rng>(rng: &mut R, name: QualifiedName, max_rows: usize) -> Table {
    let arity = rng.gen_range(2..=6);
    let columns: Vec<ColumnDef> = (0..arity)
        .map(|i| ColumnDef::new(format!("col{i}"), *TYPES.choose(rng).unwrap()))
        .collect();
    let n = rng.gen_range(0..=max_rows);
    let rows = (0..n)
        .map(|_| columns.iter().map(|c| small_value(rng, c.ty)).collect())
        .collect();
    Table {
        name,
        schema: Schema::new(columns),
        rows,
    }
}

pub fn predicate_over<R: Rng>(rng: &mut R, cols: &[ColumnDef], max: usize) -> Option<Predicate> {
    let n = rng.gen_range(0..=max);
    if n == 0 || cols.is_empty() {
        return None;
    }
    let conjuncts = (0..n)
        .map(|_| {
            let c = cols.choose(rng).unwrap();
            Comparison {
                column: c.name.clone(),
                op: *OPS.choose(rng).unwrap(),
                value: literal_for(rng, c.ty, false),
            }
        })
        .collect();
    Some(Predicate { conjuncts })
}

pub fn draft(id: &str, principal: &str, ttl: u64, grants: Vec<Grant>) -> DataContract {
    DataContract {
        contract_id: id.to_string(),
        principal: principal.to_string(),
        purpose: "analysis".to_string(),
        grants,
        ttl,
        status: ContractStatus::Draft,
        activated_at: None,
        origin: Origin::Standard,
        approved_by: Vec::new(),
        revoke_reason: None,
    }
}

/// A valid grant over `t`.
pub fn grant_over<R: Rng>(rng: &mut R, t: &Table) -> Grant {
    let columns = if rng.gen_bool(0.2) {
        Columns::All
    } else {
        let mut cols: Vec<String> = t.schema.columns.iter().map(|c| c.name.clone()).collect();
        cols.shuffle(rng);
        cols.truncate(rng.gen_range(1..=cols.len()));
        Columns::Named(cols)
    };
    Grant {
        source: t.name.clone(),
        columns,
        row_predicate: predicate_over(rng, &t.schema.columns, 2),
        row_limit: rng.gen_bool(0.3).then(|| rng.gen_range(1..50)),
    }
}

/// A SELECT over the grant's table, mostly in scope. Occasionally references
/// columns outside the grant or uses mistyped literals.
pub fn select_for<R: Rng>(rng: &mut R, t: &Table, grant: &Grant) -> Select {
    let scope = grant_columns(&t.schema, grant);
    let pick_col = |rng: &mut R| -> ColumnDef {
        if rng.gen_bool(0.05) {
            t.schema.columns.choose(rng).unwrap().clone()
        } else {
            scope.choose(rng).unwrap().clone()
        }
    };
    let projection = if rng.gen_bool(0.25) {
        Projection::Star
    } else {
        let n = rng.gen_range(1..=scope.len());
        let mut cols: Vec<String> = Vec::new();
        for _ in 0..n {
            let c = pick_col(rng).name;
            if !cols.contains(&c) {
                cols.push(c);
            }
        }
        Projection::Columns(cols)
    };
    let n = rng.gen_range(0..=2);
    let predicate = (n > 0).then(|| Predicate {
        conjuncts: (0..n)
            .map(|_| {
                let c = pick_col(rng);
                let ty = if rng.gen_bool(0.03) {
                    *TYPES.choose(rng).unwrap()
                } else {
                    c.ty
                };
                Comparison {
                    column: c.name,
                    op: *OPS.choose(rng).unwrap(),
                    value: literal_for(rng, ty, false),
                }
            })
            .collect(),
    });
    Select {
        projection,
        table: t.name.table.clone(),
        predicate,
        limit: rng.gen_bool(0.3).then(|| rng.gen_range(1..80)),
    }
}

/// Any contract the grammar can express.
pub fn any_contract<R: Rng>(rng: &mut R) -> DataContract {
    let grants = (0..rng.gen_range(1..=3))
        .map(|_| {
            let columns = if rng.gen_bool(0.3) {
                Columns::All
            } else {
                Columns::Named((0..rng.gen_range(1..=4)).map(|_| ident(rng)).collect())
            };
            let cols: Vec<ColumnDef> = (0..3)
                .map(|_| ColumnDef::new(ident(rng), *TYPES.choose(rng).unwrap()))
                .collect();
            let row_predicate = (rng.gen_bool(0.6)).then(|| Predicate {
                conjuncts: (0..rng.gen_range(1..=3))
                    .map(|_| {
                        let c = cols.choose(rng).unwrap();
                        Comparison {
                            column: c.name.clone(),
                            op: *OPS.choose(rng).unwrap(),
                            value: literal_for(rng, c.ty, true),
                        }
                    })
                    .collect(),
            });
            Grant {
                source: QualifiedName::new(ident(rng), ident(rng)),
                columns,
                row_predicate,
                row_limit: rng.gen_bool(0.4).then(|| rng.gen_range(1..=i64::MAX as u64)),
            }
        })
        .collect();
    let mut c = draft(&any_text(rng), &any_text(rng), rng.gen_range(0..1_000_000_000), grants);
    c.purpose = any_text(rng);
    c
}

/// Any statement the query grammar can express.
pub fn any_query<R: Rng>(rng: &mut R) -> QueryAst {
    match rng.gen_range(0..10) {
        0 => QueryAst::ShowTables,
        1 => {
            const TARGET: &[u8] = b"abcXYZ019 '/:._-=(),*";
            let len = rng.gen_range(1..20);
            let raw: String = (0..len).map(|_| *TARGET.choose(rng).unwrap() as char).collect();
            let target = raw.trim().to_string();
            QueryAst::CopyInto {
                target: if target.is_empty() { "x".into() } else { target },
            }
        }
        _ => {
            let cols: Vec<ColumnDef> = (0..4)
                .map(|_| ColumnDef::new(ident(rng), *TYPES.choose(rng).unwrap()))
                .collect();
            let projection = if rng.gen_bool(0.3) {
                Projection::Star
            } else {
                Projection::Columns(
                    (0..rng.gen_range(1..=4))
                        .map(|_| cols.choose(rng).unwrap().name.clone())
                        .collect(),
                )
            };
            let predicate = rng.gen_bool(0.6).then(|| Predicate {
                conjuncts: (0..rng.gen_range(1..=3))
                    .map(|_| {
                        let c = cols.choose(rng).unwrap();
                        Comparison {
                            column: c.name.clone(),
                            op: *OPS.choose(rng).unwrap(),
                            value: literal_for(rng, c.ty, true),
                        }
                    })
                    .collect(),
            });
            QueryAst::Select(Select {
                projection,
                table: ident(rng),
                predicate,
                limit: rng.gen_bool(0.4).then(|| rng.gen_range(1..=i64::MAX as u64)),
            })
        }
    }
}

// ----- reference evaluation ---------------------------------------------

/// Independent comparison, written without the library's ordering helpers.
pub fn ref_compare(a: &Value, b: &Value) -> Option<Ordering> {
    match (a, b) {
        (Value::Int(x), Value::Int(y)) => Some(x.cmp(y)),
        (Value::Real(x), Value::Real(y)) => x.partial_cmp(y),
        (Value::Int(x), Value::Real(y)) => (*x as f64).partial_cmp(y),
        (Value::Real(x), Value::Int(y)) => x.partial_cmp(&(*y as f64)),
        (Value::Text(x), Value::Text(y)) => Some(x.as_bytes().cmp(y.as_bytes())),
        (Value::Date(x), Value::Date(y)) => Some(x.0.cmp(&y.0)),
        _ => None,
    }
}

pub fn ref_holds(op: CmpOp, ord: Ordering) -> bool {
    match op {
        CmpOp::Eq => ord == Ordering::Equal,
        CmpOp::Ne => ord != Ordering::Equal,
        CmpOp::Lt => ord == Ordering::Less,
        CmpOp::Le => ord != Ordering::Greater,
        CmpOp::Gt => ord == Ordering::Greater,
        CmpOp::Ge => ord != Ordering::Less,
    }
}

pub fn ref_row_matches(row: &[Value], names: &[String], p: &Option<Predicate>) -> bool {
    let Some(p) = p else { return true };
    p.conjuncts.iter().all(|c| {
        let i = names.iter().position(|n| *n == c.column).expect("column exists");
        ref_compare(&row[i], &c.value).is_some_and(|o| ref_holds(c.op, o))
    })
}

pub fn grant_columns(schema: &Schema, grant: &Grant) -> Vec<ColumnDef> {
    match &grant.columns {
        Columns::All => schema.columns.clone(),
        Columns::Named(cols) => cols
            .iter()
            .map(|c| schema.columns.iter().find(|d| d.name == *c).unwrap().clone())
            .collect(),
    }
}

/// Snapshot a grant admits: rows passing the row predicate, grant columns only.
pub fn ref_snapshot(t: &Table, grant: &Grant) -> (Vec<ColumnDef>, Vec<Row>) {
    let names: Vec<String> = t.schema.columns.iter().map(|c| c.name.clone()).collect();
    let cols = grant_columns(&t.schema, grant);
    let idx: Vec<usize> = cols
        .iter()
        .map(|c| names.iter().position(|n| *n == c.name).unwrap())
        .collect();
    let rows = t
        .rows
        .iter()
        .filter(|r| ref_row_matches(r, &names, &grant.row_predicate))
        .map(|r| idx.iter().map(|&i| r[i].clone()).collect())
        .collect();
    (cols, rows)
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expected {
    Rows {
        columns: Vec<String>,
        rows: Vec<Row>,
        truncated: bool,
    },
    OutOfScope,
    TypeMismatch,
}

fn type_ok(v: &Value, ty: ColumnType) -> bool {
    matches!(
        (v, ty),
        (Value::Int(_), ColumnType::Int | ColumnType::Real)
            | (Value::Real(_), ColumnType::Real)
            | (Value::Text(_), ColumnType::Text)
            | (Value::Date(_), ColumnType::Date)
    )
}

/// Project to the grant's scope, filter by the query predicate, cap by
/// min(query limit, grant row_limit), then project the query's columns.
pub fn ref_query(snapshot: &(Vec<ColumnDef>, Vec<Row>), grant: &Grant, q: &Select) -> Expected {
    let (cols, rows) = snapshot;
    let names: Vec<String> = cols.iter().map(|c| c.name.clone()).collect();
    let referenced: Vec<&String> = match &q.projection {
        Projection::Star => Vec::new(),
        Projection::Columns(c) => c.iter().collect(),
    }
    .into_iter()
    .chain(q.predicate.iter().flat_map(|p| p.conjuncts.iter().map(|c| &c.column)))
    .collect();
    if referenced.iter().any(|r| !names.contains(r)) {
        return Expected::OutOfScope;
    }
    if let Some(p) = &q.predicate {
        for c in &p.conjuncts {
            let ty = cols.iter().find(|d| d.name == c.column).unwrap().ty;
            if !type_ok(&c.value, ty) {
                return Expected::TypeMismatch;
            }
        }
    }
    let out: Vec<String> = match &q.projection {
        Projection::Star => names.clone(),
        Projection::Columns(c) => c.clone(),
    };
    let idx: Vec<usize> = out
        .iter()
        .map(|o| names.iter().position(|n| n == o).unwrap())
        .collect();
    let matching: Vec<&Row> = rows
        .iter()
        .filter(|r| ref_row_matches(r, &names, &q.predicate))
        .collect();
    let cap = [q.limit, grant.row_limit]
        .into_iter()
        .flatten()
        .min()
        .map_or(usize::MAX, |c| c as usize);
    Expected::Rows {
        columns: out,
        truncated: matching.len() > cap,
        rows: matching
            .into_iter()
            .take(cap)
            .map(|r| idx.iter().map(|&i| r[i].clone()).collect())
            .collect(),
    }
}

/// Independent ledger check: every line must be the sorted-key compact JSON
/// of itself, carry its position as `seq`, link to the previous hash, and hash
/// to SHA-256 of the line without its `hash` field. `anchored_len` is the
/// length recorded in the head file. Returns the first bad position.
pub fn ref_first_bad(raw: &[u8], anchored_len: Option<u64>) -> Option<u64> {
    let mut prev = "0".repeat(64);
    let mut lines: Vec<&[u8]> = raw.split(|&b| b == b'\n').collect();
    let terminated = lines.last() == Some(&&b""[..]);
    if terminated {
        lines.pop();
    }
    for (i, line) in lines.iter().enumerate() {
        let i = i as u64;
        let ok = (|| {
            let text = std::str::from_utf8(line).ok()?;
            let v: serde_json::Value = serde_json::from_str(text).ok()?;
            (serde_json::to_string(&v).ok()? == text).then_some(())?;
            let mut body = v.as_object()?.clone();
            let hash = body.remove("hash")?.as_str()?.to_string();
            (body.get("seq")?.as_u64()? == i).then_some(())?;
            (body.get("prev_hash")?.as_str()? == prev).then_some(())?;
            let pre = serde_json::to_string(&serde_json::Value::Object(body)).ok()?;
            (hex::encode(Sha256::digest(pre.as_bytes())) == hash).then_some(hash)
        })();
        match ok {
            Some(h) => prev = h,
            None => return Some(i),
        }
    }
    let n = lines.len() as u64;
    if !terminated && n > 0 {
        return Some(n - 1);
    }
    match anchored_len {
        Some(len) if len > n => Some(n),
        Some(len) if len < n => Some(len),
        _ => None,
    }
}
