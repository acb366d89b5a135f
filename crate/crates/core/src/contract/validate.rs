use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use super::{Columns, DataContract};
use crate::store::SchemaCatalog;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ProblemCode {
    UnknownSource,
    UnknownColumn,
    TypeMismatch,
    EmptyGrant,
    DuplicateColumn,
    NonPositiveTtl,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Problem {
    pub code: ProblemCode,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub ok: bool,
    pub problems: Vec<Problem>,
}

impl ValidationReport {
    fn from_problems(problems: Vec<Problem>) -> Self {
        ValidationReport {
            ok: problems.is_empty(),
            problems,
        }
    }

    pub fn codes(&self) -> Vec<ProblemCode> {
        self.problems.iter().map(|p| p.code).collect()
    }
}

/// Checks a contract against the catalog. Problems are collected, not raised.
pub fn validate_contract(c: &DataContract, catalog: &SchemaCatalog) -> ValidationReport {
    let mut problems = Vec::new();
    let mut push = |code, message: String| problems.push(Problem { code, message });

    if c.ttl == 0 {
        push(ProblemCode::NonPositiveTtl, "ttl must be positive".into());
    }
    if c.grants.is_empty() {
        push(ProblemCode::EmptyGrant, "contract has no grants".into());
    }

    for (i, g) in c.grants.iter().enumerate() {
        if let Columns::Named(cols) = &g.columns {
            if cols.is_empty() {
                push(ProblemCode::EmptyGrant, format!("grant {i} names no columns"));
            }
            let mut seen = HashSet::new();
            for col in cols {
                if !seen.insert(col.as_str()) {
                    push(
                        ProblemCode::DuplicateColumn,
                        format!("grant {i} lists column `{col}` twice"),
                    );
                }
            }
        }

        let Some(schema) = catalog.schema(&g.source) else {
            push(
                ProblemCode::UnknownSource,
                format!("grant {i}: no table `{}`", g.source),
            );
            continue;
        };

        if let Columns::Named(cols) = &g.columns {
            for col in cols {
                if schema.column(col).is_none() {
                    push(
                        ProblemCode::UnknownColumn,
                        format!("grant {i}: `{}` has no column `{col}`", g.source),
                    );
                }
            }
        }

        for cmp in g.row_predicate.iter().flat_map(|p| &p.conjuncts) {
            match schema.column(&cmp.column) {
                None => push(
                    ProblemCode::UnknownColumn,
                    format!(
                        "grant {i}: predicate column `{}` not in `{}`",
                        cmp.column, g.source
                    ),
                ),
                Some((_, def)) if !cmp.value.matches(def.ty) => push(
                    ProblemCode::TypeMismatch,
                    format!(
                        "grant {i}: `{}` is {} but literal {} is {}",
                        cmp.column,
                        def.ty,
                        cmp.value.literal(),
                        cmp.value.column_type()
                    ),
                ),
                Some(_) => {}
            }
        }
    }

    ValidationReport::from_problems(problems)
}
