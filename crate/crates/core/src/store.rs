//! Source-of-truth tables and contract-scoped segment extraction.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::canonical;
use crate::contract::{Columns, Grant, Predicate, QualifiedName, Timestamp};
use crate::value::{ColumnType, Value};

pub type Row = Vec<Value>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnDef {
    pub name: String,
    pub ty: ColumnType,
}

impl ColumnDef {
    pub fn new(name: impl Into<String>, ty: ColumnType) -> Self {
        ColumnDef {
            name: name.into(),
            ty,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Schema {
    pub columns: Vec<ColumnDef>,
}

impl Schema {
    pub fn new(columns: Vec<ColumnDef>) -> Self {
        Schema { columns }
    }

    pub fn column(&self, name: &str) -> Option<(usize, &ColumnDef)> {
        self.columns.iter().enumerate().find(|(_, c)| c.name == name)
    }

    pub fn arity(&self) -> usize {
        self.columns.len()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SchemaCatalog {
    tables: BTreeMap<QualifiedName, Schema>,
}

impl SchemaCatalog {
    pub fn schema(&self, name: &QualifiedName) -> Option<&Schema> {
        self.tables.get(name)
    }

    pub fn tables(&self) -> impl Iterator<Item = (&QualifiedName, &Schema)> {
        self.tables.iter()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum StoreError {
    #[error("table `{0}` is already registered")]
    DuplicateTable(QualifiedName),
    #[error("{0}")]
    TypeMismatch(String),
    #[error("no table `{0}`")]
    UnknownSource(QualifiedName),
    #[error("table `{table}` has no column `{column}`")]
    UnknownColumn { table: QualifiedName, column: String },
    #[error("cannot load `{path}`: {message}")]
    Load { path: String, message: String },
}

impl StoreError {
    pub fn code(&self) -> &'static str {
        match self {
            StoreError::DuplicateTable(_) => "DuplicateTable",
            StoreError::TypeMismatch(_) => "TypeMismatch",
            StoreError::UnknownSource(_) => "UnknownSource",
            StoreError::UnknownColumn { .. } => "UnknownColumn",
            StoreError::Load { .. } => "LoadFailure",
        }
    }
}

/// Materialized projection+filter of one source table under one grant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub origin: QualifiedName,
    pub columns: Vec<ColumnDef>,
    pub rows: Vec<Row>,
    pub extracted_at: Timestamp,
}

impl Segment {
    pub fn schema(&self) -> Schema {
        Schema::new(self.columns.clone())
    }

    /// SHA-256 of the canonical JSON form, hex encoded.
    pub fn digest(&self) -> String {
        let value = serde_json::to_value(self).expect("segment serializes");
        hex::encode(Sha256::digest(canonical::to_string(&value).as_bytes()))
    }
}

/// In-memory table store. Every row read is counted so callers can prove
/// that serving enclaves never touch it.
#[derive(Debug, Default)]
pub struct TableStore {
    catalog: SchemaCatalog,
    rows: BTreeMap<QualifiedName, Vec<Row>>,
    reads: AtomicU64,
}

fn check_row(schema: &Schema, row: &Row, index: usize) -> Result<(), StoreError> {
    if row.len() != schema.arity() {
        return Err(StoreError::TypeMismatch(format!(
            "row {index} has {} cells, schema has {}",
            row.len(),
            schema.arity()
        )));
    }
    for (cell, col) in row.iter().zip(&schema.columns) {
        let ok = match cell {
            Value::Real(v) => col.ty == ColumnType::Real && v.is_finite(),
            other => other.column_type() == col.ty,
        };
        if !ok {
            return Err(StoreError::TypeMismatch(format!(
                "row {index}: column `{}` is {} but cell is {}",
                col.name,
                col.ty,
                cell.column_type()
            )));
        }
    }
    Ok(())
}

impl TableStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register_table(
        &mut self,
        name: QualifiedName,
        schema: Schema,
        rows: Vec<Row>,
    ) -> Result<(), StoreError> {
        if self.catalog.tables.contains_key(&name) {
            return Err(StoreError::DuplicateTable(name));
        }
        let mut seen = std::collections::HashSet::new();
        for c in &schema.columns {
            if !seen.insert(c.name.as_str()) {
                return Err(StoreError::TypeMismatch(format!(
                    "duplicate column `{}` in schema of `{name}`",
                    c.name
                )));
            }
        }
        for (i, row) in rows.iter().enumerate() {
            check_row(&schema, row, i)?;
        }
        self.catalog.tables.insert(name.clone(), schema);
        self.rows.insert(name, rows);
        Ok(())
    }

    /// Appends rows to a registered table.
    pub fn insert_rows(&mut self, name: &QualifiedName, rows: Vec<Row>) -> Result<(), StoreError> {
        let schema = self
            .catalog
            .schema(name)
            .ok_or_else(|| StoreError::UnknownSource(name.clone()))?;
        let existing = self.rows.get(name).map_or(0, Vec::len);
        for (i, row) in rows.iter().enumerate() {
            check_row(schema, row, existing + i)?;
        }
        self.rows.entry(name.clone()).or_default().extend(rows);
        Ok(())
    }

    /// Replaces one cell. Used to model upstream mutation.
    pub fn update_cell(
        &mut self,
        name: &QualifiedName,
        row: usize,
        column: usize,
        value: Value,
    ) -> Result<(), StoreError> {
        let schema = self
            .catalog
            .schema(name)
            .ok_or_else(|| StoreError::UnknownSource(name.clone()))?
            .clone();
        let rows = self.rows.get_mut(name).expect("rows for registered table");
        let mut updated = rows
            .get(row)
            .cloned()
            .ok_or_else(|| StoreError::TypeMismatch(format!("no row {row}")))?;
        if column >= updated.len() {
            return Err(StoreError::TypeMismatch(format!("no column {column}")));
        }
        updated[column] = value;
        check_row(&schema, &updated, row)?;
        rows[row] = updated;
        Ok(())
    }

    pub fn catalog(&self) -> SchemaCatalog {
        self.catalog.clone()
    }

    pub fn row_count(&self, name: &QualifiedName) -> Option<usize> {
        self.rows.get(name).map(Vec::len)
    }

    /// Number of row reads served so far.
    pub fn reads(&self) -> u64 {
        self.reads.load(Ordering::SeqCst)
    }

    /// Filter-then-project copy of the table under `grant`.
    pub fn extract_segment(
        &self,
        name: &QualifiedName,
        grant: &Grant,
        now: Timestamp,
    ) -> Result<Segment, StoreError> {
        let schema = self
            .catalog
            .schema(name)
            .ok_or_else(|| StoreError::UnknownSource(name.clone()))?;
        let rows = &self.rows[name];

        let unknown = |column: &str| StoreError::UnknownColumn {
            table: name.clone(),
            column: column.to_string(),
        };
        let indices: Vec<usize> = match &grant.columns {
            Columns::All => (0..schema.arity()).collect(),
            Columns::Named(cols) => cols
                .iter()
                .map(|c| schema.column(c).map(|(i, _)| i).ok_or_else(|| unknown(c)))
                .collect::<Result<_, _>>()?,
        };
        if let Some(p) = &grant.row_predicate {
            if let Some(c) = p.columns().find(|c| schema.column(c).is_none()) {
                return Err(unknown(c));
            }
        }

        self.reads.fetch_add(rows.len() as u64, Ordering::SeqCst);
        let selected = rows
            .iter()
            .filter(|row| {
                grant
                    .row_predicate
                    .as_ref()
                    .is_none_or(|p| eval_predicate(row, schema, p))
            })
            .map(|row| indices.iter().map(|&i| row[i].clone()).collect())
            .collect();

        Ok(Segment {
            origin: name.clone(),
            columns: indices.iter().map(|&i| schema.columns[i].clone()).collect(),
            rows: selected,
            extracted_at: now,
        })
    }

    /// Loads a CSV table: header row of column names, second row of column
    /// types, then data rows.
    pub fn load_csv(&mut self, name: QualifiedName, path: &Path) -> Result<(), StoreError> {
        let load_err = |message: String| StoreError::Load {
            path: path.display().to_string(),
            message,
        };
        let file = std::fs::File::open(path).map_err(|e| load_err(e.to_string()))?;
        let (schema, rows) = read_csv(file).map_err(load_err)?;
        self.register_table(name, schema, rows)
    }
}

/// Parses the two-row-header CSV format.
pub fn read_csv<R: std::io::Read>(input: R) -> Result<(Schema, Vec<Row>), String> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .from_reader(input);
    let mut records = reader.records();
    let names = records
        .next()
        .ok_or("missing column-name header")?
        .map_err(|e| e.to_string())?;
    let types = records
        .next()
        .ok_or("missing column-type header")?
        .map_err(|e| e.to_string())?;
    if names.len() != types.len() {
        return Err("header rows differ in length".into());
    }
    let columns = names
        .iter()
        .zip(types.iter())
        .map(|(n, t)| Ok(ColumnDef::new(n.trim(), t.parse::<ColumnType>()?)))
        .collect::<Result<Vec<_>, String>>()?;
    let schema = Schema::new(columns);

    let mut rows = Vec::new();
    for (i, record) in records.enumerate() {
        let record = record.map_err(|e| e.to_string())?;
        if record.len() != schema.arity() {
            return Err(format!(
                "data row {} has {} cells, expected {}",
                i + 1,
                record.len(),
                schema.arity()
            ));
        }
        let row = record
            .iter()
            .zip(&schema.columns)
            .map(|(raw, col)| Value::parse_cell(raw, col.ty))
            .collect::<Result<Row, _>>()
            .map_err(|e| format!("data row {}: {e}", i + 1))?;
        rows.push(row);
    }
    Ok((schema, rows))
}

/// True iff every conjunct holds for `row`. Columns missing from the schema
/// or incomparable literals make the conjunct false.
pub fn eval_predicate(row: &[Value], schema: &Schema, p: &Predicate) -> bool {
    p.conjuncts.iter().all(|cmp| {
        schema
            .column(&cmp.column)
            .and_then(|(i, _)| row.get(i))
            .and_then(|cell| cell.compare(&cmp.value))
            .is_some_and(|ord| cmp.op.holds(ord))
    })
}
