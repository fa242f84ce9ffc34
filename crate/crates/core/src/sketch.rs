//! SQL sketches, table schemas, and the canonical SQL rendering.
//!
//! A sketch is the slot-filled query `SELECT $AGG($COLUMN) WHERE $COLUMN $OP
//! $VALUE (AND ...)*` over a single table. Conditions form a multiset: their
//! order never matters for logical-form comparison.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::text::normalize_value;

/// Default bound on the number of WHERE conditions.
pub const DEFAULT_MAX_CONDS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum AggOp {
    None,
    Max,
    Min,
    Count,
    Sum,
    Avg,
}

impl AggOp {
    pub const ALL: [AggOp; 6] = [
        AggOp::None,
        AggOp::Max,
        AggOp::Min,
        AggOp::Count,
        AggOp::Sum,
        AggOp::Avg,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    /// SQL function name; empty for `None`.
    pub fn sql_name(self) -> &'static str {
        match self {
            AggOp::None => "",
            AggOp::Max => "MAX",
            AggOp::Min => "MIN",
            AggOp::Count => "COUNT",
            AggOp::Sum => "SUM",
            AggOp::Avg => "AVG",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum CondOp {
    Eq,
    Gt,
    Lt,
}

impl CondOp {
    pub const ALL: [CondOp; 3] = [CondOp::Eq, CondOp::Gt, CondOp::Lt];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn symbol(self) -> &'static str {
        match self {
            CondOp::Eq => "=",
            CondOp::Gt => ">",
            CondOp::Lt => "<",
        }
    }

    pub fn from_symbol(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|op| op.symbol() == s)
    }
}

impl fmt::Display for CondOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.symbol())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Condition {
    pub column: usize,
    pub op: CondOp,
    pub value: String,
}

impl Condition {
    pub fn new(column: usize, op: CondOp, value: impl Into<String>) -> Self {
        Condition {
            column,
            op,
            value: value.into(),
        }
    }

    fn normalized_key(&self) -> (usize, CondOp, String) {
        (self.column, self.op, normalize_value(&self.value))
    }
}

/// Structured query; serialized in the line-delimited corpus convention
/// `{"sel": 3, "agg": 0, "conds": [[col, op, value], ...]}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(into = "WireSketch", try_from = "WireSketch")]
pub struct SqlSketch {
    pub select: usize,
    pub agg: AggOp,
    pub conds: Vec<Condition>,
}

impl SqlSketch {
    pub fn new(select: usize, agg: AggOp, conds: Vec<Condition>) -> Self {
        SqlSketch { select, agg, conds }
    }

    /// Conditions as normalized keys, sorted; the multiset identity used by
    /// [`lf_equal`].
    pub fn normalized_conds(&self) -> Vec<(usize, CondOp, String)> {
        let mut keys: Vec<_> = self.conds.iter().map(Condition::normalized_key).collect();
        keys.sort();
        keys
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WireSketch {
    pub sel: usize,
    pub agg: usize,
    #[serde(default)]
    pub conds: Vec<(usize, usize, serde_json::Value)>,
}

impl From<SqlSketch> for WireSketch {
    fn from(s: SqlSketch) -> Self {
        WireSketch {
            sel: s.select,
            agg: s.agg.index(),
            conds: s
                .conds
                .into_iter()
                .map(|c| (c.column, c.op.index(), serde_json::Value::String(c.value)))
                .collect(),
        }
    }
}

impl TryFrom<WireSketch> for SqlSketch {
    type Error = String;

    fn try_from(w: WireSketch) -> std::result::Result<Self, Self::Error> {
        let agg = AggOp::from_index(w.agg)
            .ok_or_else(|| format!("agg index {} out of range", w.agg))?;
        let conds = w
            .conds
            .into_iter()
            .map(|(col, op, value)| {
                let op = CondOp::from_index(op)
                    .ok_or_else(|| format!("op index {op} out of range"))?;
                let value = match value {
                    serde_json::Value::String(s) => s,
                    serde_json::Value::Number(n) => n.to_string(),
                    other => return Err(format!("condition value must be text or number, got {other}")),
                };
                Ok(Condition::new(col, op, value))
            })
            .collect::<std::result::Result<Vec<_>, String>>()?;
        Ok(SqlSketch::new(w.sel, agg, conds))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColumnType {
    Text,
    Real,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TableSchema {
    pub table_id: String,
    pub headers: Vec<String>,
    pub types: Vec<ColumnType>,
}

impl TableSchema {
    pub fn new(
        table_id: impl Into<String>,
        headers: Vec<String>,
        types: Vec<ColumnType>,
    ) -> Result<Self> {
        let table_id = table_id.into();
        if headers.is_empty() {
            return Err(Error::InvalidTable(format!("{table_id}: no columns")));
        }
        if headers.len() != types.len() {
            return Err(Error::InvalidTable(format!(
                "{table_id}: {} headers but {} types",
                headers.len(),
                types.len()
            )));
        }
        if let Some(i) = headers.iter().position(|h| h.trim().is_empty()) {
            return Err(Error::InvalidTable(format!("{table_id}: header {i} is empty")));
        }
        Ok(TableSchema {
            table_id,
            headers,
            types,
        })
    }

    /// All-text schema; convenient for tests and ad-hoc rendering.
    pub fn text(table_id: impl Into<String>, headers: &[&str]) -> Result<Self> {
        Self::new(
            table_id,
            headers.iter().map(|h| h.to_string()).collect(),
            vec![ColumnType::Text; headers.len()],
        )
    }

    pub fn n_columns(&self) -> usize {
        self.headers.len()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Table {
    pub schema: TableSchema,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(schema: TableSchema, rows: Vec<Vec<String>>) -> Result<Self> {
        let n = schema.n_columns();
        if let Some((i, row)) = rows.iter().enumerate().find(|(_, r)| r.len() != n) {
            return Err(Error::InvalidTable(format!(
                "{}: row {i} has {} cells, expected {n}",
                schema.table_id,
                row.len()
            )));
        }
        Ok(Table { schema, rows })
    }

    pub fn id(&self) -> &str {
        &self.schema.table_id
    }

    pub fn column(&self, c: usize) -> impl Iterator<Item = &str> + '_ {
        self.rows.iter().map(move |r| r[c].as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    #[default]
    Original,
    Synthesized,
    SymbolSubstituted,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Example {
    pub question: String,
    pub table_id: String,
    pub gold: SqlSketch,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Violation {
    ColumnOutOfRange { slot: String, index: usize, n_columns: usize },
    TooManyConditions { count: usize, max: usize },
    EmptyValue { cond: usize },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::ColumnOutOfRange {
                slot,
                index,
                n_columns,
            } => write!(f, "column-out-of-range: {slot} = {index} (schema has {n_columns})"),
            Violation::TooManyConditions { count, max } => {
                write!(f, "too-many-conditions: {count} > {max}")
            }
            Violation::EmptyValue { cond } => write!(f, "empty-value: condition {cond}"),
        }
    }
}

pub fn validate_sketch(sketch: &SqlSketch, schema: &TableSchema, max_conds: usize) -> Vec<Violation> {
    let n = schema.n_columns();
    let mut out = Vec::new();
    if sketch.select >= n {
        out.push(Violation::ColumnOutOfRange {
            slot: "select".into(),
            index: sketch.select,
            n_columns: n,
        });
    }
    if sketch.conds.len() > max_conds {
        out.push(Violation::TooManyConditions {
            count: sketch.conds.len(),
            max: max_conds,
        });
    }
    for (i, c) in sketch.conds.iter().enumerate() {
        if c.column >= n {
            out.push(Violation::ColumnOutOfRange {
                slot: format!("where[{i}]"),
                index: c.column,
                n_columns: n,
            });
        }
        if c.value.trim().is_empty() {
            out.push(Violation::EmptyValue { cond: i });
        }
    }
    out
}

fn render_with(sketch: &SqlSketch, schema: &TableSchema, conds: &[(usize, CondOp, String)]) -> Result<String> {
    let header = |i: usize| {
        schema
            .headers
            .get(i)
            .ok_or_else(|| Error::InvalidSketch(format!("column {i} out of range for {}", schema.table_id)))
    };
    let mut sql = format!(
        "SELECT {}({}) FROM {}",
        sketch.agg.sql_name(),
        header(sketch.select)?,
        schema.table_id
    );
    for (i, (col, op, value)) in conds.iter().enumerate() {
        sql.push_str(if i == 0 { " WHERE " } else { " AND " });
        sql.push_str(&format!("{} {} {}", header(*col)?, op, value));
    }
    Ok(sql)
}

/// Canonical SQL text for a sketch, conditions in their stored order.
pub fn render_sql(sketch: &SqlSketch, schema: &TableSchema) -> Result<String> {
    let conds: Vec<_> = sketch
        .conds
        .iter()
        .map(|c| (c.column, c.op, c.value.clone()))
        .collect();
    render_with(sketch, schema, &conds)
}

/// Rendering with normalized values and sorted conditions: two sketches are
/// LF-equal exactly when their canonical forms match.
pub fn canonical_sql(sketch: &SqlSketch, schema: &TableSchema) -> Result<String> {
    render_with(sketch, schema, &sketch.normalized_conds())
}

pub fn lf_equal(a: &SqlSketch, b: &SqlSketch) -> bool {
    a.select == b.select
        && a.agg == b.agg
        && a.conds.len() == b.conds.len()
        && a.normalized_conds() == b.normalized_conds()
}
