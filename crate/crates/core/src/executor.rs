//! In-memory single-table execution of sketches and the execution-accuracy
//! comparator.
//!
//! Equality conditions compare normalized strings. Ordering conditions parse
//! both operands as numbers; a cell that does not parse fails the condition
//! and bumps a warning counter rather than aborting the query.

use std::cmp::Ordering;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::sketch::{validate_sketch, AggOp, CondOp, SqlSketch, Table};
use crate::text::normalize_value;

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(untagged)]
pub enum ResultValue {
    Text(String),
    Number(f64),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct Warnings {
    /// Ordering comparisons where the cell or the value was not numeric.
    pub unparseable_comparisons: usize,
    /// Cells skipped by MAX/MIN/SUM/AVG because they were not numeric.
    pub unparseable_aggregation_cells: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QueryResult {
    pub values: Vec<ResultValue>,
    pub warnings: Warnings,
}

pub fn parse_number(s: &str) -> Option<f64> {
    let v: f64 = s.trim().parse().ok()?;
    v.is_finite().then_some(v)
}

/// Row indices surviving every condition of `sketch`.
pub fn matching_rows(sketch: &SqlSketch, table: &Table, warnings: &mut Warnings) -> Vec<usize> {
    let prepared: Vec<_> = sketch
        .conds
        .iter()
        .map(|c| {
            let norm = normalize_value(&c.value);
            let num = parse_number(&norm);
            (c.column, c.op, norm, num)
        })
        .collect();
    let mut out = Vec::new();
    'rows: for (i, row) in table.rows.iter().enumerate() {
        for (col, op, norm, num) in &prepared {
            let cell = &row[*col];
            let keep = match op {
                CondOp::Eq => normalize_value(cell) == *norm,
                CondOp::Gt | CondOp::Lt => match (parse_number(cell), num) {
                    (Some(x), Some(v)) => {
                        if *op == CondOp::Gt {
                            x > *v
                        } else {
                            x < *v
                        }
                    }
                    _ => {
                        warnings.unparseable_comparisons += 1;
                        false
                    }
                },
            };
            if !keep {
                continue 'rows;
            }
        }
        out.push(i);
    }
    out
}

pub fn execute(sketch: &SqlSketch, table: &Table) -> Result<QueryResult> {
    let violations = validate_sketch(sketch, &table.schema, usize::MAX);
    if let Some(v) = violations.first() {
        return Err(Error::InvalidSketch(v.to_string()));
    }
    let mut warnings = Warnings::default();
    let rows = matching_rows(sketch, table, &mut warnings);
    let cells = rows.iter().map(|&r| table.rows[r][sketch.select].as_str());

    let values = match sketch.agg {
        AggOp::None => cells.map(|c| ResultValue::Text(c.to_string())).collect(),
        AggOp::Count => vec![ResultValue::Number(rows.len() as f64)],
        agg => {
            let mut nums = Vec::with_capacity(rows.len());
            for cell in cells {
                match parse_number(cell) {
                    Some(x) => nums.push(x),
                    None => warnings.unparseable_aggregation_cells += 1,
                }
            }
            if nums.is_empty() {
                Vec::new()
            } else {
                let v = match agg {
                    AggOp::Max => nums.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                    AggOp::Min => nums.iter().copied().fold(f64::INFINITY, f64::min),
                    AggOp::Sum => nums.iter().sum(),
                    AggOp::Avg => nums.iter().sum::<f64>() / nums.len() as f64,
                    AggOp::None | AggOp::Count => unreachable!(),
                };
                vec![ResultValue::Number(v)]
            }
        }
    };
    Ok(QueryResult { values, warnings })
}

const REL_TOL: f64 = 1e-9;

fn numbers_close(a: f64, b: f64) -> bool {
    a == b || (a - b).abs() <= REL_TOL * a.abs().max(b.abs())
}

/// Multiset equality of two results: texts compared normalized, numbers with
/// a relative tolerance, and a text never equals a number.
pub fn results_equal(a: &QueryResult, b: &QueryResult) -> bool {
    fn split(r: &QueryResult) -> (Vec<String>, Vec<f64>) {
        let mut texts = Vec::new();
        let mut nums = Vec::new();
        for v in &r.values {
            match v {
                ResultValue::Text(t) => texts.push(normalize_value(t)),
                ResultValue::Number(x) => nums.push(*x),
            }
        }
        texts.sort();
        nums.sort_by(|x, y| x.partial_cmp(y).unwrap_or(Ordering::Equal));
        (texts, nums)
    }
    let (ta, na) = split(a);
    let (tb, nb) = split(b);
    ta == tb && na.len() == nb.len() && na.iter().zip(&nb).all(|(x, y)| numbers_close(*x, *y))
}

pub fn ex_equal(pred: &SqlSketch, gold: &SqlSketch, table: &Table) -> Result<bool> {
    Ok(results_equal(&execute(pred, table)?, &execute(gold, table)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sketch::{Condition, TableSchema};

    fn tennis() -> Table {
        let schema = TableSchema::text("tennis", &["Result", "Court", "Player"]).unwrap();
        let rows = [
            ["winner", "clay", "Rafael Nadal"],
            ["runner-up", "grass", "Novak Djokovic"],
            ["winner", "hard", "Jarkko Nieminen"],
        ];
        Table::new(
            schema,
            rows.iter().map(|r| r.iter().map(|c| c.to_string()).collect()).collect(),
        )
        .unwrap()
    }

    #[test]
    fn select_with_two_conditions() {
        let s = SqlSketch::new(
            1,
            AggOp::None,
            vec![
                Condition::new(2, CondOp::Eq, "rafael nadal"),
                Condition::new(0, CondOp::Eq, "winner"),
            ],
        );
        let r = execute(&s, &tennis()).unwrap();
        assert_eq!(r.values, vec![ResultValue::Text("clay".into())]);
    }

    #[test]
    fn count_winners() {
        let s = SqlSketch::new(2, AggOp::Count, vec![Condition::new(0, CondOp::Eq, "winner")]);
        assert_eq!(execute(&s, &tennis()).unwrap().values, vec![ResultValue::Number(2.0)]);
        let all = SqlSketch::new(0, AggOp::Count, vec![]);
        assert_eq!(execute(&all, &tennis()).unwrap().values, vec![ResultValue::Number(3.0)]);
    }

    #[test]
    fn ex_equal_examples() {
        let t = tennis();
        let gold = SqlSketch::new(
            1,
            AggOp::None,
            vec![
                Condition::new(0, CondOp::Eq, "winner"),
                Condition::new(2, CondOp::Eq, "rafael nadal"),
            ],
        );
        assert!(ex_equal(&gold, &gold, &t).unwrap());
        let pred = SqlSketch::new(1, AggOp::None, vec![Condition::new(2, CondOp::Eq, "rafael nadal")]);
        assert!(ex_equal(&pred, &gold, &t).unwrap());
        let mut counted = pred.clone();
        counted.agg = AggOp::Count;
        assert!(!ex_equal(&counted, &pred, &t).unwrap());
    }

    #[test]
    fn dirty_numeric_cells_warn() {
        let schema = TableSchema::text("t", &["name", "laps"]).unwrap();
        let rows = vec![
            vec!["a".to_string(), "10".to_string()],
            vec!["b".to_string(), "n/a".to_string()],
            vec!["c".to_string(), "30".to_string()],
        ];
        let t = Table::new(schema, rows).unwrap();
        let gt = SqlSketch::new(0, AggOp::None, vec![Condition::new(1, CondOp::Gt, "15")]);
        let r = execute(&gt, &t).unwrap();
        assert_eq!(r.values, vec![ResultValue::Text("c".into())]);
        assert_eq!(r.warnings.unparseable_comparisons, 1);

        let avg = SqlSketch::new(1, AggOp::Avg, vec![]);
        let r = execute(&avg, &t).unwrap();
        assert_eq!(r.values, vec![ResultValue::Number(20.0)]);
        assert_eq!(r.warnings.unparseable_aggregation_cells, 1);

        let none = SqlSketch::new(1, AggOp::Sum, vec![Condition::new(0, CondOp::Eq, "b")]);
        assert!(execute(&none, &t).unwrap().values.is_empty());
    }

    #[test]
    fn invalid_sketch_is_an_error() {
        let s = SqlSketch::new(5, AggOp::None, vec![]);
        assert!(execute(&s, &tennis()).is_err());
    }

    #[test]
    fn numeric_tolerance() {
        let a = QueryResult { values: vec![ResultValue::Number(0.1 + 0.2)], warnings: Warnings::default() };
        let b = QueryResult { values: vec![ResultValue::Number(0.3)], warnings: Warnings::default() };
        assert!(results_equal(&a, &b));
        let c = QueryResult { values: vec![ResultValue::Text("0.3".into())], warnings: Warnings::default() };
        assert!(!results_equal(&a, &c));
    }
}
