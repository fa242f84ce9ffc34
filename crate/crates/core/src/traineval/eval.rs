use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use log::warn;
use serde::{Deserialize, Serialize};

use super::train::TrainConfig;
use super::SampleSource;
use crate::dataio::{Corpus, TableMap};
use crate::error::{Error, Result};
use crate::executor::ex_equal;
use crate::model::{align_gold, Model};
use crate::sampler::{SamplingSpec, DEFAULT_BUDGET};
use crate::sketch::{lf_equal, render_sql, validate_sketch, Example, SqlSketch};
use crate::text::normalize_value;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub budget: usize,
    /// Seeds random and relevance sampling.
    pub seed: u64,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            budget: DEFAULT_BUDGET,
            seed: 0,
        }
    }
}

impl EvalOptions {
    pub fn from_train(config: &TrainConfig) -> Self {
        EvalOptions {
            budget: config.budget,
            seed: config.seed,
        }
    }
}

/// One line of the prediction dump.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    /// Position of the example in the evaluated corpus.
    pub id: usize,
    pub table_id: String,
    pub question: String,
    /// `None` when the input could not be built (e.g. over budget).
    pub predicted: Option<SqlSketch>,
    pub predicted_sql: Option<String>,
    pub gold: SqlSketch,
    pub gold_sql: String,
    pub lf: bool,
    pub ex: bool,
    pub sel: bool,
    pub agg: bool,
    pub wnum: bool,
    pub wcol: bool,
    pub wop: bool,
    pub wval: bool,
    /// Gold values that cannot be found in the question.
    pub gold_unalignable: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SubtaskAccuracy {
    pub sel: f64,
    pub agg: f64,
    pub wnum: f64,
    pub wcol: f64,
    pub wop: f64,
    pub wval: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct EvalCounts {
    pub examples: usize,
    pub lf: usize,
    pub ex: usize,
    pub sel: usize,
    pub agg: usize,
    pub wnum: usize,
    pub wcol: usize,
    pub wop: usize,
    pub wval: usize,
    pub failed_predictions: usize,
    pub unalignable_gold: usize,
    /// Examples with LF but not EX; always zero for a correct executor.
    pub lf_without_ex: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub lf: f64,
    pub ex: f64,
    pub subtasks: SubtaskAccuracy,
    pub counts: EvalCounts,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub records: Vec<PredictionRecord>,
}

fn sorted<T: Ord>(mut v: Vec<T>) -> Vec<T> {
    v.sort();
    v
}

fn score_one(id: usize, ex: &Example, tables: &TableMap, predicted: Option<&SqlSketch>, error: Option<String>) -> Result<PredictionRecord> {
    let table = tables
        .get(&ex.table_id)
        .ok_or_else(|| Error::MissingTable(ex.table_id.clone()))?;
    let gold = &ex.gold;
    let gold_sql = render_sql(gold, &table.schema)?;
    let gold_unalignable = align_gold(&ex.question, gold).is_err();
    let mut rec = PredictionRecord {
        id,
        table_id: ex.table_id.clone(),
        question: ex.question.clone(),
        predicted: predicted.cloned(),
        predicted_sql: None,
        gold: gold.clone(),
        gold_sql,
        lf: false,
        ex: false,
        sel: false,
        agg: false,
        wnum: false,
        wcol: false,
        wop: false,
        wval: false,
        gold_unalignable,
        error,
    };
    let Some(p) = predicted else { return Ok(rec) };
    if !validate_sketch(p, &table.schema, usize::MAX).is_empty() {
        rec.error = Some("predicted sketch does not fit the table".into());
        return Ok(rec);
    }
    rec.predicted_sql = Some(render_sql(p, &table.schema)?);
    rec.lf = lf_equal(p, gold);
    rec.ex = ex_equal(p, gold, table)?;
    rec.sel = p.select == gold.select;
    rec.agg = p.agg == gold.agg;
    rec.wnum = p.conds.len() == gold.conds.len();
    let cols = |s: &SqlSketch| sorted(s.conds.iter().map(|c| c.column).collect());
    let ops = |s: &SqlSketch| sorted(s.conds.iter().map(|c| (c.column, c.op)).collect());
    let vals = |s: &SqlSketch| sorted(s.conds.iter().map(|c| (c.column, normalize_value(&c.value))).collect());
    rec.wcol = cols(p) == cols(gold);
    rec.wop = ops(p) == ops(gold);
    rec.wval = vals(p) == vals(gold);
    Ok(rec)
}

/// Aggregates per-example records. Pure: equal records give an identical
/// report.
pub fn report_from_records(records: Vec<PredictionRecord>) -> Result<EvalReport> {
    if records.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let count = |f: fn(&PredictionRecord) -> bool| records.iter().filter(|r| f(r)).count();
    let counts = EvalCounts {
        examples: records.len(),
        lf: count(|r| r.lf),
        ex: count(|r| r.ex),
        sel: count(|r| r.sel),
        agg: count(|r| r.agg),
        wnum: count(|r| r.wnum),
        wcol: count(|r| r.wcol),
        wop: count(|r| r.wop),
        wval: count(|r| r.wval),
        failed_predictions: count(|r| r.predicted.is_none()),
        unalignable_gold: count(|r| r.gold_unalignable),
        lf_without_ex: count(|r| r.lf && !r.ex),
    };
    if counts.lf_without_ex > 0 {
        warn!("{} examples are LF-correct but not EX-correct", counts.lf_without_ex);
    }
    let n = counts.examples as f64;
    let acc = |c: usize| c as f64 / n;
    Ok(EvalReport {
        lf: acc(counts.lf),
        ex: acc(counts.ex),
        subtasks: SubtaskAccuracy {
            sel: acc(counts.sel),
            agg: acc(counts.agg),
            wnum: acc(counts.wnum),
            wcol: acc(counts.wcol),
            wop: acc(counts.wop),
            wval: acc(counts.wval),
        },
        counts,
        records,
    })
}

/// Scores given predictions (one per example, `None` for a failed
/// prediction) against the corpus gold.
pub fn score_predictions(examples: &[Example], tables: &TableMap, predictions: &[Option<SqlSketch>]) -> Result<EvalReport> {
    if examples.len() != predictions.len() {
        return Err(Error::Config(format!(
            "{} predictions for {} examples",
            predictions.len(),
            examples.len()
        )));
    }
    let records = examples
        .iter()
        .zip(predictions)
        .enumerate()
        .map(|(i, (ex, p))| score_one(i, ex, tables, p.as_ref(), None))
        .collect::<Result<Vec<_>>>()?;
    report_from_records(records)
}

/// Samples, serializes, predicts and scores every example.
pub fn evaluate(model: &Model, corpus: &Corpus, tables: &TableMap, spec: SamplingSpec, options: &EvalOptions) -> Result<EvalReport> {
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mut source = SampleSource::new(tables, spec, options.seed);
    let budget = options.budget.min(model.config.max_positions);
    let mut records = Vec::with_capacity(corpus.len());
    for (i, ex) in corpus.examples.iter().enumerate() {
        let samples = source.samples(&ex.question, &ex.table_id, i as u64)?;
        let table = &tables[&ex.table_id];
        let rec = match model.predict(&ex.question, &table.schema, &samples, budget) {
            Ok((sketch, _)) => score_one(i, ex, tables, Some(&sketch), None)?,
            Err(e @ (Error::Budget { .. } | Error::Config(_))) => score_one(i, ex, tables, None, Some(e.to_string()))?,
            Err(e) => return Err(e),
        };
        records.push(rec);
    }
    report_from_records(records)
}

pub fn write_predictions(path: impl AsRef<Path>, records: &[PredictionRecord]) -> Result<()> {
    let path = path.as_ref();
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(f);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_predictions(path: impl AsRef<Path>) -> Result<Vec<PredictionRecord>> {
    let path = path.as_ref();
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

impl EvalReport {
    /// Copy without per-example records.
    pub fn summary(&self) -> EvalReport {
        EvalReport {
            records: Vec::new(),
            ..self.clone()
        }
    }

    /// Re-scores stored predictions against the corpus.
    pub fn rescore(records: &[PredictionRecord], corpus: &Corpus, tables: &TableMap) -> Result<EvalReport> {
        let preds: Vec<_> = records.iter().map(|r| r.predicted.clone()).collect();
        let mut report = score_predictions(&corpus.examples, tables, &preds)?;
        for (r, old) in report.records.iter_mut().zip(records) {
            r.error.clone_from(&old.error);
        }
        Ok(report)
    }

    pub fn render_text(&self) -> String {
        let c = &self.counts;
        let s = &self.subtasks;
        let mut out = String::new();
        let _ = writeln!(out, "examples   {}", c.examples);
        let _ = writeln!(out, "LF         {:.4}  ({})", self.lf, c.lf);
        let _ = writeln!(out, "EX         {:.4}  ({})", self.ex, c.ex);
        for (name, v, n) in [
            ("sel", s.sel, c.sel),
            ("agg", s.agg, c.agg),
            ("wnum", s.wnum, c.wnum),
            ("wcol", s.wcol, c.wcol),
            ("wop", s.wop, c.wop),
            ("wval", s.wval, c.wval),
        ] {
            let _ = writeln!(out, "{name:<10} {v:.4}  ({n})");
        }
        let _ = writeln!(out, "failed     {}", c.failed_predictions);
        let _ = writeln!(out, "unaligned  {}", c.unalignable_gold);
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonRow {
    pub strategy: String,
    pub report: EvalReport,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Comparison {
    pub rows: Vec<ComparisonRow>,
}

/// Evaluates each (strategy, model) pair on the same corpus.
pub fn compare_strategies(entries: &[(SamplingSpec, &Model)], corpus: &Corpus, tables: &TableMap, options: &EvalOptions) -> Result<Comparison> {
    let rows = entries
        .iter()
        .map(|(spec, model)| {
            Ok(ComparisonRow {
                strategy: spec.to_string(),
                report: evaluate(model, corpus, tables, *spec, options)?.summary(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Comparison { rows })
}

impl Comparison {
    /// Aligned table, one row per strategy, accuracies in percent.
    pub fn render_text(&self) -> String {
        let header = ["Strategy", "LF", "EX", "Sel", "Agg", "W-num", "W-col", "W-op", "W-val"];
        let mut rows: Vec<Vec<String>> = vec![header.iter().map(|s| s.to_string()).collect()];
        for r in &self.rows {
            let s = &r.report.subtasks;
            let mut cells = vec![r.strategy.clone()];
            cells.extend(
                [r.report.lf, r.report.ex, s.sel, s.agg, s.wnum, s.wcol, s.wop, s.wval]
                    .iter()
                    .map(|v| format!("{:.1}", v * 100.0)),
            );
            rows.push(cells);
        }
        let widths: Vec<usize> = (0..header.len())
            .map(|c| rows.iter().map(|r| r[c].len()).max().unwrap_or(0))
            .collect();
        let mut out = String::new();
        for (i, r) in rows.iter().enumerate() {
            let line: Vec<String> = r
                .iter()
                .enumerate()
                .map(|(c, cell)| {
                    if c == 0 {
                        format!("{cell:<w$}", w = widths[c])
                    } else {
                        format!("{cell:>w$}", w = widths[c])
                    }
                })
                .collect();
            let _ = writeln!(out, "{}", line.join("  ").trim_end());
            if i == 0 {
                let total = widths.iter().sum::<usize>() + 2 * (widths.len() - 1);
                let _ = writeln!(out, "{}", "-".repeat(total));
            }
        }
        out
    }
}
