//! Gold alignment and the training objective.

use serde::Serialize;

use super::network::{Graph, HeadOutputs};
use super::tape::{Tape, Var};
use crate::error::{Error, Result};
use crate::sketch::SqlSketch;
use crate::text::tokenize;

/// Token-level supervision for one where condition.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AlignedCond {
    pub column: usize,
    pub op: usize,
    /// Inclusive question-token range of the value.
    pub start: usize,
    pub end: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Alignment {
    pub conds: Vec<AlignedCond>,
    /// Conditions whose value occurs more than once; the first occurrence is
    /// used.
    pub ambiguous: usize,
}

/// Finds each gold value as a run of question tokens (case-insensitive).
pub fn align_gold(question: &str, gold: &SqlSketch) -> Result<Alignment> {
    let q: Vec<String> = tokenize(question).into_iter().map(|t| t.text.to_lowercase()).collect();
    let mut out = Alignment::default();
    for c in &gold.conds {
        let v: Vec<String> = tokenize(&c.value).into_iter().map(|t| t.text.to_lowercase()).collect();
        let unalignable = || Error::Unalignable { value: c.value.clone() };
        if v.is_empty() || v.len() > q.len() {
            return Err(unalignable());
        }
        let mut hits = (0..=q.len() - v.len()).filter(|&s| q[s..s + v.len()] == v[..]);
        let start = hits.next().ok_or_else(unalignable)?;
        if hits.next().is_some() {
            out.ambiguous += 1;
        }
        out.conds.push(AlignedCond {
            column: c.column,
            op: c.op.index(),
            start,
            end: start + v.len() - 1,
        });
    }
    Ok(out)
}

/// Per-task loss values.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct LossBreakdown {
    pub sel: f64,
    pub agg: f64,
    pub wnum: f64,
    pub wcol: f64,
    pub wop: f64,
    pub wval: f64,
}

impl LossBreakdown {
    pub fn total(&self) -> f64 {
        self.sel + self.agg + self.wnum + self.wcol + self.wop + self.wval
    }

    pub fn add(&mut self, o: &LossBreakdown) {
        self.sel += o.sel;
        self.agg += o.agg;
        self.wnum += o.wnum;
        self.wcol += o.wcol;
        self.wop += o.wop;
        self.wval += o.wval;
    }
}

fn wcol_targets(n_columns: usize, align: &Alignment) -> Vec<f64> {
    let mut t = vec![0.0; n_columns];
    for c in &align.conds {
        t[c.column] = 1.0;
    }
    t
}

/// Records the unweighted sum of all task losses on the tape. The graph's
/// aggregation head must have been conditioned on the gold select column.
pub fn loss_on_tape(tape: &mut Tape<'_>, g: &Graph, gold: &SqlSketch, align: &Alignment) -> (Var, LossBreakdown) {
    let n_columns = tape.value(g.sel).ncols();
    let sel = tape.cross_entropy(g.sel, &[(0, gold.select)]);
    let agg = tape.cross_entropy(g.agg, &[(0, gold.agg.index())]);
    let wnum = tape.cross_entropy(g.wnum, &[(0, align.conds.len())]);
    let wcol = tape.bce_logits(g.wcol, &wcol_targets(n_columns, align));
    let mut terms = vec![sel, agg, wnum, wcol];
    let mut parts = LossBreakdown {
        sel: tape.scalar(sel),
        agg: tape.scalar(agg),
        wnum: tape.scalar(wnum),
        wcol: tape.scalar(wcol),
        ..LossBreakdown::default()
    };
    if !align.conds.is_empty() {
        let ops: Vec<_> = align.conds.iter().map(|c| (c.column, c.op)).collect();
        let starts: Vec<_> = align.conds.iter().map(|c| (c.column, c.start)).collect();
        let ends: Vec<_> = align.conds.iter().map(|c| (c.column, c.end)).collect();
        let wop = tape.cross_entropy(g.wop, &ops);
        let ws = tape.cross_entropy(g.wstart, &starts);
        let we = tape.cross_entropy(g.wend, &ends);
        parts.wop = tape.scalar(wop);
        parts.wval = tape.scalar(ws) + tape.scalar(we);
        terms.extend([wop, ws, we]);
    }
    (tape.sum_scalars(&terms), parts)
}

fn ce(logits: &[f64], target: usize) -> f64 {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    lse - logits[target]
}

/// The same objective evaluated on plain head scores. The where-column term
/// uses the sigmoid probabilities directly.
pub fn loss(heads: &HeadOutputs, gold: &SqlSketch, align: &Alignment) -> LossBreakdown {
    let targets = wcol_targets(heads.n_columns(), align);
    let wcol = heads
        .wcol_scores
        .iter()
        .zip(&targets)
        .map(|(&p, &t)| -(if t > 0.5 { p } else { 1.0 - p }).max(f64::MIN_POSITIVE).ln())
        .sum();
    let mut out = LossBreakdown {
        sel: ce(&heads.sel_logits, gold.select),
        agg: ce(&heads.agg_logits, gold.agg.index()),
        wnum: ce(&heads.wnum_logits, align.conds.len()),
        wcol,
        ..LossBreakdown::default()
    };
    for c in &align.conds {
        let row = |a: &ndarray::Array2<f64>| a.row(c.column).to_vec();
        out.wop += ce(&row(&heads.wop_logits), c.op);
        out.wval += ce(&row(&heads.wval_start_logits), c.start) + ce(&row(&heads.wval_end_logits), c.end);
    }
    out
}
