use std::ops::Range;

use super::network::{agg_from_logits, argmax, HeadOutputs};
use crate::sketch::{CondOp, Condition, SqlSketch};

/// Best span by `start + end` logit with `start <= end` and fewer than
/// `max_span` tokens between them; earlier spans win ties.
pub fn best_span(start: &[f64], end: &[f64], max_span: usize) -> Option<(usize, usize)> {
    let mut best = None;
    let mut best_v = f64::NEG_INFINITY;
    for (s, &sv) in start.iter().enumerate() {
        for e in s..end.len().min(s + max_span.max(1)) {
            let v = sv + end[e];
            if v > best_v {
                best_v = v;
                best = Some((s, e));
            }
        }
    }
    best
}

/// Columns with the `n` highest scores, lower index first on ties, returned
/// in column order.
pub fn top_columns(scores: &[f64], n: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order.truncate(n);
    order.sort_unstable();
    order
}

/// Turns head scores into a sketch. Values are copied verbatim from the
/// question through the token spans.
pub fn decode_sketch(heads: &HeadOutputs, question: &str, spans: &[Range<usize>], max_span: usize, max_conds: usize) -> SqlSketch {
    let select = argmax(heads.sel_logits.iter().copied());
    let agg = agg_from_logits(&heads.agg_logits);
    let n = argmax(heads.wnum_logits.iter().copied())
        .min(max_conds)
        .min(heads.n_columns());
    let nq = heads.question_len().min(spans.len());
    let conds = if nq == 0 {
        Vec::new()
    } else {
        top_columns(&heads.wcol_scores, n)
            .into_iter()
            .map(|col| {
                let op = CondOp::from_index(argmax(heads.wop_logits.row(col).iter().copied())).expect("three op logits");
                let start = heads.wval_start_logits.row(col);
                let end = heads.wval_end_logits.row(col);
                let (s, e) = best_span(&start.as_slice().expect("row-major")[..nq], &end.as_slice().expect("row-major")[..nq], max_span)
                    .expect("non-empty question");
                Condition::new(col, op, &question[spans[s].start..spans[e].end])
            })
            .collect()
    };
    SqlSketch::new(select, agg, conds)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    fn heads(n_cols: usize, nq: usize) -> HeadOutputs {
        HeadOutputs {
            sel_logits: vec![0.0; n_cols],
            agg_logits: vec![0.0; 6],
            agg_column: 0,
            wnum_logits: vec![0.0; 5],
            wcol_scores: vec![0.5; n_cols],
            wop_logits: Array2::zeros((n_cols, 3)),
            wval_start_logits: Array2::zeros((n_cols, nq)),
            wval_end_logits: Array2::zeros((n_cols, nq)),
        }
    }

    fn spans(q: &str) -> Vec<Range<usize>> {
        crate::text::tokenize(q).into_iter().map(|t| t.span).collect()
    }

    #[test]
    fn zero_conditions() {
        let mut h = heads(3, 2);
        h.wnum_logits[0] = 5.0;
        h.sel_logits[2] = 1.0;
        let s = decode_sketch(&h, "a b", &spans("a b"), 16, 4);
        assert_eq!(s.select, 2);
        assert!(s.conds.is_empty());
    }

    #[test]
    fn top_k_columns() {
        assert_eq!(top_columns(&[0.9, 0.1, 0.8, 0.2], 2), vec![0, 2]);
        assert_eq!(top_columns(&[0.1, 0.7, 0.2, 0.7], 1), vec![1]);
    }

    #[test]
    fn span_respects_order_and_length() {
        assert_eq!(best_span(&[0.0, 5.0, 0.0], &[3.0, 0.0, 1.0], 16), Some((1, 2)));
        assert_eq!(best_span(&[5.0, 0.0, 0.0], &[0.0, 0.0, 9.0], 2), Some((1, 2)));
        assert_eq!(best_span(&[], &[], 4), None);
    }

    #[test]
    fn value_is_verbatim_question_text() {
        let q = "Who wears  Jersey 42?";
        let sp = spans(q);
        let mut h = heads(2, sp.len());
        h.wnum_logits[1] = 3.0;
        h.wcol_scores = vec![0.2, 0.9];
        h.wop_logits[[1, 0]] = 2.0;
        h.wval_start_logits[[1, 3]] = 4.0;
        h.wval_end_logits[[1, 3]] = 4.0;
        let s = decode_sketch(&h, q, &sp, 16, 4);
        assert_eq!(s.conds, vec![Condition::new(1, CondOp::Eq, "42")]);
        h.wval_start_logits[[1, 1]] = 9.0;
        h.wval_end_logits[[1, 2]] = 9.0;
        let s = decode_sketch(&h, q, &sp, 16, 4);
        assert_eq!(s.conds[0].value, "wears  Jersey");
    }
}
