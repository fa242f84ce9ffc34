//! Desk-scale encoder and the six sketch heads.
//!
//! The encoder is a small pre-norm transformer over the serialized input
//! (token + position + segment + column-ordinal embeddings). Each column gets
//! a pooled header vector, the mean of its header tokens. The heads score
//! select column, aggregation, number of conditions, where columns, operators
//! and value spans; every column-level head attends over the question tokens
//! from the column's header vector. Gradients come from a small reverse-mode
//! tape in double precision.

pub mod checkpoint;
mod decode;
pub mod gradcheck;
mod loss;
mod network;
mod params;
mod tape;
mod vocab;

pub use decode::{best_span, decode_sketch, top_columns};
pub use loss::{align_gold, loss, loss_on_tape, AlignedCond, Alignment, LossBreakdown};
pub use network::{
    agg_from_logits, argmax, column_attention, head_outputs, match_flags, EncoderOutput, Graph, HeadOutputs, Model, ModelConfig,
    N_AGG, N_OPS,
};
pub use params::{Grads, ParamStore};
pub use tape::{sigmoid, softmax_rows, Tape, Var};
pub use vocab::{Vocab, PAD, SPECIALS, UNK};

use crate::error::Result;
use crate::sampler::{serialize_input, SampleSet, SerializedInput};
use crate::sketch::{SqlSketch, TableSchema};

impl Model {
    /// Serializes, encodes and decodes one question.
    pub fn predict(&self, question: &str, schema: &TableSchema, samples: &SampleSet, budget: usize) -> Result<(SqlSketch, SerializedInput)> {
        let input = serialize_input(question, schema, samples, budget.min(self.config.max_positions))?;
        let heads = self.predict_heads(&input)?;
        let sketch = decode_sketch(&heads, question, &input.question_spans, self.config.max_span, self.config.max_conds);
        Ok((sketch, input))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampler::{Segment, Strategy as SamplingStrategy};
    use crate::sketch::{validate_sketch, AggOp, CondOp, Condition, Table};
    use approx::assert_relative_eq;
    use ndarray::{array, Array2};
    use proptest::prelude::*;

    fn tiny_config() -> ModelConfig {
        ModelConfig {
            d_model: 16,
            n_layers: 1,
            n_heads: 2,
            d_ff: 32,
            max_positions: 64,
            max_columns: 8,
            seed: 3,
            ..ModelConfig::default()
        }
    }

    fn tiny_model() -> Model {
        let words = "who wears jersey 42 player name position team rafael nadal clay winner result court";
        let vocab = Vocab::build(words.split(' '), 1, 8);
        Model::new(tiny_config(), vocab).unwrap()
    }

    fn samples(schema: &TableSchema, cols: Vec<Vec<&str>>) -> SampleSet {
        SampleSet {
            table_id: schema.table_id.clone(),
            strategy: SamplingStrategy::Relevance,
            k: 2,
            seed: 0,
            columns: cols.into_iter().map(|c| c.into_iter().map(String::from).collect()).collect(),
        }
    }

    fn jersey_input() -> (SerializedInput, TableSchema) {
        let schema = TableSchema::text("t", &["Player Name", "Jersey", "Position", "Team"]).unwrap();
        let s = samples(&schema, vec![vec!["rafael nadal"], vec!["42", "7"], vec![], vec!["clay"]]);
        (serialize_input("Who wears jersey 42?", &schema, &s, 64).unwrap(), schema)
    }

    #[test]
    fn config_validation() {
        assert!(ModelConfig { vocab_size: 10, ..ModelConfig::default() }.validate().is_ok());
        let bad = ModelConfig {
            vocab_size: 10,
            n_heads: 3,
            ..ModelConfig::default()
        };
        assert!(bad.validate().is_err());
        let zero = ModelConfig {
            vocab_size: 10,
            n_layers: 0,
            ..ModelConfig::default()
        };
        assert!(zero.validate().is_err());
    }

    #[test]
    fn encoder_shapes() {
        let m = tiny_model();
        let (input, _) = jersey_input();
        let enc = m.encode(&input).unwrap();
        assert_eq!(enc.tokens.dim(), (input.len(), 16));
        assert_eq!(enc.headers.nrows(), 4);
        assert_eq!(enc.question.nrows(), input.question_range().len());
        assert_eq!(enc.question.row(0), enc.tokens.row(1));
    }

    #[test]
    fn length_overflow_is_an_error() {
        let mut m = tiny_model();
        m.config.max_positions = 5;
        let (input, _) = jersey_input();
        assert!(m.encode(&input).is_err());
    }

    #[test]
    fn head_shapes_and_normalization() {
        let m = tiny_model();
        let (input, _) = jersey_input();
        let h = m.predict_heads(&input).unwrap();
        let nq = input.question_range().len();
        assert_eq!(h.sel_logits.len(), 4);
        assert_eq!(h.agg_logits.len(), 6);
        assert_eq!(h.wnum_logits.len(), 5);
        assert_eq!(h.wcol_scores.len(), 4);
        assert_eq!(h.wop_logits.dim(), (4, 3));
        assert_eq!(h.wval_start_logits.dim(), (4, nq));
        assert_eq!(h.wval_end_logits.dim(), (4, nq));
        assert!(h.wcol_scores.iter().all(|&p| p > 0.0 && p < 1.0));
        for logits in [&h.sel_logits, &h.agg_logits, &h.wnum_logits] {
            let row = Array2::from_shape_vec((1, logits.len()), logits.clone()).unwrap();
            assert_relative_eq!(softmax_rows(&row).sum(), 1.0, epsilon = 1e-6);
        }
        for r in softmax_rows(&h.wval_start_logits).rows() {
            assert_relative_eq!(r.sum(), 1.0, epsilon = 1e-6);
        }
    }

    #[test]
    fn column_attention_examples() {
        let w = array![[0.3, -1.0], [2.0, 0.5]];
        let q = array![[1.0, 2.0], [1.0, 2.0], [1.0, 2.0]];
        let (a, ctx) = column_attention(array![0.7, -0.2].view(), &q, &w);
        for &x in a.iter() {
            assert_relative_eq!(x, 1.0 / 3.0, epsilon = 1e-12);
        }
        assert_relative_eq!(ctx[0], 1.0, epsilon = 1e-12);
        assert_relative_eq!(ctx[1], 2.0, epsilon = 1e-12);

        let (a, _) = column_attention(array![0.7, -0.2].view(), &array![[5.0, -3.0]], &w);
        assert_eq!(a.to_vec(), vec![1.0]);

        let q = array![[0.1, -2.0], [3.0, 0.4], [-1.2, 0.9], [0.0, 0.3]];
        let (a, _) = column_attention(array![1.5, 0.25].view(), &q, &w);
        assert_relative_eq!(a.sum(), 1.0, epsilon = 1e-6);
    }

    #[test]
    fn column_permutation_permutes_header_vectors_without_positions() {
        let mut m = tiny_model();
        m.config.column_embeddings = false;
        let mut m = Model {
            params: Model::new(m.config.clone(), m.vocab.clone()).unwrap().params,
            ..m
        };
        let pos = m.params.id("emb.pos").unwrap();
        m.params.tensor_mut(pos).fill(0.0);
        let a = TableSchema::text("t", &["Player Name", "Jersey", "Team"]).unwrap();
        let b = TableSchema::text("t", &["Team", "Jersey", "Player Name"]).unwrap();
        let sa = samples(&a, vec![vec!["rafael nadal"], vec!["42"], vec!["clay"]]);
        let sb = samples(&b, vec![vec!["clay"], vec!["42"], vec!["rafael nadal"]]);
        let ea = m.encode(&serialize_input("who wears 42", &a, &sa, 64).unwrap()).unwrap();
        let eb = m.encode(&serialize_input("who wears 42", &b, &sb, 64).unwrap()).unwrap();
        for (i, j) in [(0, 2), (1, 1), (2, 0)] {
            for (x, y) in ea.headers.row(i).iter().zip(eb.headers.row(j).iter()) {
                assert_relative_eq!(x, y, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn samples_are_attended_but_not_pooled() {
        let m = tiny_model();
        let (input, _) = jersey_input();
        let groups: Vec<usize> = (0..4).flat_map(|c| input.header_positions(c)).collect();
        assert!(groups.iter().all(|&i| input.tokens[i].segment == Segment::Header));
        let schema = TableSchema::text("t", &["Player Name", "Jersey", "Position", "Team"]).unwrap();
        let other = samples(&schema, vec![vec!["clay"], vec!["7"], vec![], vec!["rafael nadal"]]);
        let alt = serialize_input("Who wears jersey 42?", &schema, &other, 64).unwrap();
        let e1 = m.encode(&input).unwrap();
        let e2 = m.encode(&alt).unwrap();
        assert!((&e1.headers - &e2.headers).iter().any(|d| d.abs() > 1e-9));
    }

    #[test]
    fn match_flags_mark_shared_tokens() {
        let (input, _) = jersey_input();
        let flags = match_flags(&input);
        let flagged: Vec<(&str, usize)> = input
            .tokens
            .iter()
            .zip(&flags)
            .filter(|(_, &f)| f > 0)
            .map(|(t, &f)| (t.text.as_str(), f))
            .collect();
        assert_eq!(flagged, vec![("42", 1), ("42", 2)]);
        let empty = SampleSet::empty(&Table::new(input_schema(), vec![]).unwrap());
        let bare = serialize_input("Who wears jersey 42?", &input_schema(), &empty, 64).unwrap();
        assert!(match_flags(&bare).iter().all(|&f| f == 0));
    }

    fn input_schema() -> TableSchema {
        TableSchema::text("t", &["Player Name", "Jersey", "Position", "Team"]).unwrap()
    }

    #[test]
    fn checkpoint_round_trip() {
        let m = tiny_model();
        let bytes = checkpoint::to_bytes(&m, serde_json::json!({"note": "x"})).unwrap();
        let (back, meta) = checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back.params, m.params);
        assert_eq!(back.config, m.config);
        assert_eq!(meta["note"], "x");
        let (input, _) = jersey_input();
        assert_eq!(m.predict_heads(&input).unwrap(), back.predict_heads(&input).unwrap());

        let mut corrupt = bytes.clone();
        corrupt[0] = b'X';
        assert!(checkpoint::from_bytes(&corrupt).is_err());
        let mut v2 = bytes.clone();
        v2[8] = 2;
        assert!(checkpoint::from_bytes(&v2).is_err());
        assert!(checkpoint::from_bytes(&bytes[..bytes.len() - 8]).is_err());
    }

    #[test]
    fn tiny_gradient_check() {
        let mut m = tiny_model();
        let (input, _) = jersey_input();
        let gold = SqlSketch::new(0, AggOp::Count, vec![Condition::new(1, CondOp::Eq, "42")]);
        let align = align_gold("Who wears jersey 42?", &gold).unwrap();
        let checks = gradcheck::gradient_check(&mut m, &[(input, gold, align)], 1e-3).unwrap();
        for c in &checks {
            assert!(c.max_rel_err < 1e-4, "{} rel err {}", c.name, c.max_rel_err);
        }
    }

    #[test]
    fn tape_loss_matches_plain_loss() {
        let m = tiny_model();
        let (input, _) = jersey_input();
        let gold = SqlSketch::new(2, AggOp::Max, vec![Condition::new(1, CondOp::Gt, "42")]);
        let align = align_gold("Who wears jersey 42?", &gold).unwrap();
        let mut tape = Tape::new(&m.params);
        let g = m.forward(&mut tape, &input, Some(2), None).unwrap();
        let (l, parts) = loss_on_tape(&mut tape, &g, &gold, &align);
        let plain = loss(&head_outputs(&tape, &g), &gold, &align);
        assert_relative_eq!(tape.scalar(l), parts.total(), epsilon = 1e-9);
        assert_relative_eq!(plain.total(), parts.total(), epsilon = 1e-9);
    }

    #[test]
    fn predict_returns_valid_sketch() {
        let m = tiny_model();
        let schema = TableSchema::text("t", &["Player Name", "Jersey"]).unwrap();
        let table = Table::new(schema.clone(), vec![vec!["A".into(), "42".into()]]).unwrap();
        let (sketch, _) = m.predict("who wears 42", &schema, &SampleSet::empty(&table), 64).unwrap();
        assert!(validate_sketch(&sketch, &schema, 4).is_empty());
    }

    fn arb_heads() -> impl proptest::strategy::Strategy<Value = (HeadOutputs, String)> {
        (1usize..6, 1usize..8).prop_flat_map(|(c, nq)| {
            let v = |n: usize| proptest::collection::vec(-5.0f64..5.0, n);
            (v(c), v(6), v(5), proptest::collection::vec(0.0f64..1.0, c), v(c * 3), v(c * nq), v(c * nq)).prop_map(
                move |(sel, agg, wnum, wcol, wop, ws, we)| {
                    let q = (0..nq).map(|i| format!("w{i}")).collect::<Vec<_>>().join(" ");
                    (
                        HeadOutputs {
                            sel_logits: sel,
                            agg_logits: agg,
                            agg_column: 0,
                            wnum_logits: wnum,
                            wcol_scores: wcol,
                            wop_logits: Array2::from_shape_vec((c, 3), wop).unwrap(),
                            wval_start_logits: Array2::from_shape_vec((c, nq), ws).unwrap(),
                            wval_end_logits: Array2::from_shape_vec((c, nq), we).unwrap(),
                        },
                        q,
                    )
                },
            )
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn decoded_sketches_validate((heads, q) in arb_heads(), max_span in 1usize..5) {
            let spans: Vec<_> = crate::text::tokenize(&q).into_iter().map(|t| t.span).collect();
            let headers: Vec<String> = (0..heads.n_columns()).map(|i| format!("c{i}")).collect();
            let refs: Vec<&str> = headers.iter().map(String::as_str).collect();
            let schema = TableSchema::text("t", &refs).unwrap();
            let s = decode_sketch(&heads, &q, &spans, max_span, 4);
            prop_assert!(validate_sketch(&s, &schema, 4).is_empty());
            for c in &s.conds {
                prop_assert!(c.value.split(' ').count() <= max_span);
                prop_assert!(q.contains(&c.value));
            }
        }

        #[test]
        fn select_argmax_is_scale_invariant((heads, q) in arb_heads(), k in 0.01f64..100.0) {
            let spans: Vec<_> = crate::text::tokenize(&q).into_iter().map(|t| t.span).collect();
            let mut scaled = heads.clone();
            scaled.sel_logits.iter_mut().for_each(|x| *x *= k);
            prop_assert_eq!(
                decode_sketch(&heads, &q, &spans, 4, 4).select,
                decode_sketch(&scaled, &q, &spans, 4, 4).select
            );
        }

        #[test]
        fn head_shapes_hold(n_cols in 1usize..6, nq in 1usize..10, k in 0usize..3) {
            let m = tiny_model();
            let headers: Vec<String> = (0..n_cols).map(|i| format!("col {i}")).collect();
            let refs: Vec<&str> = headers.iter().map(String::as_str).collect();
            let schema = TableSchema::text("t", &refs).unwrap();
            let s = samples(&schema, (0..n_cols).map(|_| vec!["clay"; k]).collect());
            let q = (0..nq).map(|i| format!("w{i}")).collect::<Vec<_>>().join(" ");
            let input = serialize_input(&q, &schema, &s, 64).unwrap();
            let h = m.predict_heads(&input).unwrap();
            prop_assert_eq!(h.sel_logits.len(), n_cols);
            prop_assert_eq!(h.wval_start_logits.dim(), (n_cols, nq));
            prop_assert!(h.wop_logits.iter().chain(h.sel_logits.iter()).all(|x| x.is_finite()));
        }
    }
}
