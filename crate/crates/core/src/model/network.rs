//! Transformer encoder and the six sketch heads.

use ndarray::{Array1, Array2, ArrayView1};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::params::ParamStore;
use super::tape::{sigmoid, softmax_row, Tape, Var};
use super::vocab::Vocab;
use crate::error::{Error, Result};
use crate::sampler::{Segment, SerializedInput, SEP};
use crate::sketch::AggOp;

pub const N_AGG: usize = 6;
pub const N_OPS: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub max_positions: usize,
    /// Rows of the column-ordinal embedding; ordinals wrap beyond it.
    pub max_columns: usize,
    /// Adds a column-ordinal embedding to header, sample and delimiter tokens.
    pub column_embeddings: bool,
    /// Adds an exact-match embedding flagging question tokens that also
    /// occur among the sampled cells, and those sample tokens.
    pub match_features: bool,
    pub max_conds: usize,
    pub max_span: usize,
    pub dropout: f64,
    pub init_scale: f64,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            vocab_size: 0,
            d_model: 128,
            n_layers: 2,
            n_heads: 4,
            d_ff: 512,
            max_positions: 512,
            max_columns: 64,
            column_embeddings: true,
            match_features: true,
            max_conds: 4,
            max_span: 16,
            dropout: 0.0,
            init_scale: 1.0,
            seed: 0,
        }
    }
}

impl ModelConfig {
    /// Same layout with model width `d`, feed-forward width `4d` and
    /// `heads` attention heads.
    pub fn with_width(d: usize, layers: usize, heads: usize) -> Self {
        ModelConfig {
            d_model: d,
            n_layers: layers,
            n_heads: heads,
            d_ff: 4 * d,
            ..ModelConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("vocab_size", self.vocab_size),
            ("d_model", self.d_model),
            ("n_layers", self.n_layers),
            ("n_heads", self.n_heads),
            ("d_ff", self.d_ff),
            ("max_positions", self.max_positions),
            ("max_columns", self.max_columns),
            ("max_conds", self.max_conds),
            ("max_span", self.max_span),
        ];
        for (name, v) in dims {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be at least 1")));
            }
        }
        if self.d_model % self.n_heads != 0 {
            return Err(Error::Config(format!(
                "d_model {} is not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        if !(self.init_scale > 0.0) {
            return Err(Error::Config("init_scale must be positive".into()));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }
}

/// Encoder outputs for one input, as plain arrays.
#[derive(Debug, Clone)]
pub struct EncoderOutput {
    /// One context vector per serialized token.
    pub tokens: Array2<f64>,
    /// Mean of each column's header-token vectors.
    pub headers: Array2<f64>,
    /// Rows of `tokens` for the question tokens.
    pub question: Array2<f64>,
}

/// Scores of the six sketch heads.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadOutputs {
    pub sel_logits: Vec<f64>,
    pub agg_logits: Vec<f64>,
    /// Column the aggregation head was conditioned on.
    pub agg_column: usize,
    pub wnum_logits: Vec<f64>,
    /// Sigmoid probabilities, one per column.
    pub wcol_scores: Vec<f64>,
    /// columns × 3
    pub wop_logits: Array2<f64>,
    /// columns × question tokens; only question positions are scored.
    pub wval_start_logits: Array2<f64>,
    pub wval_end_logits: Array2<f64>,
}

impl HeadOutputs {
    pub fn n_columns(&self) -> usize {
        self.sel_logits.len()
    }

    pub fn question_len(&self) -> usize {
        self.wval_start_logits.ncols()
    }
}

/// Tape handles of one forward pass.
#[derive(Debug, Clone, Copy)]
pub struct Graph {
    pub tokens: Var,
    pub headers: Var,
    pub question: Var,
    pub sel: Var,
    pub agg: Var,
    pub agg_column: usize,
    pub wnum: Var,
    pub wcol: Var,
    pub wop: Var,
    pub wstart: Var,
    pub wend: Var,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub vocab: Vocab,
    pub params: ParamStore,
}

/// Column attention for plain arrays: weights over question vectors from the
/// bilinear scores `headerᵀ · W · q_i`, and the weighted sum.
pub fn column_attention(header: ArrayView1<f64>, question: &Array2<f64>, w: &Array2<f64>) -> (Array1<f64>, Array1<f64>) {
    let projected = header.dot(w);
    let scores = question.dot(&projected);
    let weights = softmax_row(scores.view());
    let context = question.t().dot(&weights);
    (weights, context)
}

struct Init {
    rng: ChaCha8Rng,
    scale: f64,
}

impl Init {
    fn uniform(&mut self, rows: usize, cols: usize, bound: f64) -> Array2<f64> {
        let b = bound * self.scale;
        Array2::from_shape_fn((rows, cols), |_| self.rng.gen_range(-b..=b))
    }

    fn xavier(&mut self, rows: usize, cols: usize) -> Array2<f64> {
        self.uniform(rows, cols, (6.0 / (rows + cols) as f64).sqrt())
    }
}

impl Model {
    pub fn new(mut config: ModelConfig, vocab: Vocab) -> Result<Self> {
        config.vocab_size = vocab.size();
        config.validate()?;
        let params = Self::init_params(&config);
        Ok(Model { config, vocab, params })
    }

    fn init_params(c: &ModelConfig) -> ParamStore {
        let d = c.d_model;
        let dh = c.head_dim();
        let mut init = Init {
            rng: ChaCha8Rng::seed_from_u64(c.seed),
            scale: c.init_scale,
        };
        let emb = (3.0 / d as f64).sqrt();
        let mut p = ParamStore::default();
        p.insert("emb.tok", init.uniform(c.vocab_size, d, emb));
        p.insert("emb.pos", init.uniform(c.max_positions, d, emb));
        p.insert("emb.seg", init.uniform(Segment::COUNT, d, emb));
        if c.column_embeddings {
            p.insert("emb.col", init.uniform(c.max_columns + 1, d, emb));
        }
        if c.match_features {
            p.insert("emb.match", init.uniform(3, d, emb));
        }
        for l in 0..c.n_layers {
            p.insert(format!("enc.{l}.ln1.g"), Array2::ones((1, d)));
            p.insert(format!("enc.{l}.ln1.b"), Array2::zeros((1, d)));
            for h in 0..c.n_heads {
                for m in ["q", "k", "v"] {
                    p.insert(format!("enc.{l}.att.{h}.{m}"), init.xavier(d, dh));
                }
                p.insert(format!("enc.{l}.att.{h}.o"), init.xavier(dh, d));
            }
            p.insert(format!("enc.{l}.att.bo"), Array2::zeros((1, d)));
            p.insert(format!("enc.{l}.ln2.g"), Array2::ones((1, d)));
            p.insert(format!("enc.{l}.ln2.b"), Array2::zeros((1, d)));
            p.insert(format!("enc.{l}.ff.w1"), init.xavier(d, c.d_ff));
            p.insert(format!("enc.{l}.ff.b1"), Array2::zeros((1, c.d_ff)));
            p.insert(format!("enc.{l}.ff.w2"), init.xavier(c.d_ff, d));
            p.insert(format!("enc.{l}.ff.b2"), Array2::zeros((1, d)));
        }
        p.insert("enc.lnf.g", Array2::ones((1, d)));
        p.insert("enc.lnf.b", Array2::zeros((1, d)));

        // Column-scoring heads share one layout: tanh(H Wh + ctx Wc + b).
        for head in ["sel", "agg", "wcol", "wop", "wval"] {
            p.insert(format!("{head}.att"), init.xavier(d, d));
            p.insert(format!("{head}.wh"), init.xavier(d, d));
            p.insert(format!("{head}.wc"), init.xavier(d, d));
            p.insert(format!("{head}.b"), Array2::zeros((1, d)));
        }
        p.insert("sel.u", init.xavier(1, d));
        p.insert("wcol.u", init.xavier(1, d));
        p.insert("agg.out", init.xavier(d, N_AGG));
        p.insert("agg.bout", Array2::zeros((1, N_AGG)));
        p.insert("wop.out", init.xavier(d, N_OPS));
        p.insert("wop.bout", Array2::zeros((1, N_OPS)));
        p.insert("wval.ws", init.xavier(d, d));
        p.insert("wval.we", init.xavier(d, d));
        p.insert("wnum.u", init.xavier(1, d));
        p.insert("wnum.ws", init.xavier(d, d));
        p.insert("wnum.wcls", init.xavier(d, d));
        p.insert("wnum.b", Array2::zeros((1, d)));
        p.insert("wnum.out", init.xavier(d, c.max_conds + 1));
        p.insert("wnum.bout", Array2::zeros((1, c.max_conds + 1)));
        p
    }

    fn p(&self, tape: &mut Tape<'_>, name: &str) -> Var {
        let id = self
            .params
            .id(name)
            .unwrap_or_else(|| panic!("missing parameter {name}"));
        tape.param(id)
    }

    fn pid(&self, name: &str) -> usize {
        self.params.id(name).unwrap_or_else(|| panic!("missing parameter {name}"))
    }

    fn dropout(&self, tape: &mut Tape<'_>, x: Var, rng: &mut Option<&mut ChaCha8Rng>) -> Var {
        let rate = self.config.dropout;
        match rng {
            Some(rng) if rate > 0.0 => {
                let keep = 1.0 - rate;
                let shape = tape.value(x).raw_dim();
                let mask = Array2::from_shape_fn(shape, |_| if rng.gen_bool(keep) { 1.0 / keep } else { 0.0 });
                let m = tape.constant(mask);
                tape.mul(x, m)
            }
            _ => x,
        }
    }

    /// Token rows pooled into each column's header vector: its header tokens,
    /// or its closing separator if the header has no tokens.
    fn header_groups(input: &SerializedInput) -> Vec<Vec<usize>> {
        let mut groups = vec![Vec::new(); input.n_columns];
        let mut seps = vec![None; input.n_columns];
        for (i, t) in input.tokens.iter().enumerate() {
            match (t.segment, t.column) {
                (Segment::Header, Some(c)) => groups[c].push(i),
                (Segment::Separator, Some(c)) if t.text == SEP => seps[c] = Some(i),
                _ => {}
            }
        }
        for (g, sep) in groups.iter_mut().zip(seps) {
            if g.is_empty() {
                g.push(sep.expect("every column block is closed by a separator"));
            }
        }
        groups
    }

    fn encode_graph(&self, tape: &mut Tape<'_>, input: &SerializedInput, mut rng: Option<&mut ChaCha8Rng>) -> Result<(Var, Var, Var)> {
        let c = &self.config;
        let n = input.len();
        if n > c.max_positions {
            return Err(Error::Budget {
                needed: n,
                budget: c.max_positions,
            });
        }
        let nq = input.question_range().len();
        if nq == 0 {
            return Err(Error::Config("question has no tokens".into()));
        }
        let ids: Vec<usize> = input.tokens.iter().map(|t| self.vocab.id(&t.text)).collect();
        let positions: Vec<usize> = (0..n).collect();
        let segments: Vec<usize> = input.tokens.iter().map(|t| t.segment.index()).collect();
        let tok = tape.gather(self.pid("emb.tok"), &ids);
        let pos = tape.gather(self.pid("emb.pos"), &positions);
        let seg = tape.gather(self.pid("emb.seg"), &segments);
        let mut x = tape.add(tok, pos);
        x = tape.add(x, seg);
        if c.column_embeddings {
            let cols: Vec<usize> = input
                .tokens
                .iter()
                .map(|t| t.column.map_or(0, |col| 1 + col % c.max_columns))
                .collect();
            let col = tape.gather(self.pid("emb.col"), &cols);
            x = tape.add(x, col);
        }
        if c.match_features {
            let flags = match_flags(input);
            let m = tape.gather(self.pid("emb.match"), &flags);
            x = tape.add(x, m);
        }
        x = self.dropout(tape, x, &mut rng);

        let inv_sqrt = 1.0 / (c.head_dim() as f64).sqrt();
        for l in 0..c.n_layers {
            let g = self.p(tape, &format!("enc.{l}.ln1.g"));
            let b = self.p(tape, &format!("enc.{l}.ln1.b"));
            let h = tape.layer_norm(x, g, b);
            let mut attn: Option<Var> = None;
            for head in 0..c.n_heads {
                let wq = self.p(tape, &format!("enc.{l}.att.{head}.q"));
                let wk = self.p(tape, &format!("enc.{l}.att.{head}.k"));
                let wv = self.p(tape, &format!("enc.{l}.att.{head}.v"));
                let wo = self.p(tape, &format!("enc.{l}.att.{head}.o"));
                let q = tape.matmul(h, wq);
                let k = tape.matmul(h, wk);
                let v = tape.matmul(h, wv);
                let s = tape.matmul_t(q, k);
                let s = tape.scale(s, inv_sqrt);
                let a = tape.softmax_rows(s);
                let o = tape.matmul(a, v);
                let o = tape.matmul(o, wo);
                attn = Some(match attn {
                    Some(acc) => tape.add(acc, o),
                    None => o,
                });
            }
            let bo = self.p(tape, &format!("enc.{l}.att.bo"));
            let attn = tape.add_row(attn.expect("at least one head"), bo);
            let attn = self.dropout(tape, attn, &mut rng);
            x = tape.add(x, attn);

            let g = self.p(tape, &format!("enc.{l}.ln2.g"));
            let b = self.p(tape, &format!("enc.{l}.ln2.b"));
            let h = tape.layer_norm(x, g, b);
            let w1 = self.p(tape, &format!("enc.{l}.ff.w1"));
            let b1 = self.p(tape, &format!("enc.{l}.ff.b1"));
            let w2 = self.p(tape, &format!("enc.{l}.ff.w2"));
            let b2 = self.p(tape, &format!("enc.{l}.ff.b2"));
            let f = tape.matmul(h, w1);
            let f = tape.add_row(f, b1);
            let f = tape.gelu(f);
            let f = tape.matmul(f, w2);
            let f = tape.add_row(f, b2);
            let f = self.dropout(tape, f, &mut rng);
            x = tape.add(x, f);
        }
        let g = self.p(tape, "enc.lnf.g");
        let b = self.p(tape, "enc.lnf.b");
        let tokens = tape.layer_norm(x, g, b);
        let headers = tape.mean_row_groups(tokens, Self::header_groups(input));
        let question = tape.slice_rows(tokens, input.question_range());
        Ok((tokens, headers, question))
    }

    /// Context vectors `softmax((H W) Qᵀ) Q`, one row per column.
    fn column_context(&self, tape: &mut Tape<'_>, head: &str, headers: Var, question: Var) -> Var {
        let w = self.p(tape, &format!("{head}.att"));
        let hw = tape.matmul(headers, w);
        let scores = tape.matmul_t(hw, question);
        let weights = tape.softmax_rows(scores);
        tape.matmul(weights, question)
    }

    /// `tanh(H Wh + ctx Wc + b)` for a head.
    fn column_features(&self, tape: &mut Tape<'_>, head: &str, headers: Var, context: Var) -> Var {
        let wh = self.p(tape, &format!("{head}.wh"));
        let wc = self.p(tape, &format!("{head}.wc"));
        let b = self.p(tape, &format!("{head}.b"));
        let a = tape.matmul(headers, wh);
        let c = tape.matmul(context, wc);
        let s = tape.add(a, c);
        let s = tape.add_row(s, b);
        tape.tanh(s)
    }

    /// Records encoder and heads on `tape`. The aggregation head is
    /// conditioned on `agg_column` when given (teacher forcing), otherwise on
    /// the argmax of the select head.
    pub fn forward(
        &self,
        tape: &mut Tape<'_>,
        input: &SerializedInput,
        agg_column: Option<usize>,
        rng: Option<&mut ChaCha8Rng>,
    ) -> Result<Graph> {
        let (tokens, headers, question) = self.encode_graph(tape, input, rng)?;

        let ctx = self.column_context(tape, "sel", headers, question);
        let feat = self.column_features(tape, "sel", headers, ctx);
        let u = self.p(tape, "sel.u");
        let sel = tape.matmul_t(u, feat);

        let agg_column = match agg_column {
            Some(c) if c < input.n_columns => c,
            Some(c) => {
                return Err(Error::InvalidSketch(format!(
                    "select column {c} out of range for {} columns",
                    input.n_columns
                )))
            }
            None => argmax(tape.value(sel).row(0).iter().copied()),
        };
        let ctx = self.column_context(tape, "agg", headers, question);
        let ctx_sel = tape.select_rows(ctx, &[agg_column]);
        let h_sel = tape.select_rows(headers, &[agg_column]);
        let feat = self.column_features(tape, "agg", h_sel, ctx_sel);
        let out = self.p(tape, "agg.out");
        let bout = self.p(tape, "agg.bout");
        let agg = tape.matmul(feat, out);
        let agg = tape.add_row(agg, bout);

        let u = self.p(tape, "wnum.u");
        let scores = tape.matmul_t(u, question);
        let weights = tape.softmax_rows(scores);
        let summary = tape.matmul(weights, question);
        let cls = tape.select_rows(tokens, &[0]);
        let ws = self.p(tape, "wnum.ws");
        let wcls = self.p(tape, "wnum.wcls");
        let b = self.p(tape, "wnum.b");
        let a = tape.matmul(summary, ws);
        let c = tape.matmul(cls, wcls);
        let s = tape.add(a, c);
        let s = tape.add_row(s, b);
        let s = tape.tanh(s);
        let out = self.p(tape, "wnum.out");
        let bout = self.p(tape, "wnum.bout");
        let wnum = tape.matmul(s, out);
        let wnum = tape.add_row(wnum, bout);

        let ctx = self.column_context(tape, "wcol", headers, question);
        let feat = self.column_features(tape, "wcol", headers, ctx);
        let u = self.p(tape, "wcol.u");
        let wcol = tape.matmul_t(u, feat);

        let ctx = self.column_context(tape, "wop", headers, question);
        let feat = self.column_features(tape, "wop", headers, ctx);
        let out = self.p(tape, "wop.out");
        let bout = self.p(tape, "wop.bout");
        let wop = tape.matmul(feat, out);
        let wop = tape.add_row(wop, bout);

        let ctx = self.column_context(tape, "wval", headers, question);
        let feat = self.column_features(tape, "wval", headers, ctx);
        let ws = self.p(tape, "wval.ws");
        let we = self.p(tape, "wval.we");
        let fs = tape.matmul(feat, ws);
        let wstart = tape.matmul_t(fs, question);
        let fe = tape.matmul(feat, we);
        let wend = tape.matmul_t(fe, question);

        Ok(Graph {
            tokens,
            headers,
            question,
            sel,
            agg,
            agg_column,
            wnum,
            wcol,
            wop,
            wstart,
            wend,
        })
    }

    pub fn encode(&self, input: &SerializedInput) -> Result<EncoderOutput> {
        let mut tape = Tape::new(&self.params);
        let (tokens, headers, question) = self.encode_graph(&mut tape, input, None)?;
        Ok(EncoderOutput {
            tokens: tape.value(tokens).clone(),
            headers: tape.value(headers).clone(),
            question: tape.value(question).clone(),
        })
    }

    /// Head scores at inference: no dropout, aggregation conditioned on the
    /// predicted select column.
    pub fn predict_heads(&self, input: &SerializedInput) -> Result<HeadOutputs> {
        let mut tape = Tape::new(&self.params);
        let g = self.forward(&mut tape, input, None, None)?;
        Ok(head_outputs(&tape, &g))
    }
}

pub fn head_outputs(tape: &Tape<'_>, g: &Graph) -> HeadOutputs {
    HeadOutputs {
        sel_logits: tape.value(g.sel).iter().copied().collect(),
        agg_logits: tape.value(g.agg).iter().copied().collect(),
        agg_column: g.agg_column,
        wnum_logits: tape.value(g.wnum).iter().copied().collect(),
        wcol_scores: tape.value(g.wcol).iter().map(|&x| sigmoid(x)).collect(),
        wop_logits: tape.value(g.wop).clone(),
        wval_start_logits: tape.value(g.wstart).clone(),
        wval_end_logits: tape.value(g.wend).clone(),
    }
}

/// Index of the largest value; the lowest index wins ties.
/// Exact-match flag per token: 1 for a question token whose text occurs
/// among the sample tokens, 2 for a sample token whose text occurs in the
/// question, 0 otherwise.
pub fn match_flags(input: &SerializedInput) -> Vec<usize> {
    use std::collections::HashSet;
    let lower = |t: &str| t.to_lowercase();
    let of = |seg: Segment| -> HashSet<String> {
        input
            .tokens
            .iter()
            .filter(|t| t.segment == seg)
            .map(|t| lower(&t.text))
            .collect()
    };
    let (question, samples) = (of(Segment::Question), of(Segment::Sample));
    input
        .tokens
        .iter()
        .map(|t| match t.segment {
            Segment::Question if samples.contains(&lower(&t.text)) => 1,
            Segment::Sample if question.contains(&lower(&t.text)) => 2,
            _ => 0,
        })
        .collect()
}

pub fn argmax(values: impl IntoIterator<Item = f64>) -> usize {
    let mut best = 0;
    let mut best_v = f64::NEG_INFINITY;
    for (i, v) in values.into_iter().enumerate() {
        if v > best_v {
            best = i;
            best_v = v;
        }
    }
    best
}

pub fn agg_from_logits(logits: &[f64]) -> AggOp {
    AggOp::from_index(argmax(logits.iter().copied())).expect("six aggregation logits")
}
