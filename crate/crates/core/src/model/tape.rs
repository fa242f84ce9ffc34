//! Reverse-mode automatic differentiation over dense `f64` matrices.
//!
//! A [`Tape`] records one forward computation. Parameters are borrowed from a
//! [`ParamStore`] rather than copied; [`Tape::backward`] accumulates their
//! gradients into a [`Grads`] of matching shapes.

use ndarray::{Array1, Array2, Axis};

use super::params::{Grads, ParamStore};

/// Handle to a node on the tape.
pub type Var = usize;

const LN_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_A: f64 = 0.044_715;

enum Op {
    Const,
    Param(usize),
    Gather { param: usize, rows: Vec<usize> },
    MatMul(Var, Var),
    /// `a · bᵀ`
    MatMulT(Var, Var),
    Add(Var, Var),
    /// `a + b` with `b` a single row broadcast over the rows of `a`.
    AddRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Tanh(Var),
    Gelu(Var),
    SoftmaxRows(Var),
    LayerNorm { x: Var, gain: Var, bias: Var, xhat: Array2<f64>, inv_std: Array1<f64> },
    SelectRows(Var, Vec<usize>),
    MeanRowGroups(Var, Vec<Vec<usize>>),
    Transpose(Var),
    /// Sum over rows of `-log softmax(row)[target]`.
    CrossEntropy { logits: Var, targets: Vec<(usize, usize)>, probs: Array2<f64> },
    /// Sum of binary cross-entropies of a logit row against 0/1 targets.
    BceLogits { logits: Var, targets: Vec<f64> },
}

enum Value {
    Owned(Array2<f64>),
    Param(usize),
}

struct Node {
    value: Value,
    op: Op,
}

pub struct Tape<'a> {
    params: &'a ParamStore,
    nodes: Vec<Node>,
}

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + GELU_A * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

pub fn softmax_row(row: ndarray::ArrayView1<f64>) -> Array1<f64> {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut out = row.mapv(|v| (v - max).exp());
    let z = out.sum();
    out /= z;
    out
}

pub fn softmax_rows(x: &Array2<f64>) -> Array2<f64> {
    let mut out = x.clone();
    for mut row in out.rows_mut() {
        let s = softmax_row(row.view());
        row.assign(&s);
    }
    out
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl<'a> Tape<'a> {
    pub fn new(params: &'a ParamStore) -> Self {
        Tape {
            params,
            nodes: Vec::with_capacity(256),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Array2<f64> {
        match &self.nodes[v].value {
            Value::Owned(a) => a,
            Value::Param(p) => self.params.tensor(*p),
        }
    }

    /// Value of a 1×1 node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.value(v)[[0, 0]]
    }

    fn push(&mut self, value: Array2<f64>, op: Op) -> Var {
        debug_assert!(value.iter().all(|x| !x.is_nan()), "NaN produced on tape");
        self.nodes.push(Node {
            value: Value::Owned(value),
            op,
        });
        self.nodes.len() - 1
    }

    pub fn constant(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Const)
    }

    pub fn param(&mut self, index: usize) -> Var {
        self.nodes.push(Node {
            value: Value::Param(index),
            op: Op::Param(index),
        });
        self.nodes.len() - 1
    }

    /// Rows of a parameter matrix, e.g. an embedding lookup.
    pub fn gather(&mut self, param: usize, rows: &[usize]) -> Var {
        let table = self.params.tensor(param);
        let mut out = Array2::zeros((rows.len(), table.ncols()));
        for (i, &r) in rows.iter().enumerate() {
            out.row_mut(i).assign(&table.row(r));
        }
        self.push(out, Op::Gather { param, rows: rows.to_vec() })
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).dot(self.value(b));
        self.push(v, Op::MatMul(a, b))
    }

    pub fn matmul_t(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).dot(&self.value(b).t());
        self.push(v, Op::MatMulT(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) + self.value(b);
        self.push(v, Op::Add(a, b))
    }

    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        assert_eq!(self.value(row).nrows(), 1, "add_row expects a single row");
        let v = self.value(a) + self.value(row);
        self.push(v, Op::AddRow(a, row))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) * self.value(b);
        self.push(v, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a) * c;
        self.push(v, Op::Scale(a, c))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(f64::tanh);
        self.push(v, Op::Tanh(a))
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(gelu);
        self.push(v, Op::Gelu(a))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let v = softmax_rows(self.value(a));
        self.push(v, Op::SoftmaxRows(a))
    }

    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Var {
        let xv = self.value(x);
        let m = xv.ncols() as f64;
        let mean = xv.mean_axis(Axis(1)).expect("non-empty rows");
        let centered = xv - &mean.view().insert_axis(Axis(1));
        let var = centered.mapv(|c| c * c).sum_axis(Axis(1)) / m;
        let inv_std = var.mapv(|v| 1.0 / (v + LN_EPS).sqrt());
        let xhat = centered * &inv_std.view().insert_axis(Axis(1));
        let out = &xhat * self.value(gain) + self.value(bias);
        self.push(
            out,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            },
        )
    }

    pub fn select_rows(&mut self, a: Var, rows: &[usize]) -> Var {
        let src = self.value(a);
        let mut out = Array2::zeros((rows.len(), src.ncols()));
        for (i, &r) in rows.iter().enumerate() {
            out.row_mut(i).assign(&src.row(r));
        }
        self.push(out, Op::SelectRows(a, rows.to_vec()))
    }

    /// Contiguous rows `range` of `a`.
    pub fn slice_rows(&mut self, a: Var, range: std::ops::Range<usize>) -> Var {
        let rows: Vec<usize> = range.collect();
        self.select_rows(a, &rows)
    }

    /// One output row per group: the mean of the listed rows of `a`.
    pub fn mean_row_groups(&mut self, a: Var, groups: Vec<Vec<usize>>) -> Var {
        let src = self.value(a);
        let mut out = Array2::zeros((groups.len(), src.ncols()));
        for (g, rows) in groups.iter().enumerate() {
            assert!(!rows.is_empty(), "empty pooling group");
            for &r in rows {
                let mut o = out.row_mut(g);
                o += &src.row(r);
            }
            out.row_mut(g).mapv_inplace(|v| v / rows.len() as f64);
        }
        self.push(out, Op::MeanRowGroups(a, groups))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let v = self.value(a).t().to_owned();
        self.push(v, Op::Transpose(a))
    }

    /// Sum of row-wise cross-entropies; `targets` pairs a row with its gold
    /// index.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[(usize, usize)]) -> Var {
        let lv = self.value(logits);
        let mut probs = Array2::zeros((targets.len(), lv.ncols()));
        let mut loss = 0.0;
        for (i, &(row, t)) in targets.iter().enumerate() {
            let r = lv.row(row);
            let max = r.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + r.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            loss += lse - r[t];
            probs.row_mut(i).assign(&r.mapv(|v| (v - lse).exp()));
        }
        self.push(
            Array2::from_elem((1, 1), loss),
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
            },
        )
    }

    /// Binary cross-entropy of a 1×n logit row.
    pub fn bce_logits(&mut self, logits: Var, targets: &[f64]) -> Var {
        let lv = self.value(logits);
        assert_eq!(lv.len(), targets.len());
        let loss: f64 = lv.iter().zip(targets).map(|(&x, &t)| softplus(x) - t * x).sum();
        self.push(
            Array2::from_elem((1, 1), loss),
            Op::BceLogits {
                logits,
                targets: targets.to_vec(),
            },
        )
    }

    /// Sum of 1×1 nodes.
    pub fn sum_scalars(&mut self, vars: &[Var]) -> Var {
        let mut iter = vars.iter();
        let mut acc = *iter.next().expect("at least one term");
        for &v in iter {
            acc = self.add(acc, v);
        }
        acc
    }

    /// Back-propagates from the 1×1 node `root`, adding parameter gradients
    /// into `grads`.
    pub fn backward(&self, root: Var, grads: &mut Grads) {
        let mut g: Vec<Option<Array2<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        g[root] = Some(Array2::ones((1, 1)));
        fn acc(slot: &mut Option<Array2<f64>>, d: Array2<f64>) {
            match slot {
                Some(s) => *s += &d,
                None => *slot = Some(d),
            }
        }
        for i in (0..=root).rev() {
            let Some(dy) = g[i].take() else { continue };
            match &self.nodes[i].op {
                Op::Const => {}
                Op::Param(p) => grads.add(*p, &dy),
                Op::Gather { param, rows } => grads.add_rows(*param, rows, &dy),
                Op::MatMul(a, b) => {
                    let da = dy.dot(&self.value(*b).t());
                    let db = self.value(*a).t().dot(&dy);
                    acc(&mut g[*a], da);
                    acc(&mut g[*b], db);
                }
                Op::MatMulT(a, b) => {
                    let da = dy.dot(self.value(*b));
                    let db = dy.t().dot(self.value(*a));
                    acc(&mut g[*a], da);
                    acc(&mut g[*b], db);
                }
                Op::Add(a, b) => {
                    acc(&mut g[*b], dy.clone());
                    acc(&mut g[*a], dy);
                }
                Op::AddRow(a, row) => {
                    acc(&mut g[*row], dy.sum_axis(Axis(0)).insert_axis(Axis(0)));
                    acc(&mut g[*a], dy);
                }
                Op::Mul(a, b) => {
                    let da = &dy * self.value(*b);
                    let db = &dy * self.value(*a);
                    acc(&mut g[*a], da);
                    acc(&mut g[*b], db);
                }
                Op::Scale(a, c) => acc(&mut g[*a], dy * *c),
                Op::Tanh(a) => {
                    let y = self.value(i);
                    let mut d = dy;
                    d.zip_mut_with(y, |d, &y| *d *= 1.0 - y * y);
                    acc(&mut g[*a], d);
                }
                Op::Gelu(a) => {
                    let mut d = dy;
                    d.zip_mut_with(self.value(*a), |d, &x| *d *= gelu_grad(x));
                    acc(&mut g[*a], d);
                }
                Op::SoftmaxRows(a) => {
                    let y = self.value(i);
                    let dot = (&dy * y).sum_axis(Axis(1)).insert_axis(Axis(1));
                    let d = y * &(dy - &dot);
                    acc(&mut g[*a], d);
                }
                Op::LayerNorm {
                    x,
                    gain,
                    bias,
                    xhat,
                    inv_std,
                } => {
                    acc(&mut g[*bias], dy.sum_axis(Axis(0)).insert_axis(Axis(0)));
                    acc(&mut g[*gain], (&dy * xhat).sum_axis(Axis(0)).insert_axis(Axis(0)));
                    let dxhat = &dy * self.value(*gain);
                    let m = dxhat.ncols() as f64;
                    let sum_d = dxhat.sum_axis(Axis(1)).insert_axis(Axis(1));
                    let sum_dx = (&dxhat * xhat).sum_axis(Axis(1)).insert_axis(Axis(1));
                    let mut dx = dxhat * m - &sum_d - xhat * &sum_dx;
                    dx *= &(inv_std.view().insert_axis(Axis(1)).mapv(|s| s / m));
                    acc(&mut g[*x], dx);
                }
                Op::SelectRows(a, rows) => {
                    let shape = self.value(*a).raw_dim();
                    let mut d = Array2::zeros(shape);
                    for (k, &r) in rows.iter().enumerate() {
                        let mut dr = d.row_mut(r);
                        dr += &dy.row(k);
                    }
                    acc(&mut g[*a], d);
                }
                Op::MeanRowGroups(a, groups) => {
                    let shape = self.value(*a).raw_dim();
                    let mut d = Array2::zeros(shape);
                    for (k, rows) in groups.iter().enumerate() {
                        let share = dy.row(k).mapv(|v| v / rows.len() as f64);
                        for &r in rows {
                            let mut dr = d.row_mut(r);
                            dr += &share;
                        }
                    }
                    acc(&mut g[*a], d);
                }
                Op::Transpose(a) => acc(&mut g[*a], dy.t().to_owned()),
                Op::CrossEntropy { logits, targets, probs } => {
                    let scale = dy[[0, 0]];
                    let shape = self.value(*logits).raw_dim();
                    let mut d = Array2::zeros(shape);
                    for (k, &(row, t)) in targets.iter().enumerate() {
                        let mut dr = d.row_mut(row);
                        dr.scaled_add(scale, &probs.row(k));
                        dr[t] -= scale;
                    }
                    acc(&mut g[*logits], d);
                }
                Op::BceLogits { logits, targets } => {
                    let scale = dy[[0, 0]];
                    let lv = self.value(*logits);
                    let mut d = Array2::zeros(lv.raw_dim());
                    for ((dv, &x), &t) in d.iter_mut().zip(lv.iter()).zip(targets) {
                        *dv = scale * (sigmoid(x) - t);
                    }
                    acc(&mut g[*logits], d);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use ndarray::array;

    fn store_with(tensors: Vec<(&str, Array2<f64>)>) -> ParamStore {
        let mut s = ParamStore::default();
        for (n, t) in tensors {
            s.insert(n, t);
        }
        s
    }

    #[test]
    fn softmax_rows_normalize() {
        let x = array![[1.0, 2.0, 3.0], [1000.0, 1000.0, -1000.0]];
        let y = softmax_rows(&x);
        for r in y.rows() {
            assert_relative_eq!(r.sum(), 1.0, epsilon = 1e-12);
        }
        assert_relative_eq!(y[[1, 0]], 0.5, epsilon = 1e-12);
    }

    #[test]
    fn uniform_cross_entropy_is_log_n() {
        let store = ParamStore::default();
        let mut t = Tape::new(&store);
        let x = t.constant(Array2::zeros((1, 4)));
        let l = t.cross_entropy(x, &[(0, 2)]);
        assert_relative_eq!(t.scalar(l), 4f64.ln(), epsilon = 1e-12);
    }

    #[test]
    fn bce_matches_definition() {
        let store = ParamStore::default();
        let mut t = Tape::new(&store);
        let x = t.constant(array![[0.3, -2.0]]);
        let l = t.bce_logits(x, &[1.0, 0.0]);
        let want = -(sigmoid(0.3)).ln() - (1.0 - sigmoid(-2.0)).ln();
        assert_relative_eq!(t.scalar(l), want, epsilon = 1e-12);
    }

    #[test]
    fn matmul_gradient() {
        let store = store_with(vec![("a", array![[1.0, 2.0], [3.0, 4.0]]), ("b", array![[0.5], [-1.0]])]);
        let mut t = Tape::new(&store);
        let a = t.param(0);
        let b = t.param(1);
        let y = t.matmul(a, b);
        let yt = t.transpose(y);
        let l = t.bce_logits(yt, &[1.0, 0.0]);
        let mut g = Grads::zeros_like(&store);
        t.backward(l, &mut g);
        // dl/dy = sigmoid(y) - target
        let y0 = -1.5;
        let y1 = -2.5;
        let d0 = sigmoid(y0) - 1.0;
        let d1 = sigmoid(y1);
        assert_relative_eq!(g.tensor(1)[[0, 0]], 1.0 * d0 + 3.0 * d1, epsilon = 1e-12);
        assert_relative_eq!(g.tensor(0)[[1, 1]], -1.0 * d1, epsilon = 1e-12);
    }

    #[test]
    fn gather_scatters_into_rows() {
        let store = store_with(vec![("e", array![[1.0, 0.0], [0.0, 1.0], [2.0, 2.0]])]);
        let mut t = Tape::new(&store);
        let x = t.gather(0, &[2, 2, 0]);
        assert_eq!(t.value(x).row(0).to_vec(), vec![2.0, 2.0]);
        let w = t.constant(array![[1.0], [1.0]]);
        let y = t.matmul(x, w);
        let yt = t.transpose(y);
        let l = t.cross_entropy(yt, &[(0, 0)]);
        let mut g = Grads::zeros_like(&store);
        t.backward(l, &mut g);
        assert_eq!(g.tensor(0).row(1).to_vec(), vec![0.0, 0.0]);
        assert!(g.tensor(0)[[2, 0]] != 0.0);
    }
}
