use std::collections::HashMap;

use ndarray::Array2;

/// Named parameter tensors, in insertion order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Array2<f64>>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn insert(&mut self, name: impl Into<String>, tensor: Array2<f64>) -> usize {
        let name = name.into();
        assert!(!self.index.contains_key(&name), "duplicate parameter {name}");
        self.index.insert(name.clone(), self.names.len());
        self.names.push(name);
        self.tensors.push(tensor);
        self.tensors.len() - 1
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn id(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn name(&self, i: usize) -> &str {
        &self.names[i]
    }

    pub fn tensor(&self, i: usize) -> &Array2<f64> {
        &self.tensors[i]
    }

    pub fn tensor_mut(&mut self, i: usize) -> &mut Array2<f64> {
        &mut self.tensors[i]
    }

    pub fn by_name(&self, name: &str) -> Option<&Array2<f64>> {
        self.id(name).map(|i| &self.tensors[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Array2<f64>)> {
        self.names.iter().map(String::as_str).zip(self.tensors.iter())
    }

    /// Total number of scalars.
    pub fn n_scalars(&self) -> usize {
        self.tensors.iter().map(Array2::len).sum()
    }
}

/// Gradient accumulators shaped like a [`ParamStore`].
#[derive(Debug, Clone)]
pub struct Grads {
    tensors: Vec<Array2<f64>>,
}

impl Grads {
    pub fn zeros_like(store: &ParamStore) -> Self {
        Grads {
            tensors: store.tensors.iter().map(|t| Array2::zeros(t.raw_dim())).collect(),
        }
    }

    pub fn tensor(&self, i: usize) -> &Array2<f64> {
        &self.tensors[i]
    }

    pub fn tensors(&self) -> &[Array2<f64>] {
        &self.tensors
    }

    pub fn add(&mut self, i: usize, d: &Array2<f64>) {
        self.tensors[i] += d;
    }

    pub fn add_rows(&mut self, i: usize, rows: &[usize], d: &Array2<f64>) {
        let t = &mut self.tensors[i];
        for (k, &r) in rows.iter().enumerate() {
            let mut row = t.row_mut(r);
            row += &d.row(k);
        }
    }

    pub fn clear(&mut self) {
        for t in &mut self.tensors {
            t.fill(0.0);
        }
    }

    pub fn scale(&mut self, c: f64) {
        for t in &mut self.tensors {
            *t *= c;
        }
    }

    pub fn global_norm(&self) -> f64 {
        self.tensors.iter().flat_map(|t| t.iter()).map(|v| v * v).sum::<f64>().sqrt()
    }
}
