use ndarray::Array2;

use crate::model::{Grads, ParamStore};

/// Adaptive-moment optimizer with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<Array2<f64>>,
    v: Vec<Array2<f64>>,
    t: i32,
}

impl Adam {
    pub fn new(params: &ParamStore, beta1: f64, beta2: f64, eps: f64) -> Self {
        let zeros = || (0..params.len()).map(|i| Array2::zeros(params.tensor(i).raw_dim())).collect();
        Adam {
            beta1,
            beta2,
            eps,
            m: zeros(),
            v: zeros(),
            t: 0,
        }
    }

    pub fn steps(&self) -> i32 {
        self.t
    }

    /// One update; `lr` gives the learning rate of each parameter by index.
    pub fn step(&mut self, params: &mut ParamStore, grads: &Grads, lr: impl Fn(usize) -> f64) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
        for i in 0..params.len() {
            let rate = lr(i);
            let g = grads.tensor(i);
            let m = &mut self.m[i];
            let v = &mut self.v[i];
            m.zip_mut_with(g, |m, &g| *m = b1 * *m + (1.0 - b1) * g);
            v.zip_mut_with(g, |v, &g| *v = b2 * *v + (1.0 - b2) * g * g);
            if rate == 0.0 {
                continue;
            }
            let p = params.tensor_mut(i);
            ndarray::Zip::from(p).and(&*m).and(&*v).for_each(|p, &m, &v| {
                *p -= rate * (m / c1) / ((v / c2).sqrt() + eps);
            });
        }
    }
}

/// Rescales `grads` so their global norm is at most `max_norm`; returns the
/// norm before clipping.
pub fn clip_global_norm(grads: &mut Grads, max_norm: f64) -> f64 {
    let norm = grads.global_norm();
    if max_norm > 0.0 && norm > max_norm {
        grads.scale(max_norm / norm);
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use ndarray::array;

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut p = ParamStore::default();
        p.insert("w", array![[1.0, -2.0]]);
        let mut g = Grads::zeros_like(&p);
        g.add(0, &array![[0.5, -3.0]]);
        let mut adam = Adam::new(&p, 0.9, 0.999, 1e-8);
        adam.step(&mut p, &g, |_| 0.1);
        assert_relative_eq!(p.tensor(0)[[0, 0]], 0.9, epsilon = 1e-6);
        assert_relative_eq!(p.tensor(0)[[0, 1]], -1.9, epsilon = 1e-6);
    }

    #[test]
    fn zero_rate_leaves_parameters() {
        let mut p = ParamStore::default();
        p.insert("w", array![[1.0, -2.0]]);
        let before = p.clone();
        let mut g = Grads::zeros_like(&p);
        g.add(0, &array![[0.5, -3.0]]);
        let mut adam = Adam::new(&p, 0.9, 0.999, 1e-8);
        adam.step(&mut p, &g, |_| 0.0);
        assert_eq!(p, before);
    }

    #[test]
    fn clipping_caps_norm() {
        let mut p = ParamStore::default();
        p.insert("w", array![[0.0, 0.0]]);
        let mut g = Grads::zeros_like(&p);
        g.add(0, &array![[3.0, 4.0]]);
        assert_relative_eq!(clip_global_norm(&mut g, 1.0), 5.0);
        assert_relative_eq!(g.global_norm(), 1.0, epsilon = 1e-12);
    }
}
