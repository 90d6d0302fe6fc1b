//! First-order optimizers over a [`ParamStore`].

use serde::{Deserialize, Serialize};

use super::{Gradients, Matrix, ParamId, ParamStore};

/// Adagrad with the accumulator initialized to `initial_accumulator`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Adagrad {
    pub lr: f64,
    pub eps: f64,
    accum: Vec<Matrix>,
}

impl Adagrad {
    pub fn new(store: &ParamStore, lr: f64, initial_accumulator: f64) -> Self {
        Adagrad {
            lr,
            eps: 1e-10,
            accum: store
                .ids()
                .map(|id| {
                    let m = store.get(id);
                    Matrix::filled(m.rows(), m.cols(), initial_accumulator)
                })
                .collect(),
        }
    }

    pub fn step(&mut self, store: &mut ParamStore, grads: &Gradients) {
        for (i, acc) in self.accum.iter_mut().enumerate() {
            let id = ParamId(i);
            let g = grads.get(id);
            let p = store.get_mut(id);
            for ((w, a), gi) in p
                .as_mut_slice()
                .iter_mut()
                .zip(acc.as_mut_slice())
                .zip(g.as_slice())
            {
                *a += gi * gi;
                *w -= self.lr * gi / (a.sqrt() + self.eps);
            }
        }
    }
}

/// Adam with bias correction.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    m: Vec<Matrix>,
    v: Vec<Matrix>,
    frozen: Vec<bool>,
}

impl Adam {
    pub fn new(store: &ParamStore, lr: f64) -> Self {
        let zeros: Vec<Matrix> = store
            .ids()
            .map(|id| {
                let m = store.get(id);
                Matrix::zeros(m.rows(), m.cols())
            })
            .collect();
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: zeros.clone(),
            v: zeros,
            frozen: vec![false; store.len()],
        }
    }

    /// Excludes a parameter from updates.
    pub fn freeze(&mut self, id: ParamId) {
        self.frozen[id.0] = true;
    }

    pub fn step(&mut self, store: &mut ParamStore, grads: &Gradients) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..self.m.len() {
            if self.frozen[i] {
                continue;
            }
            let id = ParamId(i);
            let g = grads.get(id).as_slice();
            let p = store.get_mut(id).as_mut_slice();
            let m = self.m[i].as_mut_slice();
            let v = self.v[i].as_mut_slice();
            for k in 0..p.len() {
                m[k] = self.beta1 * m[k] + (1.0 - self.beta1) * g[k];
                v[k] = self.beta2 * v[k] + (1.0 - self.beta2) * g[k] * g[k];
                let mhat = m[k] / bc1;
                let vhat = v[k] / bc2;
                p[k] -= self.lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
    }
}
