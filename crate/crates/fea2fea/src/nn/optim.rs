//! Adam optimizer over a [`ParamStore`].
//!
//! The optimizer itself applies no weight decay; the training loop folds
//! L2 decay into the gradients before stepping, so a zero gradient always
//! leaves a parameter untouched.

use crate::nn::params::{Binder, ParamStore};
use crate::nn::tape::Grads;

pub const DEFAULT_LR: f64 = 0.01;

pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u32,
}

impl Adam {
    pub fn new(store: &ParamStore, lr: f64) -> Self {
        let sizes: Vec<usize> = (0..store.len()).map(|i| store.get(store.id_at(i)).len()).collect();
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: sizes.iter().map(|&s| vec![0.0; s]).collect(),
            v: sizes.iter().map(|&s| vec![0.0; s]).collect(),
            t: 0,
        }
    }

    /// One update using the gradients pulled through the binder pairs.
    /// `weight_decay`, when non-zero, adds wd·param to each gradient first.
    pub fn step(&mut self, store: &mut ParamStore, binder: &Binder, grads: &Grads, weight_decay: f64) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for &(pid, var) in binder.pairs() {
            let idx = store.index(pid);
            let g = grads.get(var);
            let param = store.get_mut(pid);
            let (m, v) = (&mut self.m[idx], &mut self.v[idx]);
            debug_assert_eq!(g.len(), param.len());
            for (k, p) in param.data_mut().iter_mut().enumerate() {
                let grad = g[k] + weight_decay * *p;
                m[k] = self.beta1 * m[k] + (1.0 - self.beta1) * grad;
                v[k] = self.beta2 * v[k] + (1.0 - self.beta2) * grad * grad;
                let mhat = m[k] / bc1;
                let vhat = v[k] / bc2;
                *p -= self.lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
    }
}
