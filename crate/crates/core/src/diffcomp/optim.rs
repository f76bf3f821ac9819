use serde::{Deserialize, Serialize};

use super::{Gradients, ParamStore, Tensor};
use crate::error::{invalid, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum OptimizerKind {
    Sgd,
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl OptimizerKind {
    pub fn adam() -> Self {
        OptimizerKind::Adam { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Per-parameter moment buffers, allocated on first use.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    pub kind: OptimizerKind,
    pub lr: f64,
    step: u64,
    first: Vec<Option<Tensor>>,
    second: Vec<Option<Tensor>>,
}

impl OptimizerState {
    pub fn new(kind: OptimizerKind, lr: f64) -> Self {
        OptimizerState { kind, lr, step: 0, first: Vec::new(), second: Vec::new() }
    }

    pub fn sgd(lr: f64) -> Self {
        Self::new(OptimizerKind::Sgd, lr)
    }

    pub fn adam(lr: f64) -> Self {
        Self::new(OptimizerKind::adam(), lr)
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies one update to every parameter of `params` that `grads` covers.
    pub fn step(&mut self, params: &mut ParamStore, grads: &Gradients) -> Result<()> {
        let updates: Vec<(usize, Tensor)> = grads.params().collect();
        self.step_with(params, &updates)
    }

    /// Applies one update from explicit `(key, gradient)` pairs.
    pub fn step_with(&mut self, params: &mut ParamStore, updates: &[(usize, Tensor)]) -> Result<()> {
        for (k, g) in updates {
            if g.has_non_finite() {
                return Err(Error::Numeric(format!("non-finite gradient for parameter {k}")));
            }
            if params.get(*k).shape() != g.shape() {
                return Err(invalid!("gradient shape {:?} does not match parameter {k}", g.shape()));
            }
        }
        self.step += 1;
        let need = params.len();
        if self.first.len() < need {
            self.first.resize(need, None);
            self.second.resize(need, None);
        }
        for (k, g) in updates {
            let p = params.get_mut(*k).data_mut();
            match self.kind {
                OptimizerKind::Sgd => {
                    p.iter_mut().zip(g.data()).for_each(|(p, g)| *p -= self.lr * g);
                }
                OptimizerKind::Adam { beta1, beta2, eps } => {
                    let m = self.first[*k].get_or_insert_with(|| Tensor::zeros(g.shape())).data_mut();
                    m.iter_mut().zip(g.data()).for_each(|(m, g)| *m = beta1 * *m + (1.0 - beta1) * g);
                    let v = self.second[*k].get_or_insert_with(|| Tensor::zeros(g.shape())).data_mut();
                    v.iter_mut().zip(g.data()).for_each(|(v, g)| *v = beta2 * *v + (1.0 - beta2) * g * g);
                    let bc1 = 1.0 - beta1.powi(self.step as i32);
                    let bc2 = 1.0 - beta2.powi(self.step as i32);
                    let m = self.first[*k].as_ref().unwrap().data();
                    let v = self.second[*k].as_ref().unwrap().data();
                    for ((p, m), v) in p.iter_mut().zip(m).zip(v) {
                        *p -= self.lr * (m / bc1) / ((v / bc2).sqrt() + eps);
                    }
                }
            }
        }
        Ok(())
    }
}
