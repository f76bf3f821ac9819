//! Reverse-mode differentiation over small dense tensors.

mod checkpoint;
mod graph;
mod optim;
mod tensor;

pub use checkpoint::{read_checkpoint, write_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use graph::{hinge, Gradients, Graph, ParamKey, Var};
pub use optim::{OptimizerKind, OptimizerState};
pub use tensor::Tensor;

pub(crate) use graph::softmax_rows;

use crate::error::{invalid, Result};

/// How a stored parameter enters a graph. Frozen parameters are plain
/// inputs, so they receive no parameter gradient and never collide with the
/// keys of another store in the same graph.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Bind {
    #[default]
    Train,
    Frozen,
}

/// Named, ordered parameter tensors.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor) -> ParamKey {
        let name = name.into();
        if let Some(k) = self.key(&name) {
            self.tensors[k] = t;
            return k;
        }
        self.names.push(name);
        self.tensors.push(t);
        self.tensors.len() - 1
    }

    pub fn key(&self, name: &str) -> Option<ParamKey> {
        self.names.iter().position(|n| n == name)
    }

    pub fn get(&self, k: ParamKey) -> &Tensor {
        &self.tensors[k]
    }

    pub fn get_mut(&mut self, k: ParamKey) -> &mut Tensor {
        &mut self.tensors[k]
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor> {
        self.key(name).map(|k| &self.tensors[k])
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    /// Registers parameter `k` in `g`.
    pub fn var(&self, g: &mut Graph, k: ParamKey) -> Var {
        g.param(k, &self.tensors[k])
    }

    pub fn bind(&self, g: &mut Graph, k: ParamKey, bind: Bind) -> Var {
        match bind {
            Bind::Train => self.var(g, k),
            Bind::Frozen => g.input(self.tensors[k].clone()),
        }
    }

    /// Copies values from `other` for every shared name; shapes must agree.
    pub fn load_from(&mut self, other: &ParamStore) -> Result<()> {
        for (name, t) in other.iter() {
            let k = self.key(name).ok_or_else(|| invalid!("unknown parameter {name}"))?;
            if self.tensors[k].shape() != t.shape() {
                return Err(invalid!(
                    "parameter {name}: shape {:?} vs stored {:?}",
                    t.shape(),
                    self.tensors[k].shape()
                ));
            }
            self.tensors[k] = t.clone();
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests;
