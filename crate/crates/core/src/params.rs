//! Named parameter storage shared by every model in the crate.

use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::autodiff::Gradients;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a parameter. Names must be unique; they double as checkpoint keys.
    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor) -> Result<ParamId> {
        let name = name.into();
        if self.names.contains(&name) {
            return Err(Error::Config(alloc::format!("duplicate parameter name `{name}`")));
        }
        self.names.push(name);
        self.tensors.push(tensor.with_requires_grad(true));
        Ok(ParamId(self.tensors.len() - 1))
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    /// All parameter ids whose name starts with `prefix`.
    pub fn ids_with_prefix(&self, prefix: &str) -> Vec<ParamId> {
        self.names
            .iter()
            .enumerate()
            .filter(|(_, n)| n.starts_with(prefix))
            .map(|(i, _)| ParamId(i))
            .collect()
    }

    pub fn accumulate(&mut self, grads: &Gradients) -> Result<()> {
        for (id, g) in grads.param_grads() {
            self.tensors[id.0].accumulate_grad(g)?;
        }
        Ok(())
    }

    pub fn zero_grads(&mut self) {
        self.tensors.iter_mut().for_each(Tensor::zero_grad);
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    /// Snapshot as `(name, shape, values)` triples in registration order.
    pub fn export(&self) -> Vec<(String, Vec<usize>, Vec<f64>)> {
        self.names
            .iter()
            .zip(&self.tensors)
            .map(|(n, t)| (n.to_string(), t.shape().to_vec(), t.data().to_vec()))
            .collect()
    }

    /// Overwrites values of an existing parameter, checking the shape.
    pub fn assign(&mut self, name: &str, shape: &[usize], values: &[f64]) -> Result<()> {
        let id = self
            .find(name)
            .ok_or_else(|| Error::Config(alloc::format!("unknown parameter `{name}`")))?;
        let t = &mut self.tensors[id.0];
        if t.shape() != shape {
            return Err(Error::shape("assign", t.shape(), shape));
        }
        t.data_mut().copy_from_slice(values);
        Ok(())
    }
}
