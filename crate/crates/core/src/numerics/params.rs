use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Handle to one tensor inside a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ParamId {
    pub group: usize,
    pub index: usize,
}

/// Named collection of parameter tensors that is updated (or frozen) as a unit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamGroup<T> {
    pub name: String,
    pub trainable: bool,
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
}

impl<T: Scalar> ParamGroup<T> {
    pub fn new(name: impl Into<String>) -> Self {
        Self { name: name.into(), trainable: true, names: Vec::new(), tensors: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor<T>] {
        &self.tensors
    }

    pub fn tensor(&self, index: usize) -> &Tensor<T> {
        &self.tensors[index]
    }

    pub fn tensor_mut(&mut self, index: usize) -> &mut Tensor<T> {
        &mut self.tensors[index]
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    /// Total number of scalar parameters in the group.
    pub fn numel(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    fn push(&mut self, name: String, tensor: Tensor<T>) -> Result<usize> {
        if self.position(&name).is_some() {
            return Err(Error::config(format!("duplicate parameter {name} in group {}", self.name)));
        }
        self.names.push(name);
        self.tensors.push(tensor);
        Ok(self.tensors.len() - 1)
    }
}

/// All parameter groups of a model.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamStore<T> {
    groups: Vec<ParamGroup<T>>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self { groups: Vec::new() }
    }

    pub fn from_groups(groups: Vec<ParamGroup<T>>) -> Result<Self> {
        let mut store = Self::new();
        for g in groups {
            if store.group_index(&g.name).is_some() {
                return Err(Error::config(format!("duplicate group {}", g.name)));
            }
            store.groups.push(g);
        }
        Ok(store)
    }

    /// Returns the index of the named group, creating it if absent.
    pub fn ensure_group(&mut self, name: &str) -> usize {
        match self.group_index(name) {
            Some(i) => i,
            None => {
                self.groups.push(ParamGroup::new(name));
                self.groups.len() - 1
            }
        }
    }

    pub fn group_index(&self, name: &str) -> Option<usize> {
        self.groups.iter().position(|g| g.name == name)
    }

    pub fn add(&mut self, group: &str, name: &str, tensor: Tensor<T>) -> Result<ParamId> {
        let g = self.ensure_group(group);
        let index = self.groups[g].push(name.to_string(), tensor)?;
        Ok(ParamId { group: g, index })
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.groups[id.group].tensors[id.index]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.groups[id.group].tensors[id.index]
    }

    pub fn groups(&self) -> &[ParamGroup<T>] {
        &self.groups
    }

    pub fn group(&self, index: usize) -> &ParamGroup<T> {
        &self.groups[index]
    }

    pub fn group_mut(&mut self, index: usize) -> &mut ParamGroup<T> {
        &mut self.groups[index]
    }

    pub fn is_trainable(&self, id: ParamId) -> bool {
        self.groups[id.group].trainable
    }

    /// Sets every group's trainable flag to whether its name is in `names`.
    pub fn train_only(&mut self, names: &[&str]) {
        for g in &mut self.groups {
            g.trainable = names.contains(&g.name.as_str());
        }
    }

    pub fn set_all_trainable(&mut self, trainable: bool) {
        for g in &mut self.groups {
            g.trainable = trainable;
        }
    }

    /// Qualified `group.name` label of a parameter.
    pub fn label(&self, id: ParamId) -> String {
        let g = &self.groups[id.group];
        format!("{}.{}", g.name, g.names[id.index])
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        self.groups.iter().enumerate().flat_map(|(group, g)| {
            (0..g.tensors.len()).map(move |index| ParamId { group, index })
        })
    }

    pub fn numel(&self) -> usize {
        self.groups.iter().map(ParamGroup::numel).sum()
    }
}

/// Gradients of one group, aligned one-to-one with the group's tensors.
///
/// A slot is `None` when the loss does not depend on that tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientRecord<T> {
    pub group: usize,
    pub grads: Vec<Option<Tensor<T>>>,
}

/// Result of a backward pass: one record per trainable group the loss reaches.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients<T> {
    pub records: Vec<GradientRecord<T>>,
}

impl<T: Scalar> Gradients<T> {
    /// True when the loss reached no trainable parameter.
    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, id: ParamId) -> Option<&Tensor<T>> {
        self.records
            .iter()
            .find(|r| r.group == id.group)
            .and_then(|r| r.grads.get(id.index))
            .and_then(Option::as_ref)
    }

    pub fn global_norm(&self) -> T {
        self.iter().map(|g| g.data().iter().map(|&x| x * x).sum::<T>()).sum::<T>().sqrt()
    }

    /// Rescales all gradients so their global L2 norm is at most `max_norm`.
    pub fn clip_global_norm(&mut self, max_norm: T) -> T {
        let norm = self.global_norm();
        if norm > max_norm && norm > T::zero() {
            let s = max_norm / norm;
            for r in &mut self.records {
                for g in r.grads.iter_mut().flatten() {
                    for x in g.data_mut() {
                        *x = *x * s;
                    }
                }
            }
        }
        norm
    }

    pub fn is_finite(&self) -> bool {
        self.iter().all(Tensor::is_finite)
    }

    fn iter(&self) -> impl Iterator<Item = &Tensor<T>> {
        self.records.iter().flat_map(|r| r.grads.iter().flatten())
    }
}
