use crate::numcore::{Gradients, Graph, Tensor, Var};

/// Index of a tensor inside a [`TensorStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct TensorId(pub(crate) usize);

impl TensorId {
    /// Position in the store, and in gradient lists returned for it.
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named tensors kept in insertion order. Used for both learnable
/// parameters and normalization running statistics.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TensorStore {
    entries: Vec<(String, Tensor)>,
}

impl TensorStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) -> TensorId {
        let name = name.into();
        debug_assert!(self.find(&name).is_none(), "duplicate tensor name {name}");
        self.entries.push((name, value));
        TensorId(self.entries.len() - 1)
    }

    pub fn find(&self, name: &str) -> Option<TensorId> {
        self.entries.iter().position(|(n, _)| n == name).map(TensorId)
    }

    pub fn get(&self, id: TensorId) -> &Tensor {
        &self.entries[id.0].1
    }

    pub fn get_mut(&mut self, id: TensorId) -> &mut Tensor {
        &mut self.entries[id.0].1
    }

    pub fn name(&self, id: TensorId) -> &str {
        &self.entries[id.0].0
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Tensor> {
        self.entries.iter_mut().map(|(_, t)| t)
    }

    pub fn ids(&self) -> impl Iterator<Item = TensorId> {
        (0..self.entries.len()).map(TensorId)
    }

    /// Total number of scalar values.
    pub fn numel(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.len()).sum()
    }

    pub fn into_entries(self) -> Vec<(String, Tensor)> {
        self.entries
    }

    pub fn from_entries(entries: Vec<(String, Tensor)>) -> Self {
        Self { entries }
    }

    /// Registers every tensor as a trainable leaf of `graph`.
    pub fn bind(&self, graph: &mut Graph) -> Bound {
        Bound { vars: self.entries.iter().map(|(_, t)| graph.param(t.clone())).collect() }
    }
}

/// Graph handles for a bound [`TensorStore`], indexed like the store.
#[derive(Clone, Debug)]
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    pub fn var(&self, id: TensorId) -> Var {
        self.vars[id.0]
    }

    /// Gradients in store order.
    pub fn gradients(&self, grads: &Gradients) -> Vec<Tensor> {
        self.vars.iter().map(|&v| grads.wrt(v)).collect()
    }
}
