use std::collections::HashMap;

use super::{Result, Tensor, TensorError};

/// Handle to an entry of a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamKind {
    /// Updated by the optimizer.
    Trainable,
    /// Running statistics and other state that is saved but not trained.
    Buffer,
}

#[derive(Clone, Debug)]
struct Entry {
    name: String,
    kind: ParamKind,
    tensor: Tensor,
}

/// Named parameters and buffers of a model, in registration order.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    entries: Vec<Entry>,
    by_name: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Register a tensor under a unique name.
    pub fn add(&mut self, name: impl Into<String>, kind: ParamKind, mut tensor: Tensor) -> ParamId {
        let name = name.into();
        assert!(
            !self.by_name.contains_key(&name),
            "duplicate parameter name `{name}`"
        );
        tensor.requires_grad = kind == ParamKind::Trainable;
        let id = self.entries.len();
        self.by_name.insert(name.clone(), id);
        self.entries.push(Entry { name, kind, tensor });
        ParamId(id)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].tensor
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.entries[id.0].tensor
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    pub fn kind(&self, id: ParamId) -> ParamKind {
        self.entries[id.0].kind
    }

    pub fn id_of(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).map(|&i| ParamId(i))
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn trainable_ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        self.ids()
            .filter(|&id| self.entries[id.0].kind == ParamKind::Trainable)
    }

    /// Total scalar count of trainable parameters.
    pub fn num_trainable(&self) -> usize {
        self.trainable_ids().map(|id| self.get(id).numel()).sum()
    }

    pub fn zero_grads(&mut self) {
        for e in &mut self.entries {
            if e.kind == ParamKind::Trainable {
                e.tensor.zero_grad();
            }
        }
    }

    /// `(name, tensor)` pairs in registration order, for checkpointing.
    pub fn named_tensors(&self) -> Vec<(String, Tensor)> {
        self.entries
            .iter()
            .map(|e| {
                let mut t = e.tensor.clone();
                t.grad = None;
                (e.name.clone(), t)
            })
            .collect()
    }

    /// Overwrite values from named tensors. Every entry must be present with
    /// a matching shape; extra names are rejected.
    pub fn load_named(&mut self, tensors: &[(String, Tensor)]) -> Result<()> {
        if tensors.len() != self.entries.len() {
            return Err(TensorError::Checkpoint(format!(
                "expected {} tensors, found {}",
                self.entries.len(),
                tensors.len()
            )));
        }
        for (name, t) in tensors {
            let id = self
                .id_of(name)
                .ok_or_else(|| TensorError::Checkpoint(format!("unknown tensor `{name}`")))?;
            let dst = &mut self.entries[id.0].tensor;
            if dst.shape() != t.shape() {
                return Err(TensorError::Checkpoint(format!(
                    "shape mismatch for `{name}`: {:?} vs {:?}",
                    dst.shape(),
                    t.shape()
                )));
            }
            dst.data_mut().copy_from_slice(t.data());
        }
        Ok(())
    }
}
