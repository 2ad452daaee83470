use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Handle to a tensor in a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Entry {
    name: String,
    value: Tensor,
    trainable: bool,
}

/// Named tensors of a network, in registration order. Buffers (running
/// statistics) live alongside the learnable parameters but are not trained.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    entries: Vec<Entry>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    fn insert(&mut self, name: &str, value: Tensor, trainable: bool) -> Result<ParamId> {
        if self.index.contains_key(name) {
            return Err(Error::arg(format!("duplicate parameter name {name}")));
        }
        let id = self.entries.len();
        self.index.insert(name.to_string(), id);
        self.entries.push(Entry { name: name.to_string(), value, trainable });
        Ok(ParamId(id))
    }

    pub fn add_param(&mut self, name: &str, value: Tensor) -> Result<ParamId> {
        self.insert(name, value, true)
    }

    pub fn add_buffer(&mut self, name: &str, value: Tensor) -> Result<ParamId> {
        self.insert(name, value, false)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.entries[id.0].value
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    pub fn is_trainable(&self, id: ParamId) -> bool {
        self.entries[id.0].trainable
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).map(|&i| ParamId(i))
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Tensor)> {
        self.entries.iter().enumerate().map(|(i, e)| (ParamId(i), &e.value))
    }

    pub fn trainable_ids(&self) -> Vec<ParamId> {
        self.ids().filter(|&id| self.is_trainable(id)).collect()
    }

    /// Number of learnable scalars.
    pub fn param_count(&self) -> usize {
        self.entries.iter().filter(|e| e.trainable).map(|e| e.value.len()).sum()
    }

    /// Replace a tensor, keeping its shape.
    pub fn set(&mut self, id: ParamId, value: Tensor) -> Result<()> {
        let e = &mut self.entries[id.0];
        if e.value.shape() != value.shape() {
            return Err(Error::arg(format!(
                "{}: shape {:?} does not match {:?}",
                e.name,
                value.shape(),
                e.value.shape()
            )));
        }
        e.value = value;
        Ok(())
    }

    /// Round every stored value to the nearest `f32`.
    pub fn round_to_f32(&mut self) {
        for e in &mut self.entries {
            for v in e.value.data_mut() {
                *v = *v as f32 as f64;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts_only_trainable() {
        let mut s = ParamStore::new();
        s.add_param("w", Tensor::zeros(&[2, 2])).unwrap();
        s.add_param("b", Tensor::zeros(&[2])).unwrap();
        s.add_buffer("rm", Tensor::zeros(&[2])).unwrap();
        assert_eq!(s.param_count(), 6);
        assert_eq!(s.trainable_ids().len(), 2);
        assert!(s.add_param("w", Tensor::zeros(&[1])).is_err());
        assert_eq!(s.name(s.find("rm").unwrap()), "rm");
    }
}
