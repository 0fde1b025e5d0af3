//! Named, ordered parameter tensors and their gradient buffers.

use std::collections::HashMap;

use super::{NumericsError, Tensor};

/// Ordered collection of named parameter tensors. Slot order is the
/// insertion order and is stable, which keeps optimizer state, tape
/// leaves, and checkpoints aligned.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> ParamStore {
        ParamStore::default()
    }

    /// Insert a tensor under `name`, returning its slot.
    ///
    /// Panics on duplicate names: parameter layouts are fixed at
    /// construction time, so a duplicate is a programming error.
    pub fn insert(&mut self, name: &str, tensor: Tensor) -> usize {
        assert!(
            !self.index.contains_key(name),
            "duplicate parameter name {name:?}"
        );
        let slot = self.tensors.len();
        self.index.insert(name.to_string(), slot);
        self.names.push(name.to_string());
        self.tensors.push(tensor);
        slot
    }

    pub fn slot(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.slot(name).map(|s| &self.tensors[s])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        let slot = self.slot(name)?;
        Some(&mut self.tensors[slot])
    }

    pub fn tensor(&self, slot: usize) -> &Tensor {
        &self.tensors[slot]
    }

    pub fn tensor_mut(&mut self, slot: usize) -> &mut Tensor {
        &mut self.tensors[slot]
    }

    pub fn name(&self, slot: usize) -> &str {
        &self.names[slot]
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names
            .iter()
            .map(String::as_str)
            .zip(self.tensors.iter())
    }

    /// Total number of scalar parameters.
    pub fn total_len(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn check_finite(&self, context: &'static str) -> Result<(), NumericsError> {
        for t in &self.tensors {
            t.check_finite(context)?;
        }
        Ok(())
    }

    /// Overwrite every value with a uniform draw from [-scale, scale].
    /// Used by verification harnesses that need well-conditioned random
    /// parameters rather than a training initialization.
    pub fn randomize_uniform(&mut self, rng: &mut super::Rng, scale: f64) {
        for t in &mut self.tensors {
            for v in t.data_mut() {
                *v = rng.uniform(-scale, scale);
            }
        }
    }
}

/// Per-slot gradient buffers aligned with a [`ParamStore`].
#[derive(Clone, Debug)]
pub struct ParamGrads {
    grads: Vec<Vec<f64>>,
}

impl ParamGrads {
    pub fn zeros_like(store: &ParamStore) -> ParamGrads {
        ParamGrads {
            grads: store.tensors.iter().map(|t| vec![0.0; t.len()]).collect(),
        }
    }

    pub fn slot(&self, slot: usize) -> &[f64] {
        &self.grads[slot]
    }

    pub fn slot_mut(&mut self, slot: usize) -> &mut [f64] {
        &mut self.grads[slot]
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &[f64]> {
        self.grads.iter().map(Vec::as_slice)
    }

    pub fn check_finite(&self, context: &'static str) -> Result<(), NumericsError> {
        for g in &self.grads {
            if g.iter().any(|v| !v.is_finite()) {
                return Err(NumericsError::NonFinite { context });
            }
        }
        Ok(())
    }
}
