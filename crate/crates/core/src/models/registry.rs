use indexmap::IndexMap;
use sha2::{Digest, Sha256};

use crate::autograd::{Gradients, Tape, Tensor, Var};
use crate::error::{PinsError, Result};

/// One named parameter with its pruning metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamEntry {
    pub tensor: Tensor,
    pub prunable: bool,
    pub layer_index: usize,
    /// `true` = kept. Always all-true for non-prunable entries.
    pub mask: Vec<bool>,
}

impl ParamEntry {
    pub fn kept(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }
}

/// Ordered, name-unique parameter store shared by the model zoo and the
/// pruning engine.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamRegistry {
    entries: IndexMap<String, ParamEntry>,
}

impl ParamRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(
        &mut self,
        name: impl Into<String>,
        tensor: Tensor,
        prunable: bool,
        layer_index: usize,
    ) -> Result<()> {
        let name = name.into();
        if self.entries.contains_key(&name) {
            return Err(PinsError::Config(format!("duplicate parameter name {name:?}")));
        }
        let mask = vec![true; tensor.numel()];
        self.entries.insert(
            name,
            ParamEntry {
                tensor,
                prunable,
                layer_index,
                mask,
            },
        );
        Ok(())
    }

    /// Inserts a fully specified entry (used when decoding containers).
    pub fn insert_entry(&mut self, name: impl Into<String>, entry: ParamEntry) -> Result<()> {
        let name = name.into();
        if entry.mask.len() != entry.tensor.numel() {
            return Err(PinsError::State(format!("mask length mismatch for {name}")));
        }
        if self.entries.contains_key(&name) {
            return Err(PinsError::Config(format!("duplicate parameter name {name:?}")));
        }
        self.entries.insert(name, entry);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<&ParamEntry> {
        self.entries.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut ParamEntry> {
        self.entries.get_mut(name)
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.entries.get_index_of(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &ParamEntry)> {
        self.entries.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut ParamEntry)> {
        self.entries.iter_mut()
    }

    pub fn prunable(&self) -> impl Iterator<Item = (&String, &ParamEntry)> {
        self.entries.iter().filter(|(_, e)| e.prunable)
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.entries.keys()
    }

    /// Total number of prunable coordinates, `d`.
    pub fn prunable_count(&self) -> usize {
        self.prunable().map(|(_, e)| e.tensor.numel()).sum()
    }

    /// Number of prunable coordinates currently kept by the masks.
    pub fn kept_count(&self) -> usize {
        self.prunable().map(|(_, e)| e.kept()).sum()
    }

    /// Number of prunable coordinates holding a non-zero value.
    pub fn nonzero_count(&self) -> usize {
        self.prunable()
            .map(|(_, e)| e.tensor.data().iter().filter(|&&v| v != 0.0).count())
            .sum()
    }

    /// Fraction of prunable coordinates kept.
    pub fn density(&self) -> f64 {
        let d = self.prunable_count();
        if d == 0 {
            1.0
        } else {
            self.kept_count() as f64 / d as f64
        }
    }

    pub fn clear_grads(&mut self) {
        for e in self.entries.values_mut() {
            e.tensor.clear_grad();
        }
    }

    /// Registers every entry on `tape`, as differentiable leaves when
    /// `trainable` and as constants otherwise. Returned vars follow registry
    /// order.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> BoundParams {
        let vars = self
            .entries
            .values()
            .map(|e| {
                if trainable {
                    tape.param(&e.tensor)
                } else {
                    tape.constant(&e.tensor)
                }
            })
            .collect();
        BoundParams {
            names: self.entries.keys().cloned().collect(),
            vars,
        }
    }

    /// Copies gradients for bound parameters onto the stored tensors;
    /// unreachable parameters receive zeros.
    pub fn store_grads(&mut self, bound: &BoundParams, grads: &Gradients) -> Result<()> {
        for (name, &var) in bound.names.iter().zip(&bound.vars) {
            let entry = self
                .entries
                .get_mut(name)
                .ok_or_else(|| PinsError::State(format!("unknown parameter {name}")))?;
            entry.tensor.set_grad(grads.to_vec_f32(var))?;
        }
        Ok(())
    }

    /// SHA-256 over prunable names and their packed masks, hex encoded.
    pub fn mask_digest(&self) -> String {
        let mut h = Sha256::new();
        for (name, e) in self.prunable() {
            h.update(name.as_bytes());
            h.update(super::container::pack_bits(&e.mask));
        }
        hex::encode(h.finalize())
    }
}

/// Tape handles for a registry's parameters.
#[derive(Debug, Clone)]
pub struct BoundParams {
    names: Vec<String>,
    vars: Vec<Var>,
}

impl BoundParams {
    pub fn get(&self, name: &str) -> Result<Var> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| self.vars[i])
            .ok_or_else(|| PinsError::State(format!("parameter {name} not bound")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, Var)> {
        self.names.iter().zip(self.vars.iter().copied())
    }
}
