use std::collections::HashMap;

use crate::array::NdArray;
use crate::error::{NumError, Result};
use crate::real::Real;
use crate::tape::Tape;

/// Handle to a parameter inside a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
struct Entry<T: Real> {
    name: String,
    value: NdArray<T>,
    decay: bool,
}

/// Named, ordered collection of trainable arrays.
#[derive(Debug, Clone, Default)]
pub struct ParamStore<T: Real = f32> {
    entries: Vec<Entry<T>>,
    by_name: HashMap<String, ParamId>,
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            entries: Vec::new(),
            by_name: HashMap::new(),
        }
    }

    /// Registers a parameter. `decay` controls whether AdamW applies weight
    /// decay to it.
    pub fn add(&mut self, name: impl Into<String>, value: NdArray<T>, decay: bool) -> Result<ParamId> {
        let name = name.into();
        if self.by_name.contains_key(&name) {
            return Err(NumError::Contract(format!("duplicate parameter name `{name}`")));
        }
        let id = ParamId(self.entries.len());
        self.by_name.insert(name.clone(), id);
        self.entries.push(Entry {
            name,
            value: value.with_requires_grad(true),
            decay,
        });
        Ok(id)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn get(&self, id: ParamId) -> &NdArray<T> {
        &self.entries[id.0].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut NdArray<T> {
        &mut self.entries[id.0].value
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    pub fn decays(&self, id: ParamId) -> bool {
        self.entries[id.0].decay
    }

    pub fn lookup(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn num_scalars(&self) -> usize {
        self.entries.iter().map(|e| e.value.numel()).sum()
    }

    pub fn zero_grads(&mut self) {
        self.entries.iter_mut().for_each(|e| e.value.zero_grad());
    }

    /// Adds the gradients recorded on `tape` for parameter leaves into the
    /// stored gradient buffers. Call once per tape after `backward`.
    pub fn accumulate_from(&mut self, tape: &Tape<T>) -> Result<()> {
        for (id, grad) in tape.param_grads() {
            self.entries[id.0].value.accumulate_grad(&grad)?;
        }
        Ok(())
    }

    /// Overwrites a parameter's values, keeping its shape.
    pub fn assign(&mut self, id: ParamId, data: &[T]) -> Result<()> {
        let value = &mut self.entries[id.0].value;
        if value.numel() != data.len() {
            return Err(NumError::Shape {
                op: "assign",
                lhs: value.shape().to_vec(),
                rhs: vec![data.len()],
            });
        }
        value.data_mut().copy_from_slice(data);
        Ok(())
    }

    pub(crate) fn entries_mut(&mut self) -> impl Iterator<Item = (&str, &mut NdArray<T>, bool)> {
        self.entries
            .iter_mut()
            .map(|e| (e.name.as_str(), &mut e.value, e.decay))
    }
}
