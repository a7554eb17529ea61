use std::collections::HashMap;

use super::{Matrix, Tape, Var};
use crate::error::{Error, Result};

#[derive(Clone, Debug)]
struct Entry {
    name: String,
    value: Matrix,
    decay: bool,
    frozen: bool,
}

/// Named trainable matrices in insertion order.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    entries: Vec<Entry>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a parameter. `decay` selects whether weight decay applies to it.
    pub fn insert(&mut self, name: impl Into<String>, value: Matrix, decay: bool) -> Result<()> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::InvalidArgument(format!("duplicate parameter name {name}")));
        }
        self.index.insert(name.clone(), self.entries.len());
        self.entries.push(Entry {
            name,
            value,
            decay,
            frozen: false,
        });
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn contains(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.name.as_str())
    }

    pub fn name(&self, i: usize) -> &str {
        &self.entries[i].name
    }

    pub fn get(&self, name: &str) -> Option<&Matrix> {
        self.index_of(name).map(|i| &self.entries[i].value)
    }

    /// Panicking lookup for names the caller registered itself.
    pub fn expect(&self, name: &str) -> &Matrix {
        self.get(name).unwrap_or_else(|| panic!("unknown parameter {name}"))
    }

    pub fn value(&self, i: usize) -> &Matrix {
        &self.entries[i].value
    }

    pub fn value_mut(&mut self, i: usize) -> &mut Matrix {
        &mut self.entries[i].value
    }

    pub fn set(&mut self, name: &str, value: Matrix) -> Result<()> {
        let i = self
            .index_of(name)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown parameter {name}")))?;
        if self.entries[i].value.shape() != value.shape() {
            return Err(Error::shape(
                "ParamStore::set",
                format!("{name}: {:?} vs {:?}", self.entries[i].value.shape(), value.shape()),
            ));
        }
        self.entries[i].value = value;
        Ok(())
    }

    pub fn decays(&self, i: usize) -> bool {
        self.entries[i].decay
    }

    pub fn is_frozen(&self, i: usize) -> bool {
        self.entries[i].frozen
    }

    /// Freezes or unfreezes every parameter whose name starts with `prefix`.
    pub fn set_frozen_prefix(&mut self, prefix: &str, frozen: bool) {
        for e in &mut self.entries {
            if e.name.starts_with(prefix) {
                e.frozen = frozen;
            }
        }
    }

    /// Total number of scalar entries across parameters matching `filter`.
    pub fn count_where(&self, filter: impl Fn(&str) -> bool) -> usize {
        self.entries.iter().filter(|e| filter(&e.name)).map(|e| e.value.len()).sum()
    }

    /// Puts every parameter on `tape`. Frozen parameters enter as constants.
    pub fn bind(&self, tape: &mut Tape) -> ParamVars {
        let vars = self
            .entries
            .iter()
            .map(|e| {
                if e.frozen {
                    tape.constant(e.value.clone())
                } else {
                    tape.leaf(e.value.clone())
                }
            })
            .collect();
        ParamVars {
            vars,
            index: self.index.clone(),
        }
    }

    /// Same as [`bind`](Self::bind) but every parameter is a constant.
    pub fn bind_constant(&self, tape: &mut Tape) -> ParamVars {
        let vars = self.entries.iter().map(|e| tape.constant(e.value.clone())).collect();
        ParamVars {
            vars,
            index: self.index.clone(),
        }
    }
}

/// Tape handles for a bound [`ParamStore`].
pub struct ParamVars {
    vars: Vec<Var>,
    index: HashMap<String, usize>,
}

impl ParamVars {
    pub fn get(&self, name: &str) -> Var {
        match self.index.get(name) {
            Some(&i) => self.vars[i],
            None => panic!("parameter {name} is not bound"),
        }
    }

    pub fn try_get(&self, name: &str) -> Option<Var> {
        self.index.get(name).map(|&i| self.vars[i])
    }

    pub fn at(&self, i: usize) -> Var {
        self.vars[i]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn duplicate_names_rejected() {
        let mut p = ParamStore::new();
        p.insert("w", Matrix::zeros(1, 1), true).unwrap();
        assert!(p.insert("w", Matrix::zeros(1, 1), true).is_err());
    }

    #[test]
    fn set_checks_shape() {
        let mut p = ParamStore::new();
        p.insert("w", Matrix::zeros(2, 2), true).unwrap();
        assert!(p.set("w", Matrix::zeros(2, 3)).is_err());
        assert!(p.set("w", Matrix::identity(2)).is_ok());
    }
}
