use crate::error::{contract_err, Result};
use crate::tensor::{Tape, Tensor, Var};

/// Named parameter tensors in a fixed order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    entries: Vec<(String, Tensor)>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, value: Tensor) {
        self.entries.push((name.into(), value));
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.entries.iter_mut().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.entries.iter_mut().map(|(n, t)| (n.as_str(), t))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn param_count(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.numel()).sum()
    }

    /// Replaces every tensor by the same-named, same-shaped entry of `other`.
    pub fn load_from(&mut self, other: &ParamStore) -> Result<()> {
        if other.len() != self.len() {
            return Err(contract_err!("expected {} parameter tensors, got {}", self.len(), other.len()));
        }
        for (name, t) in self.entries.iter_mut() {
            let src = other.get(name).ok_or_else(|| contract_err!("missing parameter {name}"))?;
            if src.shape() != t.shape() {
                return Err(contract_err!("parameter {name}: expected shape {}, got {}", t.shape(), src.shape()));
            }
            *t = src.clone();
        }
        Ok(())
    }
}

/// Tape handles for a parameter store.
#[derive(Clone, Debug, Default)]
pub struct Bound {
    vars: Vec<(String, Var)>,
}

impl Bound {
    pub fn bind(store: &ParamStore, tape: &mut Tape, trainable: bool) -> Bound {
        let mut b = Bound::default();
        b.extend(store, tape, trainable);
        b
    }

    pub fn extend(&mut self, store: &ParamStore, tape: &mut Tape, trainable: bool) {
        for (name, t) in store.iter() {
            let v = tape.leaf(t.clone(), trainable);
            self.vars.push((name.to_string(), v));
        }
    }

    pub fn var(&self, name: &str) -> Result<Var> {
        self.vars
            .iter()
            .find(|(n, _)| n == name)
            .map(|&(_, v)| v)
            .ok_or_else(|| contract_err!("parameter {name} is not bound"))
    }

    /// Weight and bias handles of the convolution `name`.
    pub fn conv(&self, name: &str) -> Result<(Var, Var)> {
        Ok((self.var(&format!("{name}.weight"))?, self.var(&format!("{name}.bias"))?))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Var)> {
        self.vars.iter().map(|(n, v)| (n.as_str(), *v))
    }
}
