use std::collections::BTreeMap;
use std::ops::{Deref, DerefMut};

use crate::error::{Error, Result};

use super::tape::{Tape, Var};
use super::tensor::ParamSet;

/// A tape plus lazily bound parameters drawn from one or more [`ParamSet`]s.
///
/// Parameters are recorded the first time a forward pass asks for them, so
/// parameters a particular configuration never touches stay off the tape.
pub struct Session<'p> {
    tape: Tape,
    sets: Vec<&'p ParamSet>,
    bound: BTreeMap<String, Var>,
}

impl<'p> Session<'p> {
    pub fn new(sets: &[&'p ParamSet]) -> Self {
        Self { tape: Tape::new(), sets: sets.to_vec(), bound: BTreeMap::new() }
    }

    pub fn param(&mut self, name: &str) -> Result<Var> {
        if let Some(&v) = self.bound.get(name) {
            return Ok(v);
        }
        let t = self
            .sets
            .iter()
            .find_map(|s| s.get(name))
            .ok_or_else(|| Error::Contract(format!("unknown parameter `{name}`")))?;
        let v = self.tape.leaf(t);
        self.bound.insert(name.to_string(), v);
        Ok(v)
    }

    /// Runs backward from `loss` and returns its value with the gradients of every
    /// bound trainable parameter, keyed by name.
    pub fn backward(mut self, loss: Var) -> Result<(f64, BTreeMap<String, Vec<f64>>)> {
        let value = self.tape.scalar_value(loss);
        self.tape.backward(loss)?;
        let mut grads = BTreeMap::new();
        for (name, v) in &self.bound {
            let trainable = self.sets.iter().find_map(|s| s.get(name)).is_some_and(|t| t.requires_grad);
            if !trainable {
                continue;
            }
            let g = match self.tape.grad(*v) {
                Some(g) => g.to_vec(),
                // bound but not on the path to the loss
                None => vec![0.0; self.tape.value(*v).len()],
            };
            grads.insert(name.clone(), g);
        }
        Ok((value, grads))
    }
}

impl Deref for Session<'_> {
    type Target = Tape;
    fn deref(&self) -> &Tape {
        &self.tape
    }
}

impl DerefMut for Session<'_> {
    fn deref_mut(&mut self) -> &mut Tape {
        &mut self.tape
    }
}
