use rand::Rng;
use serde::{Deserialize, Serialize};

use super::graph::{Graph, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Index of a tensor inside a [`ParamSet`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Ordered, named collection of trainable tensors.
///
/// Registration order is the iteration order for optimizers and for
/// persistence, so two sets built by the same construction code line up.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        self.names.push(name.into());
        self.tensors.push(value);
        ParamId(self.tensors.len() - 1)
    }

    /// Weight matrix `[fan_in, fan_out]` drawn uniformly in `±1/sqrt(fan_in)`.
    pub fn weight<R: Rng + ?Sized>(
        &mut self,
        name: impl Into<String>,
        fan_in: usize,
        fan_out: usize,
        rng: &mut R,
    ) -> ParamId {
        let t = Tensor::uniform_init(&[fan_in, fan_out], fan_in, rng);
        self.register(name, t)
    }

    /// Bias row `[1, width]` drawn with the fan-in of its layer.
    pub fn bias<R: Rng + ?Sized>(
        &mut self,
        name: impl Into<String>,
        fan_in: usize,
        width: usize,
        rng: &mut R,
    ) -> ParamId {
        let t = Tensor::uniform_init(&[1, width], fan_in, rng);
        self.register(name, t)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn numel(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    /// Overwrite values from `(name, tensor)` pairs; every parameter must be
    /// present with the registered shape.
    pub fn load<'a>(&mut self, entries: impl IntoIterator<Item = (&'a str, &'a Tensor)>) -> Result<()> {
        let mut seen = vec![false; self.len()];
        for (name, value) in entries {
            let idx = self
                .names
                .iter()
                .position(|n| n == name)
                .ok_or_else(|| Error::Format(format!("unknown parameter `{name}`")))?;
            if self.tensors[idx].shape() != value.shape() {
                return Err(Error::ShapeMismatch {
                    op: "load parameter",
                    left: self.tensors[idx].shape().to_vec(),
                    right: value.shape().to_vec(),
                });
            }
            self.tensors[idx] = value.clone();
            seen[idx] = true;
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(Error::Format(format!(
                "missing parameter `{}`",
                self.names[missing]
            )));
        }
        Ok(())
    }

    /// Record every parameter as a tracked leaf of `g`.
    pub fn bind(&self, g: &mut Graph) -> Bound {
        Bound(self.tensors.iter().map(|t| g.param(t.clone())).collect())
    }

    /// Record every parameter as a constant leaf of `g` (inference).
    pub fn bind_frozen(&self, g: &mut Graph) -> Bound {
        Bound(self.tensors.iter().map(|t| g.constant(t.clone())).collect())
    }
}

/// Graph handles for a [`ParamSet`] within one recording.
#[derive(Clone, Debug)]
pub struct Bound(Vec<Var>);

impl Bound {
    /// Wrap leaves that were recorded in registration order.
    pub fn from_vars(vars: Vec<Var>) -> Self {
        Self(vars)
    }

    pub fn var(&self, id: ParamId) -> Var {
        self.0[id.0]
    }

    /// Gradients in registration order.
    pub fn grads(&self, g: &Graph) -> Vec<Tensor> {
        self.0.iter().map(|&v| g.grad(v)).collect()
    }
}
