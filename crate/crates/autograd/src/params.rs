use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Result, TensorError};
use crate::tape::Gradients;
use crate::tensor::Tensor;

static NEXT_STORE: AtomicU64 = AtomicU64::new(1);

/// Handle to a trainable tensor inside a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
struct Param {
    name: String,
    value: Tensor,
    grad: Vec<f64>,
}

/// Named trainable tensors with their accumulated gradients.
///
/// Gradients accumulate with sum semantics; callers zero them between steps.
#[derive(Debug)]
pub struct ParamStore {
    uid: u64,
    params: Vec<Param>,
    by_name: HashMap<String, ParamId>,
}

impl Default for ParamStore {
    fn default() -> Self {
        Self::new()
    }
}

impl Clone for ParamStore {
    fn clone(&self) -> Self {
        let mut out = ParamStore::new();
        for p in &self.params {
            let id = out.add(p.name.clone(), p.value.clone());
            out.params[id.0].grad.copy_from_slice(&p.grad);
        }
        out
    }
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore {
            uid: NEXT_STORE.fetch_add(1, Ordering::Relaxed),
            params: Vec::new(),
            by_name: HashMap::new(),
        }
    }

    pub(crate) fn uid(&self) -> u64 {
        self.uid
    }

    /// Registers a new parameter. Panics if the name is already taken.
    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        let name = name.into();
        assert!(!self.by_name.contains_key(&name), "duplicate parameter name `{name}`");
        let id = ParamId(self.params.len());
        let grad = vec![0.0; value.len()];
        self.by_name.insert(name.clone(), id);
        self.params.push(Param { name, value, grad });
        id
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn id(&self, name: &str) -> Result<ParamId> {
        self.by_name.get(name).copied().ok_or_else(|| TensorError::UnknownParam(name.to_string()))
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.params[id.0].name
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.params[id.0].value
    }

    /// Replaces a parameter's value, keeping its shape.
    pub fn set(&mut self, id: ParamId, value: Tensor) -> Result<()> {
        let p = &mut self.params[id.0];
        if p.value.shape() != value.shape() {
            return Err(TensorError::ShapeMismatch {
                op: "set",
                lhs: p.value.shape().to_vec(),
                rhs: value.shape().to_vec(),
            });
        }
        p.value = value;
        Ok(())
    }

    pub fn grad(&self, id: ParamId) -> &[f64] {
        &self.params[id.0].grad
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.iter_mut().for_each(|g| *g = 0.0);
        }
    }

    /// Adds the parameter gradients found in `grads` to the stored buffers.
    pub fn accumulate(&mut self, grads: &Gradients) {
        for (id, g) in grads.param_grads(self.uid) {
            for (acc, v) in self.params[id.0].grad.iter_mut().zip(g) {
                *acc += v;
            }
        }
    }

    /// Total number of scalar entries across all parameters.
    pub fn numel(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub(crate) fn parts_mut(&mut self, id: ParamId) -> (&mut Tensor, &[f64]) {
        let p = &mut self.params[id.0];
        (&mut p.value, &p.grad)
    }
}
