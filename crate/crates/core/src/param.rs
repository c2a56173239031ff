use std::collections::HashMap;
use std::hash::{Hash, Hasher};

use crate::error::{contract, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Index of a parameter inside a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// A named trainable tensor together with its accumulated gradient.
#[derive(Clone, Debug)]
pub struct Param<T> {
    pub name: String,
    pub value: Tensor<T>,
    pub grad: Option<Tensor<T>>,
}

/// Ordered collection of named parameters.
///
/// Insertion order is the canonical order used by checkpoints, optimisers
/// and gradient reduction.
#[derive(Clone, Debug, Default)]
pub struct ParamStore<T> {
    params: Vec<Param<T>>,
    by_name: HashMap<String, ParamId>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            params: Vec::new(),
            by_name: HashMap::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<T>) -> Result<ParamId> {
        let name = name.into();
        if self.by_name.contains_key(&name) {
            return Err(contract(format!("duplicate parameter name {name}")));
        }
        let id = ParamId(self.params.len());
        self.by_name.insert(name.clone(), id);
        self.params.push(Param {
            name,
            value,
            grad: None,
        });
        Ok(id)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Param<T> {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param<T> {
        &mut self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor<T> {
        &self.params[id.0].value
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param<T>)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    /// Parameter ids whose name starts with `prefix`.
    pub fn ids_with_prefix<'a>(&'a self, prefix: &'a str) -> impl Iterator<Item = ParamId> + 'a {
        self.iter()
            .filter(move |(_, p)| p.name.starts_with(prefix))
            .map(|(id, _)| id)
    }

    /// Total number of scalars across all parameters.
    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad = None;
        }
    }

    /// Adds a gradient buffer into the stored gradients. Repeated calls
    /// accumulate until [`ParamStore::zero_grad`].
    pub fn accumulate(&mut self, grads: &GradBuffer<T>) -> Result<()> {
        if grads.slots.len() != self.params.len() {
            return Err(contract("gradient buffer does not match the parameter store"));
        }
        for (p, g) in self.params.iter_mut().zip(&grads.slots) {
            if let Some(g) = g {
                match &mut p.grad {
                    Some(acc) => acc.add_assign(g)?,
                    None => p.grad = Some(g.clone()),
                }
            }
        }
        Ok(())
    }

    /// Order-sensitive fingerprint over the exact bit patterns of every value.
    pub fn checksum(&self) -> u64 {
        let mut h = std::collections::hash_map::DefaultHasher::new();
        for p in &self.params {
            p.name.hash(&mut h);
            p.value.shape().hash(&mut h);
            for v in p.value.data() {
                v.as_f64().to_bits().hash(&mut h);
            }
        }
        h.finish()
    }
}

/// Per-parameter gradients produced by one backward pass.
#[derive(Clone, Debug)]
pub struct GradBuffer<T> {
    pub(crate) slots: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> GradBuffer<T> {
    pub fn empty(len: usize) -> Self {
        Self { slots: vec![None; len] }
    }

    pub fn get(&self, id: ParamId) -> Option<&Tensor<T>> {
        self.slots.get(id.0).and_then(|s| s.as_ref())
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    /// Element-wise sum; `self` is the left operand so summation order is
    /// fixed by the caller.
    pub fn merge(&mut self, other: &GradBuffer<T>) -> Result<()> {
        if self.slots.len() != other.slots.len() {
            return Err(contract("gradient buffers of different lengths"));
        }
        for (a, b) in self.slots.iter_mut().zip(&other.slots) {
            if let Some(b) = b {
                match a {
                    Some(a) => a.add_assign(b)?,
                    None => *a = Some(b.clone()),
                }
            }
        }
        Ok(())
    }

    pub fn scale(&mut self, factor: T) {
        for t in self.slots.iter_mut().flatten() {
            for v in t.data_mut() {
                *v *= factor;
            }
        }
    }

    pub fn all_finite(&self) -> bool {
        self.slots.iter().flatten().all(|t| t.all_finite())
    }
}
