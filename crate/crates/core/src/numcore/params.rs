use std::sync::atomic::{AtomicU64, Ordering};

use indexmap::IndexMap;
use rand::Rng;

use super::Tensor;
use crate::error::{Error, Result};

static NEXT_UID: AtomicU64 = AtomicU64::new(1);

fn fresh_uid() -> u64 {
    NEXT_UID.fetch_add(1, Ordering::Relaxed)
}

/// Named learnable tensors with a parallel gradient buffer.
///
/// Entry order is insertion order and is part of the checkpoint format.
pub struct ParamSet {
    uid: u64,
    index: IndexMap<String, usize>,
    values: Vec<Tensor>,
    grads: Vec<Tensor>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self {
            uid: fresh_uid(),
            index: IndexMap::new(),
            values: Vec::new(),
            grads: Vec::new(),
        }
    }

    /// Identity used by the tape to check that gradients are written back
    /// into the set that produced the parameter leaves.
    pub(crate) fn uid(&self) -> u64 {
        self.uid
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) -> Result<()> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::invalid(format!("duplicate parameter `{name}`")));
        }
        self.index.insert(name, self.values.len());
        self.grads.push(Tensor::zeros(value.shape()));
        self.values.push(value);
        Ok(())
    }

    /// Adds a `fan_in x fan_out` weight drawn from He-uniform
    /// `U(-sqrt(6/fan_in), sqrt(6/fan_in))` and a zero bias.
    pub fn insert_linear<R: Rng + ?Sized>(
        &mut self,
        prefix: &str,
        fan_in: usize,
        fan_out: usize,
        gain: f64,
        rng: &mut R,
    ) -> Result<()> {
        let bound = gain * (6.0 / fan_in as f64).sqrt();
        let w: Vec<f64> = (0..fan_in * fan_out)
            .map(|_| rng.random_range(-bound..=bound))
            .collect();
        self.insert(format!("{prefix}.w"), Tensor::matrix(fan_in, fan_out, w)?)?;
        self.insert(format!("{prefix}.b"), Tensor::zeros(&[1, fan_out]))
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn contains(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }

    pub fn position(&self, name: &str) -> Result<usize> {
        self.index
            .get(name)
            .copied()
            .ok_or_else(|| Error::UnknownParam(name.to_string()))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.index.keys().map(String::as_str)
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        Ok(&self.values[self.position(name)?])
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        let i = self.position(name)?;
        Ok(&mut self.values[i])
    }

    pub fn grad(&self, name: &str) -> Result<&Tensor> {
        Ok(&self.grads[self.position(name)?])
    }

    pub(crate) fn value_at(&self, i: usize) -> &Tensor {
        &self.values[i]
    }

    pub(crate) fn value_at_mut(&mut self, i: usize) -> &mut Tensor {
        &mut self.values[i]
    }

    pub(crate) fn grad_at(&self, i: usize) -> &Tensor {
        &self.grads[i]
    }

    pub(crate) fn grad_at_mut(&mut self, i: usize) -> &mut Tensor {
        &mut self.grads[i]
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.index.keys().map(String::as_str).zip(&self.values)
    }

    pub fn iter_grads(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.index.keys().map(String::as_str).zip(&self.grads)
    }

    pub fn zero_grads(&mut self) {
        for g in &mut self.grads {
            g.fill(0.0);
        }
    }

    pub fn grads_all_zero(&self) -> bool {
        self.grads.iter().all(|g| g.data().iter().all(|&x| x == 0.0))
    }

    pub fn grad_norm(&self) -> f64 {
        self.grads.iter().map(Tensor::sq_norm).sum::<f64>().sqrt()
    }

    /// Rescales every gradient so the global L2 norm is at most `max_norm`.
    /// Returns the norm before clipping.
    pub fn clip_grad_norm(&mut self, max_norm: f64) -> f64 {
        let norm = self.grad_norm();
        if norm > max_norm && norm > 0.0 {
            let scale = max_norm / norm;
            for g in &mut self.grads {
                g.data_mut().iter_mut().for_each(|x| *x *= scale);
            }
        }
        norm
    }

    /// Copies the entries whose names start with any of `prefixes` into a
    /// new set (values only, zero grads).
    pub fn subset(&self, prefixes: &[&str]) -> Result<ParamSet> {
        let mut out = ParamSet::new();
        for (name, value) in self.iter() {
            if prefixes.iter().any(|p| name.starts_with(p)) {
                out.insert(name, value.clone())?;
            }
        }
        Ok(out)
    }

    /// Flat view of every parameter value, in entry order.
    pub fn flatten(&self) -> Vec<f64> {
        self.values.iter().flat_map(|t| t.data().iter().copied()).collect()
    }

    pub fn flatten_grads(&self) -> Vec<f64> {
        self.grads.iter().flat_map(|t| t.data().iter().copied()).collect()
    }

    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(Tensor::len).sum()
    }

    /// Returns a mutable reference to the scalar at flat index `i`.
    pub fn scalar_mut(&mut self, mut i: usize) -> &mut f64 {
        for t in &mut self.values {
            if i < t.len() {
                return &mut t.data_mut()[i];
            }
            i -= t.len();
        }
        panic!("flat parameter index out of range");
    }
}

impl Default for ParamSet {
    fn default() -> Self {
        Self::new()
    }
}

impl Clone for ParamSet {
    fn clone(&self) -> Self {
        Self {
            uid: fresh_uid(),
            index: self.index.clone(),
            values: self.values.clone(),
            grads: self.grads.clone(),
        }
    }
}

impl PartialEq for ParamSet {
    fn eq(&self, other: &Self) -> bool {
        self.index.keys().eq(other.index.keys()) && self.values == other.values
    }
}

impl std::fmt::Debug for ParamSet {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_map().entries(self.iter().map(|(n, t)| (n, t.shape()))).finish()
    }
}
