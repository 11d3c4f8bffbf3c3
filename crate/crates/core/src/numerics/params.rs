use std::sync::atomic::{AtomicU64, Ordering};

use sha2::{Digest, Sha256};

use super::Tensor;
use crate::error::{Error, Result};

static NEXT_SET_ID: AtomicU64 = AtomicU64::new(1);

fn fresh_id() -> u64 {
    NEXT_SET_ID.fetch_add(1, Ordering::Relaxed)
}

/// Running second-moment accumulators kept per parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Accumulators {
    pub sq_grad: Vec<f64>,
    pub sq_update: Vec<f64>,
}

impl Accumulators {
    pub fn zeros(n: usize) -> Self {
        Accumulators { sq_grad: vec![0.0; n], sq_update: vec![0.0; n] }
    }
}

/// A named group of trainable tensors owned by one layer or module.
///
/// Each set carries a process-unique id so a [`Tape`](super::Tape) can
/// tell which leaves belong to it. Cloning allocates a new id.
#[derive(Debug)]
pub struct ParamSet {
    id: u64,
    names: Vec<String>,
    tensors: Vec<Tensor>,
    state: Vec<Option<Accumulators>>,
}

impl Clone for ParamSet {
    fn clone(&self) -> Self {
        ParamSet {
            id: fresh_id(),
            names: self.names.clone(),
            tensors: self.tensors.clone(),
            state: self.state.clone(),
        }
    }
}

impl Default for ParamSet {
    fn default() -> Self {
        ParamSet::new()
    }
}

impl ParamSet {
    pub fn new() -> Self {
        ParamSet { id: fresh_id(), names: Vec::new(), tensors: Vec::new(), state: Vec::new() }
    }

    pub fn id(&self) -> u64 {
        self.id
    }

    /// Adds a trainable tensor and returns its index.
    pub fn push(&mut self, name: impl Into<String>, tensor: Tensor) -> usize {
        self.names.push(name.into());
        self.tensors.push(tensor.with_requires_grad(true));
        self.state.push(None);
        self.tensors.len() - 1
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, idx: usize) -> &Tensor {
        &self.tensors[idx]
    }

    pub fn get_mut(&mut self, idx: usize) -> &mut Tensor {
        &mut self.tensors[idx]
    }

    pub fn name(&self, idx: usize) -> &str {
        &self.names[idx]
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Excludes every tensor from optimizer updates; forward use is unaffected.
    pub fn freeze(&mut self) {
        self.tensors.iter_mut().for_each(|t| t.set_requires_grad(false));
    }

    pub fn unfreeze(&mut self) {
        self.tensors.iter_mut().for_each(|t| t.set_requires_grad(true));
    }

    pub fn is_frozen(&self) -> bool {
        self.tensors.iter().all(|t| !t.requires_grad())
    }

    pub fn zero_grads(&mut self) {
        self.tensors.iter_mut().for_each(Tensor::zero_grad);
    }

    pub fn has_grads(&self) -> bool {
        self.tensors.iter().any(|t| t.grad().is_some())
    }

    pub(crate) fn split_for_update(&mut self) -> (&mut [Tensor], &mut [Option<Accumulators>]) {
        (&mut self.tensors, &mut self.state)
    }

    pub fn accumulators(&self, idx: usize) -> Option<&Accumulators> {
        self.state[idx].as_ref()
    }

    pub fn reset_optimizer_state(&mut self) {
        self.state.iter_mut().for_each(|s| *s = None);
    }

    /// Overwrites values from `src` (same names and shapes); grads and
    /// optimizer state of `self` are cleared, its id and freeze flags kept.
    pub fn copy_from(&mut self, src: &ParamSet) -> Result<()> {
        if !self.same_layout(src) {
            return Err(Error::Config(format!(
                "parameter layouts differ: {:?} vs {:?}",
                self.layout(),
                src.layout()
            )));
        }
        for (dst, s) in self.tensors.iter_mut().zip(&src.tensors) {
            dst.data_mut().copy_from_slice(s.data());
            dst.zero_grad();
        }
        self.reset_optimizer_state();
        Ok(())
    }

    pub fn same_layout(&self, other: &ParamSet) -> bool {
        self.names == other.names
            && self.tensors.len() == other.tensors.len()
            && self.tensors.iter().zip(&other.tensors).all(|(a, b)| a.shape() == b.shape())
    }

    fn layout(&self) -> Vec<(String, Vec<usize>)> {
        self.iter().map(|(n, t)| (n.to_string(), t.shape().to_vec())).collect()
    }

    /// Feeds names, shapes and little-endian `f64` values into `hasher`.
    pub fn digest_into(&self, hasher: &mut Sha256) {
        for (name, t) in self.iter() {
            hasher.update(name.as_bytes());
            for d in t.shape() {
                hasher.update((*d as u64).to_le_bytes());
            }
            for v in t.data() {
                hasher.update(v.to_le_bytes());
            }
        }
    }

    pub fn sha256(&self) -> String {
        let mut h = Sha256::new();
        self.digest_into(&mut h);
        hex::encode(h.finalize())
    }

    pub fn flat_values(&self) -> Vec<f64> {
        self.tensors.iter().flat_map(|t| t.data().iter().copied()).collect()
    }

    pub fn squared_norm(&self) -> f64 {
        self.tensors.iter().flat_map(|t| t.data()).map(|v| v * v).sum()
    }
}

/// SHA-256 over several parameter sets in order.
pub fn sha256_of<'a>(sets: impl IntoIterator<Item = &'a ParamSet>) -> String {
    let mut h = Sha256::new();
    for s in sets {
        s.digest_into(&mut h);
    }
    hex::encode(h.finalize())
}
